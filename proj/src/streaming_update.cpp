#include "mmtta/streaming_update.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mmtta/errors.hpp"
#include "mmtta/kernels.hpp"

namespace mmtta {

RowMatrix HeadParams::logits(const RowMatrix& features) const {
  if (features.cols() != dim()) throw ContractViolation("HeadParams::logits: dim mismatch");
  RowMatrix out = features * weights.transpose();
  out.rowwise() += biases.transpose();
  return out;
}

PerspectiveBank init_from_head(const HeadParams& head, Perspective perspective) {
  if (head.biases.size() != head.num_classes()) {
    throw ContractViolation("init_from_head: bias count != class count");
  }
  if (!head.weights.allFinite() || !head.biases.allFinite()) {
    throw RejectedInput("init_from_head: non-finite head parameters");
  }
  const Index d = head.dim();
  const Index classes = head.num_classes();

  PerspectiveBank bank;
  bank.perspective = perspective;
  bank.dim = d;
  bank.num_classes = classes;
  bank.stats.assign(classes, SufficientStats(d));

  // log|I| = 0, so the half log-determinant term vanishes.
  Vector log_prior(classes);
  for (Index c = 0; c < classes; ++c) {
    log_prior[c] = head.biases[c] + 0.5 * head.weights.row(c).squaredNorm();
  }
  const Vector normalized = softmax(log_prior);

  bank.params.reserve(classes);
  for (Index c = 0; c < classes; ++c) {
    bank.params.push_back(ClassGaussian::make(normalized[c], log_prior[c],
                                              head.weights.row(c).transpose(),
                                              Matrix::Identity(d, d), static_cast<int>(c)));
  }
  return bank;
}

EmaState seed_ema(const PerspectiveBank& bank, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ContractViolation("seed_ema: alpha outside [0,1]");
  EmaState state;
  state.alpha = alpha;
  state.classes.reserve(bank.params.size());
  for (const ClassGaussian& g : bank.params) {
    state.classes.push_back(EmaClass{g.prior, g.mean, g.covariance});
  }
  return state;
}

PerspectiveModel init_model(const HeadParams& head, Perspective perspective, double alpha) {
  PerspectiveModel m;
  m.bank = init_from_head(head, perspective);
  m.ema = seed_ema(m.bank, alpha);
  return m;
}

std::vector<SufficientStats> batch_deltas(const RowMatrix& features, const RowMatrix& resp) {
  if (features.rows() != resp.rows()) {
    throw ContractViolation("batch_deltas: " + std::to_string(features.rows()) + " features vs " +
                            std::to_string(resp.rows()) + " responsibility rows");
  }
  if (!features.allFinite()) throw RejectedInput("batch_deltas: non-finite feature");
  for (Index i = 0; i < resp.rows(); ++i) {
    const auto row = resp.row(i);
    if (!row.allFinite() || (row.array() < 0.0).any() || std::abs(row.sum() - 1.0) > 1e-9) {
      throw RejectedBatch("batch_deltas: responsibility row " + std::to_string(i) +
                          " is not a distribution");
    }
  }
  return kernels::accumulate_deltas(features, resp);
}

std::vector<ClassEstimate> absorb_and_reestimate(PerspectiveBank& bank,
                                                 const std::vector<SufficientStats>& deltas,
                                                 const UpdateConfig& config) {
  if (static_cast<Index>(deltas.size()) != bank.num_classes) {
    throw ContractViolation("absorb_and_reestimate: delta count != class count");
  }
  for (Index c = 0; c < bank.num_classes; ++c) bank.stats[c] += deltas[c];

  double total = 0.0;
  for (const auto& s : bank.stats) total += s.count;

  std::vector<ClassEstimate> out(bank.num_classes);
  for (Index c = 0; c < bank.num_classes; ++c) {
    const SufficientStats& s = bank.stats[c];
    ClassEstimate& e = out[c];
    if (s.count < config.min_mean_mass) {
      e.status = ClassStatus::Hold;
      continue;
    }
    e.mle = *mle_from_stats(s, total);
    e.status = s.count < config.min_cov_count ? ClassStatus::MeanOnly : ClassStatus::Full;
  }
  return out;
}

EmaState ema_blend(const EmaState& previous, std::span<const ClassEstimate> estimates,
                   double prior_floor) {
  if (estimates.size() != previous.classes.size()) {
    throw ContractViolation("ema_blend: estimate count != class count");
  }
  const double a = previous.alpha;
  const double b = 1.0 - a;
  EmaState next = previous;
  for (std::size_t c = 0; c < estimates.size(); ++c) {
    const ClassEstimate& e = estimates[c];
    EmaClass& dst = next.classes[c];
    if (e.status == ClassStatus::Hold) continue;
    dst.prior = a * dst.prior + b * e.mle.prior;
    dst.mean = a * dst.mean + b * e.mle.mean;
    if (e.status == ClassStatus::Full) {
      dst.covariance = a * dst.covariance + b * e.mle.covariance;
      dst.covariance = 0.5 * (dst.covariance + dst.covariance.transpose()).eval();
    }
  }

  double sum = 0.0;
  for (const auto& k : next.classes) sum += k.prior;
  for (auto& k : next.classes) k.prior /= sum;

  // Pin classes below the floor at exactly the floor and rescale the rest into
  // the remaining mass. Rescaling shrinks the others, so repeat until stable.
  std::vector<bool> pinned(next.classes.size(), false);
  for (bool changed = true; changed;) {
    changed = false;
    double free_mass = 0.0;
    std::size_t n_pinned = 0;
    for (std::size_t c = 0; c < pinned.size(); ++c) {
      if (!pinned[c] && next.classes[c].prior < prior_floor) {
        pinned[c] = true;
        changed = true;
      }
      if (pinned[c]) ++n_pinned;
      else free_mass += next.classes[c].prior;
    }
    if (!changed) break;
    const double target = 1.0 - static_cast<double>(n_pinned) * prior_floor;
    for (std::size_t c = 0; c < pinned.size(); ++c) {
      if (pinned[c]) next.classes[c].prior = prior_floor;
      else next.classes[c].prior *= target / free_mass;
    }
  }
  return next;
}

std::vector<ClassGaussian> install_params(const std::vector<ClassGaussian>& previous,
                                          const EmaState& state,
                                          std::span<const ClassEstimate> estimates,
                                          double eps_shrink) {
  if (previous.size() != state.classes.size() || estimates.size() != state.classes.size()) {
    throw ContractViolation("install_params: class count mismatch");
  }
  std::vector<ClassGaussian> params = previous;
  for (std::size_t c = 0; c < state.classes.size(); ++c) {
    const EmaClass& k = state.classes[c];
    ClassGaussian& g = params[c];
    g.prior = k.prior;
    g.log_prior = std::log(k.prior);
    if (estimates[c].status == ClassStatus::Hold) continue;
    g.mean = k.mean;
    if (estimates[c].status != ClassStatus::Full) continue;
    ShrunkCovariance s = shrink_covariance(k.covariance, eps_shrink, static_cast<int>(c));
    g.covariance = std::move(s.covariance);
    g.chol = std::move(s.chol);
    g.log_det = s.log_det;
  }
  return params;
}

std::vector<ClassEstimate> update_model(PerspectiveModel& model, const RowMatrix& features,
                                        const RowMatrix& resp, const UpdateConfig& config) {
  if (features.cols() != model.bank.dim) {
    throw ContractViolation("update_model: feature dim != bank dim");
  }
  PerspectiveModel next = model;
  next.ema.alpha = config.alpha;
  const auto deltas = batch_deltas(features, resp);
  auto estimates = absorb_and_reestimate(next.bank, deltas, config);
  next.ema = ema_blend(next.ema, estimates, config.prior_floor);
  next.bank.params = install_params(next.bank.params, next.ema, estimates, config.eps_shrink);
  model = std::move(next);
  return estimates;
}

}  // namespace mmtta
