#include "mmtta/adaptation_engine.hpp"

#include <chrono>
#include <cmath>
#include <random>
#include <string>

#include "mmtta/errors.hpp"

namespace mmtta {
namespace {

constexpr double kStdFloor = 1e-6;
constexpr std::uint64_t kEncoderStream = 0x456e63;  // "Enc"

RowMatrix encode_modality(const RowMatrix& x, const Matrix& proj, const Vector& scale,
                          const Vector& shift, RowMatrix& standardized) {
  const RowMatrix h = x * proj.transpose();
  standardized.resize(h.rows(), h.cols());
  for (Index i = 0; i < h.rows(); ++i) {
    const Eigen::ArrayXd centered = h.row(i).array() - h.row(i).mean();
    const double sd = std::sqrt(centered.square().mean());
    standardized.row(i) = (centered / (sd + kStdFloor)).matrix().transpose();
  }
  RowMatrix z = (standardized.array().rowwise() * scale.transpose().array()).matrix();
  z.rowwise() += shift.transpose();
  return z;
}

void require_finite(double value, const char* name) {
  if (!std::isfinite(value)) throw NumericalError(std::string("non-finite ") + name);
}

Matrix normal_matrix(std::mt19937_64& rng, Index rows, Index cols) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Matrix m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
  return m;
}

}  // namespace

Index ToyEncoderParams::adaptable_size() const {
  return fusion.size() + ln_scale_m1.size() + ln_shift_m1.size() + ln_scale_m2.size() +
         ln_shift_m2.size();
}

ParamGrads ParamGrads::zeros_like(const ToyEncoderParams& p) {
  return ParamGrads{Matrix::Zero(p.fusion.rows(), p.fusion.cols()),
                    Vector::Zero(p.ln_scale_m1.size()), Vector::Zero(p.ln_shift_m1.size()),
                    Vector::Zero(p.ln_scale_m2.size()), Vector::Zero(p.ln_shift_m2.size())};
}

ParamGrads& ParamGrads::operator+=(const ParamGrads& o) {
  fusion += o.fusion;
  ln_scale_m1 += o.ln_scale_m1;
  ln_shift_m1 += o.ln_shift_m1;
  ln_scale_m2 += o.ln_scale_m2;
  ln_shift_m2 += o.ln_shift_m2;
  return *this;
}

bool ParamGrads::all_finite() const {
  return fusion.allFinite() && ln_scale_m1.allFinite() && ln_shift_m1.allFinite() &&
         ln_scale_m2.allFinite() && ln_shift_m2.allFinite();
}

Vector pack_adaptable(const ToyEncoderParams& p) {
  Vector flat(p.adaptable_size());
  flat << p.fusion.reshaped(), p.ln_scale_m1, p.ln_shift_m1, p.ln_scale_m2, p.ln_shift_m2;
  return flat;
}

void unpack_adaptable(const Vector& flat, ToyEncoderParams& p) {
  if (flat.size() != p.adaptable_size()) throw ContractViolation("unpack_adaptable: size");
  Index at = 0;
  auto take = [&](auto& dst) {
    dst.reshaped() = flat.segment(at, dst.size());
    at += dst.size();
  };
  take(p.fusion);
  take(p.ln_scale_m1);
  take(p.ln_shift_m1);
  take(p.ln_scale_m2);
  take(p.ln_shift_m2);
}

Vector pack_grads(const ParamGrads& g) {
  Vector flat(g.fusion.size() + g.ln_scale_m1.size() + g.ln_shift_m1.size() +
              g.ln_scale_m2.size() + g.ln_shift_m2.size());
  flat << g.fusion.reshaped(), g.ln_scale_m1, g.ln_shift_m1, g.ln_scale_m2, g.ln_shift_m2;
  return flat;
}

AdamState make_adam(Index size, double lr) {
  AdamState s;
  s.lr = lr;
  s.m = Vector::Zero(size);
  s.v = Vector::Zero(size);
  return s;
}

void adam_update(AdamState& s, Vector& params, const Vector& grad) {
  if (params.size() != grad.size() || s.m.size() != grad.size()) {
    throw ContractViolation("adam_update: size mismatch");
  }
  ++s.step;
  s.m = s.beta1 * s.m + (1.0 - s.beta1) * grad;
  s.v = s.beta2 * s.v + (1.0 - s.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  params.array() -= s.lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + s.eps);
}

void AdaptationConfig::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ValidationError(name, "must be > 0");
  };
  auto nonneg = [](double v, const char* name) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ValidationError(name, "must be >= 0");
  };
  if (batch_size < 1) throw ValidationError("batch_size", "must be >= 1");
  nonneg(lambda, "lambda");
  nonneg(w_c, "w_c");
  nonneg(w_g, "w_g");
  nonneg(w_ra, "w_ra");
  nonneg(w_bal, "w_bal");
  if (!(alpha >= 0.0 && alpha < 1.0)) throw ValidationError("alpha", "must be in [0, 1)");
  positive(tau, "tau");
  positive(eps_shrink, "eps_shrink");
  nonneg(lr, "lr");
  if (latent_dim < 1) throw ValidationError("latent_dim", "must be >= 1");
  nonneg(projection_jitter, "projection_jitter");
  if (source_samples < 1) throw ValidationError("source_samples", "must be >= 1");
  if (prefit_epochs < 0) throw ValidationError("prefit_epochs", "must be >= 0");
  positive(prefit_lr, "prefit_lr");
}

UpdateConfig AdaptationConfig::update_config() const {
  UpdateConfig u;
  u.alpha = alpha;
  u.eps_shrink = eps_shrink;
  return u;
}

BatchView forward(const RowMatrix& x_m1, const RowMatrix& x_m2, const ToyEncoderParams& params,
                  ForwardCache* cache) {
  if (x_m1.rows() != x_m2.rows()) throw ContractViolation("forward: modality batch sizes differ");
  if (x_m1.cols() != params.proj_m1.cols() || x_m2.cols() != params.proj_m2.cols()) {
    throw ContractViolation("forward: raw dimension does not match projection");
  }
  if (!x_m1.allFinite() || !x_m2.allFinite()) throw RejectedInput("forward: non-finite input");

  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  BatchView v;
  v.z_m1 = encode_modality(x_m1, params.proj_m1, params.ln_scale_m1, params.ln_shift_m1,
                           c.standardized_m1);
  v.z_m2 = encode_modality(x_m2, params.proj_m2, params.ln_scale_m2, params.ln_shift_m2,
                           c.standardized_m2);
  c.concat.resize(v.z_m1.rows(), v.z_m1.cols() + v.z_m2.cols());
  c.concat << v.z_m1, v.z_m2;
  v.z_fused = c.concat * params.fusion.transpose();
  v.source_logits = params.head.logits(v.z_fused);
  v.src_posterior = softmax_rows(v.source_logits);
  return v;
}

void score_views(BatchView& view, const ModelSet& models) {
  const RowMatrix* features[3] = {&view.z_m1, &view.z_m2, &view.z_fused};
  for (Perspective p : kAllPerspectives) {
    const int k = static_cast<int>(p);
    view.gda_scores[k] = batch_scores(*features[k], models[k].bank);
    view.posteriors[k] = softmax_rows(view.gda_scores[k]);
  }
}

ReliabilityPartition partition_for(const BatchView& view, const ToyEncoderParams& params,
                                   const AdaptationConfig& config) {
  if (config.skl_posteriors == SklPosteriors::Gda) return reliability_partition(view);
  return reliability_partition(softmax_rows(params.head.logits(view.z_m1)),
                               softmax_rows(params.head.logits(view.z_m2)),
                               view.posterior(Perspective::Fused));
}

RoutedGradients routed_gradients(const BatchView& view, const ForwardCache& cache,
                                 const ReliabilityPartition& partition,
                                 const ToyEncoderParams& params, const AdaptationConfig& config) {
  RoutedGradients out;
  for (auto& g : out.by_loss) g = ParamGrads::zeros_like(params);
  out.total = ParamGrads::zeros_like(params);
  out.partition = partition;

  const LossAndGrad ra = confidence_reg(view.src_posterior);
  const LossAndGrad bal = balance_reg(view.src_posterior, config.bal_sign);
  const LossAndGrad align = alignment_loss(view.posterior(Perspective::Fused), view.source_logits);
  const ContrastiveResult con = one_sided_infonce(view.z_m1, view.z_m2, partition, config.tau);

  LossValues& lv = out.losses;
  lv.ra = ra.value;
  lv.bal = bal.value;
  lv.c = con.loss;
  lv.g = align.value;
  lv.total = config.w_ra * lv.ra + config.w_bal * lv.bal + config.w_c * lv.c + config.w_g * lv.g;
  require_finite(lv.ra, "loss_ra");
  require_finite(lv.bal, "loss_bal");
  require_finite(lv.c, "loss_c");
  require_finite(lv.g, "loss_g");

  // logits = head(fusion * concat): dL/dfusion = W_head^T G^T concat
  auto to_fusion = [&](const RowMatrix& grad_logits, double weight) {
    const RowMatrix grad_fused = grad_logits * params.head.weights;
    return Matrix(weight * (grad_fused.transpose() * cache.concat));
  };
  if (config.w_ra != 0.0) out.by_loss[kLossRa].fusion = to_fusion(ra.grad_logits, config.w_ra);
  if (config.w_bal != 0.0) out.by_loss[kLossBal].fusion = to_fusion(bal.grad_logits, config.w_bal);
  if (config.w_g != 0.0) out.by_loss[kLossG].fusion = to_fusion(align.grad_logits, config.w_g);

  if (config.w_c != 0.0) {
    ParamGrads& gc = out.by_loss[kLossC];
    gc.ln_scale_m1 = config.w_c * (con.grad_m1.cwiseProduct(cache.standardized_m1)).colwise().sum().transpose();
    gc.ln_shift_m1 = config.w_c * con.grad_m1.colwise().sum().transpose();
    gc.ln_scale_m2 = config.w_c * (con.grad_m2.cwiseProduct(cache.standardized_m2)).colwise().sum().transpose();
    gc.ln_shift_m2 = config.w_c * con.grad_m2.colwise().sum().transpose();
  }

  static constexpr const char* kGradNames[] = {"gradient of loss_ra", "gradient of loss_bal",
                                               "gradient of loss_c", "gradient of loss_g"};
  for (int k = 0; k < 4; ++k) {
    if (!out.by_loss[k].all_finite()) throw NumericalError(std::string("non-finite ") + kGradNames[k]);
    out.total += out.by_loss[k];
  }
  return out;
}

RawBatch make_batch(const std::vector<Sample>& samples) {
  RawBatch b;
  if (samples.empty()) return b;
  const Index d1 = samples.front().x_m1.size();
  const Index d2 = samples.front().x_m2.size();
  const Index n = static_cast<Index>(samples.size());
  b.x_m1.resize(n, d1);
  b.x_m2.resize(n, d2);
  b.labels.reserve(samples.size());
  for (Index i = 0; i < n; ++i) {
    const Sample& s = samples[i];
    if (s.x_m1.size() != d1 || s.x_m2.size() != d2) {
      throw ContractViolation("make_batch: ragged sample dimensions");
    }
    b.x_m1.row(i) = s.x_m1.transpose();
    b.x_m2.row(i) = s.x_m2.transpose();
    b.labels.push_back(s.label);
  }
  return b;
}

double BatchMetrics::acc_fused() const { return size ? double(correct_fused) / double(size) : 0.0; }
double BatchMetrics::acc_source() const { return size ? double(correct_source) / double(size) : 0.0; }
double BatchMetrics::acc_gda() const { return size ? double(correct_gda) / double(size) : 0.0; }

BatchMetrics step(const RawBatch& batch, AdaptationState& state, const AdaptationConfig& config,
                  std::uint64_t batch_index) {
  ForwardCache cache;
  BatchView view = forward(batch.x_m1, batch.x_m2, state.params, &cache);
  score_views(view, state.models);

  // Bank updates use the pre-step forward pass; scoring above already used
  // the previous banks.
  const RowMatrix resp =
      config.responsibility_source == ResponsibilitySource::Source
          ? view.src_posterior
          : softmax_rows(fused_logits(view.source_logits, view.scores(Perspective::Fused),
                                      config.lambda));
  const UpdateConfig update = config.update_config();
  ModelSet models = state.models;
  update_model(models[0], view.z_m1, resp, update);
  update_model(models[1], view.z_m2, resp, update);
  update_model(models[2], view.z_fused, resp, update);

  const ReliabilityPartition partition = partition_for(view, state.params, config);
  const RoutedGradients routed = routed_gradients(view, cache, partition, state.params, config);

  Vector flat = pack_adaptable(state.params);
  adam_update(state.adam, flat, pack_grads(routed.total));
  if (!flat.allFinite()) throw NumericalError("non-finite parameters after Adam step");
  unpack_adaptable(flat, state.params);
  state.models = std::move(models);

  BatchMetrics m;
  m.batch = batch_index;
  m.size = static_cast<std::uint64_t>(view.size());
  m.losses = routed.losses;
  m.n_m1 = partition.set_m1.size();
  m.n_m2 = partition.set_m2.size();
  if (!batch.labels.empty()) {
    const auto fused = argmax_rows(fused_logits(view.source_logits, view.scores(Perspective::Fused),
                                                config.lambda));
    const auto source = argmax_rows(view.source_logits);
    const auto gda = argmax_rows(view.scores(Perspective::Fused));
    for (std::size_t i = 0; i < batch.labels.size(); ++i) {
      m.correct_fused += fused[i] == batch.labels[i];
      m.correct_source += source[i] == batch.labels[i];
      m.correct_gda += gda[i] == batch.labels[i];
    }
  }
  return m;
}

ToyEncoderParams make_encoder(Index raw_dim_m1, Index raw_dim_m2, int num_classes,
                              const AdaptationConfig& config) {
  std::mt19937_64 rng(mix_seed(config.seed, 0, kEncoderStream));
  const Index k = config.latent_dim;
  ToyEncoderParams p;
  const Matrix base = normal_matrix(rng, k, raw_dim_m1) / std::sqrt(double(raw_dim_m1));
  const Matrix e1 = normal_matrix(rng, k, raw_dim_m1) / std::sqrt(double(raw_dim_m1));
  p.proj_m1 = base + config.projection_jitter * e1;
  if (raw_dim_m2 == raw_dim_m1) {
    const Matrix e2 = normal_matrix(rng, k, raw_dim_m2) / std::sqrt(double(raw_dim_m2));
    p.proj_m2 = base + config.projection_jitter * e2;
  } else {
    p.proj_m2 = normal_matrix(rng, k, raw_dim_m2) / std::sqrt(double(raw_dim_m2));
  }
  p.ln_scale_m1 = Vector::Ones(k);
  p.ln_shift_m1 = Vector::Zero(k);
  p.ln_scale_m2 = Vector::Ones(k);
  p.ln_shift_m2 = Vector::Zero(k);
  p.fusion.resize(k, 2 * k);
  p.fusion << 0.5 * Matrix::Identity(k, k), 0.5 * Matrix::Identity(k, k);
  p.head.weights = Matrix::Zero(num_classes, k);
  p.head.biases = Vector::Zero(num_classes);
  return p;
}

HeadParams prefit_head(const ToyEncoderParams& encoder, const std::vector<Sample>& data,
                       int num_classes, const AdaptationConfig& config) {
  const RawBatch batch = make_batch(data);
  const RowMatrix z = forward(batch.x_m1, batch.x_m2, encoder).z_fused;
  const Index n = z.rows();
  RowMatrix targets = RowMatrix::Zero(n, num_classes);
  for (Index i = 0; i < n; ++i) targets(i, batch.labels[i]) = 1.0;

  constexpr double kWeightDecay = 1e-4;
  HeadParams head{Matrix::Zero(num_classes, z.cols()), Vector::Zero(num_classes)};
  for (int epoch = 0; epoch < config.prefit_epochs; ++epoch) {
    const RowMatrix g = (softmax_rows(head.logits(z)) - targets) / static_cast<double>(n);
    head.weights -= config.prefit_lr * (Matrix(g.transpose() * z) + kWeightDecay * head.weights);
    head.biases -= config.prefit_lr * g.colwise().sum().transpose();
  }
  return head;
}

AdaptationState prepare_source_model(const ScenarioSpec& source, const AdaptationConfig& config) {
  config.validate();
  if (source.corruption.target != CorruptionTarget::None && source.corruption.severity != 0.0) {
    throw ValidationError("source.corruption", "source data must be uncorrupted");
  }
  ScenarioSpec clean = source;
  clean.samples = config.source_samples;
  const std::vector<Sample> data = generate(clean);

  AdaptationState state;
  state.params = make_encoder(source.raw_dim_m1, source.raw_dim_m2, source.num_classes, config);
  state.params.head = prefit_head(state.params, data, source.num_classes, config);
  for (Perspective p : kAllPerspectives) {
    state.models[static_cast<int>(p)] = init_model(state.params.head, p, config.alpha);
  }
  state.adam = make_adam(state.params.adaptable_size(), config.lr);
  return state;
}

std::optional<Sample> VectorSource::next() {
  if (pos_ >= samples_.size()) return std::nullopt;
  return samples_[pos_++];
}

RunReport run_stream(SampleSource& source, AdaptationState state, const AdaptationConfig& config,
                     const std::function<void(const BatchMetrics&)>& on_batch) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  RunReport report;
  const auto batch_size = static_cast<std::size_t>(config.batch_size);
  std::vector<Sample> buffer;
  buffer.reserve(batch_size);
  std::uint64_t index = 0;
  for (;;) {
    buffer.clear();
    while (buffer.size() < batch_size) {
      std::optional<Sample> s = source.next();
      if (!s) break;
      buffer.push_back(std::move(*s));
    }
    if (buffer.empty()) break;
    const BatchMetrics m = step(make_batch(buffer), state, config, index++);
    report.batches.push_back(m);
    if (on_batch) on_batch(m);
    if (buffer.size() < batch_size) break;
  }

  RunAggregates& agg = report.aggregates;
  std::uint64_t fused = 0, src = 0, gda = 0;
  for (const BatchMetrics& m : report.batches) {
    ++agg.batches;
    agg.samples += m.size;
    fused += m.correct_fused;
    src += m.correct_source;
    gda += m.correct_gda;
    agg.n_m1 += m.n_m1;
    agg.n_m2 += m.n_m2;
    const double w = static_cast<double>(m.size);
    agg.mean_losses.ra += w * m.losses.ra;
    agg.mean_losses.bal += w * m.losses.bal;
    agg.mean_losses.c += w * m.losses.c;
    agg.mean_losses.g += w * m.losses.g;
    agg.mean_losses.total += w * m.losses.total;
  }
  if (agg.samples > 0) {
    const double n = static_cast<double>(agg.samples);
    agg.acc_fused = fused / n;
    agg.acc_source = src / n;
    agg.acc_gda = gda / n;
    agg.mean_losses.ra /= n;
    agg.mean_losses.bal /= n;
    agg.mean_losses.c /= n;
    agg.mean_losses.g /= n;
    agg.mean_losses.total /= n;
  }
  report.final_state = std::move(state);
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace mmtta
