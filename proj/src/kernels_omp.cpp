#include <algorithm>
#include <cmath>

#include "mmtta/kernels.hpp"

namespace mmtta {
namespace detail {

double skl_pair(const double* p, const double* q, Index n) {
  double sp = 0.0;
  double sq = 0.0;
  for (Index c = 0; c < n; ++c) {
    sp += std::max(p[c], kProbClamp);
    sq += std::max(q[c], kProbClamp);
  }
  double acc = 0.0;
  for (Index c = 0; c < n; ++c) {
    const double pc = std::max(p[c], kProbClamp) / sp;
    const double qc = std::max(q[c], kProbClamp) / sq;
    acc += (pc - qc) * (std::log(pc) - std::log(qc));
  }
  return 0.5 * acc;
}

void normalize_rows(const RowMatrix& z, RowMatrix& unit, Vector& norms) {
  norms = z.rowwise().norm();
  unit = z;
  for (Index i = 0; i < z.rows(); ++i) unit.row(i) /= norms[i];
}

void contrastive_anchor(const RowMatrix& unit_m1, const RowMatrix& unit_m2, const Vector& norm_m1,
                        const Vector& norm_m2, AnchorSide side, Index i, double tau,
                        double& loss, Eigen::Ref<Eigen::RowVectorXd> grad) {
  const RowMatrix& anchors = side == AnchorSide::M1 ? unit_m1 : unit_m2;
  const RowMatrix& keys = side == AnchorSide::M1 ? unit_m2 : unit_m1;
  const double norm = side == AnchorSide::M1 ? norm_m1[i] : norm_m2[i];
  const auto a = anchors.row(i);

  const Eigen::VectorXd logits = (keys * a.transpose()) / tau;
  const double top = logits.maxCoeff();
  const Eigen::ArrayXd w = (logits.array() - top).exp();
  const double denom = w.sum();
  loss = top + std::log(denom) - logits[i];

  // d l / d a = (sum_j softmax_j k_j - k_i) / tau
  const Eigen::RowVectorXd expected_key = (w.matrix().transpose() * keys) / denom;
  const Eigen::RowVectorXd g_unit = (expected_key - keys.row(i)) / tau;
  // through u = z/|z|: (I - u u^T) g / |z|
  grad = (g_unit - a * a.dot(g_unit)) / norm;
}

}  // namespace detail

namespace kernels {

RowMatrix score_batch(const RowMatrix& features, const PerspectiveBank& bank) {
  const Index n = features.rows();
  const Index classes = bank.num_classes;
  RowMatrix scores(n, classes);
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < n; ++i) {
    Vector diff(bank.dim);
    for (Index c = 0; c < classes; ++c) {
      const ClassGaussian& g = bank.params[c];
      diff = features.row(i).transpose() - g.mean;
      g.chol.triangularView<Eigen::Lower>().solveInPlace(diff);
      scores(i, c) = -0.5 * diff.squaredNorm() - 0.5 * g.log_det + g.log_prior;
    }
  }
  return scores;
}

std::vector<SufficientStats> accumulate_deltas(const RowMatrix& features, const RowMatrix& resp) {
  const Index n = features.rows();
  const Index d = features.cols();
  const Index classes = resp.cols();
  std::vector<SufficientStats> out(classes, SufficientStats(d));
#pragma omp parallel for schedule(static)
  for (Index c = 0; c < classes; ++c) {
    SufficientStats& s = out[c];
    for (Index i = 0; i < n; ++i) {
      const double g = resp(i, c);
      if (g == 0.0) continue;
      s.count += g;
      for (Index a = 0; a < d; ++a) {
        const double gza = g * features(i, a);
        s.first_moment[a] += gza;
        for (Index b = a; b < d; ++b) s.second_moment(a, b) += gza * features(i, b);
      }
    }
    for (Index a = 0; a < d; ++a)
      for (Index b = a + 1; b < d; ++b) s.second_moment(b, a) = s.second_moment(a, b);
  }
  return out;
}

Vector skl_rows(const RowMatrix& p, const RowMatrix& q) {
  const Index n = p.rows();
  Vector out(n);
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < n; ++i) out[i] = detail::skl_pair(p.row(i).data(), q.row(i).data(), p.cols());
  return out;
}

ContrastiveTerms contrastive_terms(const RowMatrix& z_m1, const RowMatrix& z_m2,
                                   const std::vector<AnchorSide>& anchors, double tau) {
  RowMatrix u1;
  RowMatrix u2;
  Vector n1;
  Vector n2;
  detail::normalize_rows(z_m1, u1, n1);
  detail::normalize_rows(z_m2, u2, n2);

  const Index n = z_m1.rows();
  ContrastiveTerms out{Vector(n), RowMatrix(n, z_m1.cols())};
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < n; ++i) {
    detail::contrastive_anchor(u1, u2, n1, n2, anchors[i], i, tau, out.loss[i],
                               out.grad_anchor.row(i));
  }
  return out;
}

}  // namespace kernels
}  // namespace mmtta
