#include <cmath>

#include "mmtta/kernels.hpp"

namespace mmtta::reference {

// Class-major: one block triangular solve per class over the whole batch.
RowMatrix score_batch(const RowMatrix& features, const PerspectiveBank& bank) {
  RowMatrix scores(features.rows(), bank.num_classes);
  for (Index c = 0; c < bank.num_classes; ++c) {
    const ClassGaussian& g = bank.params[c];
    Matrix centered = (features.rowwise() - g.mean.transpose()).transpose();
    g.chol.triangularView<Eigen::Lower>().solveInPlace(centered);
    scores.col(c) = (-0.5 * centered.colwise().squaredNorm().array() - 0.5 * g.log_det +
                     g.log_prior)
                        .transpose();
  }
  return scores;
}

// Sample-major accumulation straight from the definition.
std::vector<SufficientStats> accumulate_deltas(const RowMatrix& features, const RowMatrix& resp) {
  const Index d = features.cols();
  std::vector<SufficientStats> out(resp.cols(), SufficientStats(d));
  for (Index i = 0; i < features.rows(); ++i) {
    const Vector z = features.row(i).transpose();
    const Matrix outer = z * z.transpose();
    for (Index c = 0; c < resp.cols(); ++c) {
      const double g = resp(i, c);
      out[c].count += g;
      out[c].first_moment += g * z;
      out[c].second_moment += g * outer;
    }
  }
  return out;
}

Vector skl_rows(const RowMatrix& p, const RowMatrix& q) {
  Vector out(p.rows());
  for (Index i = 0; i < p.rows(); ++i) out[i] = detail::skl_pair(p.row(i).data(), q.row(i).data(), p.cols());
  return out;
}

// Full similarity matrix and explicit normalization Jacobians.
ContrastiveTerms contrastive_terms(const RowMatrix& z_m1, const RowMatrix& z_m2,
                                   const std::vector<AnchorSide>& anchors, double tau) {
  const Index n = z_m1.rows();
  const Index d = z_m1.cols();
  RowMatrix u1 = z_m1;
  RowMatrix u2 = z_m2;
  for (Index i = 0; i < n; ++i) {
    u1.row(i).normalize();
    u2.row(i).normalize();
  }
  const Matrix sim12 = u1 * u2.transpose();  // sim12(i, j) = <u1_i, u2_j>

  ContrastiveTerms out{Vector(n), RowMatrix(n, d)};
  for (Index i = 0; i < n; ++i) {
    const bool m1 = anchors[i] == AnchorSide::M1;
    const Vector a = m1 ? Vector(u1.row(i).transpose()) : Vector(u2.row(i).transpose());
    const RowMatrix& keys = m1 ? u2 : u1;
    const double raw_norm = m1 ? z_m1.row(i).norm() : z_m2.row(i).norm();

    Vector logits(n);
    for (Index j = 0; j < n; ++j) logits[j] = (m1 ? sim12(i, j) : sim12(j, i)) / tau;
    double denom = 0.0;
    for (Index j = 0; j < n; ++j) denom += std::exp(logits[j] - logits[i]);
    out.loss[i] = std::log(denom);

    Vector g_unit = -keys.row(i).transpose() / tau;
    for (Index j = 0; j < n; ++j) {
      g_unit += std::exp(logits[j] - logits[i]) / denom * keys.row(j).transpose() / tau;
    }
    const Matrix jac = (Matrix::Identity(d, d) - a * a.transpose()) / raw_norm;
    out.grad_anchor.row(i) = (jac * g_unit).transpose();
  }
  return out;
}

}  // namespace mmtta::reference
