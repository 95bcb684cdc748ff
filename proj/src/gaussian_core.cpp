#include "mmtta/gaussian_core.hpp"

#include <cmath>
#include <string>

#include "mmtta/errors.hpp"
#include "mmtta/kernels.hpp"

namespace mmtta {
namespace {

constexpr int kShrinkRetries = 8;

void symmetrize(Matrix& m) { m = 0.5 * (m + m.transpose()).eval(); }

double log_det_from_chol(const Matrix& chol) {
  return 2.0 * chol.diagonal().array().log().sum();
}

}  // namespace

SufficientStats& SufficientStats::operator+=(const SufficientStats& delta) {
  if (delta.dim() != dim()) {
    throw ContractViolation("SufficientStats: adding dim " + std::to_string(delta.dim()) +
                            " to dim " + std::to_string(dim()));
  }
  count += delta.count;
  first_moment += delta.first_moment;
  second_moment += delta.second_moment;
  symmetrize(second_moment);
  return *this;
}

ClassGaussian ClassGaussian::make(double prior, double log_prior, Vector mean, Matrix covariance,
                                  int class_index) {
  if (covariance.rows() != mean.size() || covariance.cols() != mean.size()) {
    throw ContractViolation("ClassGaussian: covariance shape does not match mean");
  }
  Eigen::LLT<Matrix> llt(covariance);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("covariance is not positive definite", class_index);
  }
  ClassGaussian g;
  g.prior = prior;
  g.log_prior = log_prior;
  g.mean = std::move(mean);
  g.covariance = std::move(covariance);
  g.chol = llt.matrixL();
  g.log_det = log_det_from_chol(g.chol);
  return g;
}

void PerspectiveBank::validate() const {
  if (dim <= 0 || num_classes <= 0) throw ContractViolation("PerspectiveBank: empty bank");
  if (static_cast<Index>(stats.size()) != num_classes ||
      static_cast<Index>(params.size()) != num_classes) {
    throw ContractViolation("PerspectiveBank: expected " + std::to_string(num_classes) +
                            " classes");
  }
  for (Index c = 0; c < num_classes; ++c) {
    if (stats[c].dim() != dim || params[c].dim() != dim || params[c].chol.rows() != dim) {
      throw ContractViolation("PerspectiveBank: class " + std::to_string(c) +
                              " has wrong dimension");
    }
  }
}

double quad_score(const Eigen::Ref<const Vector>& z, const ClassGaussian& g) {
  if (z.size() != g.dim()) {
    throw ContractViolation("quad_score: feature dim " + std::to_string(z.size()) +
                            " != class dim " + std::to_string(g.dim()));
  }
  if (!z.allFinite()) throw RejectedInput("quad_score: non-finite feature coordinate");
  const Vector diff = z - g.mean;
  // ||L^-1 (z - mu)||^2 == (z - mu)^T S^-1 (z - mu)
  const Vector y = g.chol.triangularView<Eigen::Lower>().solve(diff);
  return -0.5 * y.squaredNorm() - 0.5 * g.log_det + g.log_prior;
}

Vector class_scores(const Eigen::Ref<const Vector>& z, const PerspectiveBank& bank) {
  Vector s(bank.num_classes);
  for (Index c = 0; c < bank.num_classes; ++c) s[c] = quad_score(z, bank.params[c]);
  return s;
}

RowMatrix batch_scores(const RowMatrix& features, const PerspectiveBank& bank) {
  if (features.cols() != bank.dim) {
    throw ContractViolation("batch_scores: feature dim " + std::to_string(features.cols()) +
                            " != bank dim " + std::to_string(bank.dim));
  }
  if (!features.allFinite()) throw RejectedInput("batch_scores: non-finite feature coordinate");
  return kernels::score_batch(features, bank);
}

Vector softmax(const Eigen::Ref<const Vector>& scores) {
  const double top = scores.maxCoeff();
  Vector e = (scores.array() - top).exp();
  return e / e.sum();
}

Vector posterior(const Eigen::Ref<const Vector>& z, const PerspectiveBank& bank) {
  return softmax(class_scores(z, bank));
}

std::optional<MleEstimate> mle_from_stats(const SufficientStats& stats, double total_count) {
  if (stats.count < 0.0) throw ContractViolation("mle_from_stats: negative count");
  if (stats.count == 0.0) return std::nullopt;
  if (total_count < stats.count) {
    throw ContractViolation("mle_from_stats: total_count below class count");
  }
  MleEstimate out;
  out.prior = stats.count / total_count;
  out.mean = stats.first_moment / stats.count;
  out.covariance = stats.second_moment / stats.count - out.mean * out.mean.transpose();
  symmetrize(out.covariance);
  return out;
}

ShrunkCovariance shrink_covariance(const Matrix& sigma, double eps, int class_index) {
  if (sigma.rows() != sigma.cols()) throw ContractViolation("shrink_covariance: not square");
  if (!(eps > 0.0)) throw ContractViolation("shrink_covariance: epsilon must be positive");
  if (!sigma.allFinite()) {
    throw NumericalError("shrink_covariance: non-finite covariance", class_index);
  }
  double e = eps;
  for (int attempt = 0; attempt <= kShrinkRetries; ++attempt, e *= 2.0) {
    Matrix shrunk = sigma;
    shrunk.diagonal().array() += e;
    Eigen::LLT<Matrix> llt(shrunk);
    if (llt.info() == Eigen::Success) {
      ShrunkCovariance out;
      out.chol = llt.matrixL();
      out.log_det = log_det_from_chol(out.chol);
      out.covariance = std::move(shrunk);
      out.shrinkage = e;
      return out;
    }
  }
  throw NumericalError("covariance of class " + std::to_string(class_index) +
                           " not factorizable after shrinkage retries",
                       class_index);
}

CovDeviations cov_deviations(const PerspectiveBank& bank) {
  bank.validate();
  CovDeviations out;
  out.mean_covariance = Matrix::Zero(bank.dim, bank.dim);
  for (const auto& g : bank.params) out.mean_covariance += g.covariance;
  out.mean_covariance /= static_cast<double>(bank.num_classes);
  out.deviations.reserve(bank.params.size());
  for (const auto& g : bank.params) out.deviations.push_back(g.covariance - out.mean_covariance);
  return out;
}

ClassGaussian gaussian_from_mle(const MleEstimate& mle, double eps, int class_index) {
  ShrunkCovariance s = shrink_covariance(mle.covariance, eps, class_index);
  ClassGaussian g;
  g.prior = mle.prior;
  g.log_prior = std::log(mle.prior);
  g.mean = mle.mean;
  g.covariance = std::move(s.covariance);
  g.chol = std::move(s.chol);
  g.log_det = s.log_det;
  return g;
}

}  // namespace mmtta
