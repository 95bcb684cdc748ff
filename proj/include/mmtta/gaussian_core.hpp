#pragma once

#include <optional>
#include <vector>

#include "mmtta/types.hpp"

namespace mmtta {

inline constexpr double kDefaultShrinkage = 1e-4;
inline constexpr double kPriorFloor = 1e-8;

/// Streaming moments of one class: soft count N, first moment S = sum(g z),
/// second moment Q = sum(g z z^T). Q is kept exactly symmetric.
struct SufficientStats {
  double count = 0.0;
  Vector first_moment;
  Matrix second_moment;

  SufficientStats() = default;
  explicit SufficientStats(Index dim)
      : first_moment(Vector::Zero(dim)), second_moment(Matrix::Zero(dim, dim)) {}

  Index dim() const { return first_moment.size(); }

  /// Adds another set of moments (e.g. one batch's deltas) and re-symmetrizes Q.
  SufficientStats& operator+=(const SufficientStats& delta);
};

/// Per-class Gaussian ready for scoring. `log_prior` is what enters the score;
/// it equals log(prior) except right after head initialization, where it holds
/// the unnormalized bias-absorbing value.
struct ClassGaussian {
  double prior = 1.0;
  double log_prior = 0.0;
  Vector mean;
  Matrix covariance;
  Matrix chol;  // lower-triangular, covariance = chol * chol^T
  double log_det = 0.0;

  /// Factorizes `covariance` (which must already be SPD) and fills the caches.
  static ClassGaussian make(double prior, double log_prior, Vector mean, Matrix covariance,
                            int class_index = -1);

  Index dim() const { return mean.size(); }
};

struct PerspectiveBank {
  Perspective perspective = Perspective::Fused;
  Index dim = 0;
  Index num_classes = 0;
  std::vector<SufficientStats> stats;
  std::vector<ClassGaussian> params;

  /// Throws ContractViolation if the per-class entries disagree with dim/num_classes.
  void validate() const;
};

/// Quadratic discriminant g(z) = -1/2 (z-mu)^T S^-1 (z-mu) - 1/2 log|S| + log pi,
/// without the class-independent -(d/2) log 2pi.
double quad_score(const Eigen::Ref<const Vector>& z, const ClassGaussian& g);

/// All C scores for one feature vector.
Vector class_scores(const Eigen::Ref<const Vector>& z, const PerspectiveBank& bank);

/// B x C scores for a batch of features (one per row). Validates shapes and
/// finiteness, then runs the parallel kernel.
RowMatrix batch_scores(const RowMatrix& features, const PerspectiveBank& bank);

/// Max-shifted softmax of a score vector.
Vector softmax(const Eigen::Ref<const Vector>& scores);

/// p(c | z) = softmax_c(g_c(z)).
Vector posterior(const Eigen::Ref<const Vector>& z, const PerspectiveBank& bank);

struct MleEstimate {
  double prior = 0.0;
  Vector mean;
  Matrix covariance;  // symmetrized, not shrunk
};

/// Closed-form MLE from accumulated moments. Returns nullopt for an empty class
/// (count == 0), in which case the caller keeps its previous parameters.
std::optional<MleEstimate> mle_from_stats(const SufficientStats& stats, double total_count);

struct ShrunkCovariance {
  Matrix covariance;
  Matrix chol;
  double log_det = 0.0;
  double shrinkage = 0.0;  // the epsilon that was finally used
};

/// Returns sigma + eps*I with its Cholesky factor. When factorization fails the
/// epsilon is doubled, up to 8 retries, then NumericalError(class_index) is thrown.
ShrunkCovariance shrink_covariance(const Matrix& sigma, double eps, int class_index = -1);

struct CovDeviations {
  Matrix mean_covariance;
  std::vector<Matrix> deviations;
};

/// Mean covariance over classes and each class's deviation from it.
CovDeviations cov_deviations(const PerspectiveBank& bank);

/// Builds an SPD ClassGaussian directly from moments via MLE + shrinkage.
ClassGaussian gaussian_from_mle(const MleEstimate& mle, double eps, int class_index = -1);

}  // namespace mmtta
