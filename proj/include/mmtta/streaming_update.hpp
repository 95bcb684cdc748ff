#pragma once

#include <span>
#include <vector>

#include "mmtta/gaussian_core.hpp"

namespace mmtta {

/// Frozen linear classifier s_c(z) = w_c^T z + b_c. `weights` is C x d.
struct HeadParams {
  Matrix weights;
  Vector biases;

  Index num_classes() const { return weights.rows(); }
  Index dim() const { return weights.cols(); }
  /// B x C logits for a batch of features.
  RowMatrix logits(const RowMatrix& features) const;
};

struct UpdateConfig {
  double alpha = 0.9;
  double eps_shrink = kDefaultShrinkage;
  double prior_floor = kPriorFloor;
  double min_mean_mass = 1e-3;  // below this accumulated mass a class is held
  double min_cov_count = 2.0;   // below this the covariance MLE is not trusted
};

struct EmaClass {
  double prior = 0.0;
  Vector mean;
  Matrix covariance;  // blended, before shrinkage
};

struct EmaState {
  double alpha = 0.9;
  std::vector<EmaClass> classes;
};

/// A perspective's bank together with its EMA state.
struct PerspectiveModel {
  PerspectiveBank bank;
  EmaState ema;
};

enum class ClassStatus { Hold, MeanOnly, Full };

struct ClassEstimate {
  ClassStatus status = ClassStatus::Hold;
  MleEstimate mle;  // empty vectors when status == Hold and the class has no mass
};

/// mu0 = w_c, Sigma0 = I, log pi0 = b_c + |w_c|^2 / 2. The unnormalized log
/// prior is kept for scoring; `prior` holds its normalized copy.
PerspectiveBank init_from_head(const HeadParams& head, Perspective perspective);

/// EMA state seeded from a freshly initialized bank.
EmaState seed_ema(const PerspectiveBank& bank, double alpha);

PerspectiveModel init_model(const HeadParams& head, Perspective perspective, double alpha);

/// Per-class (dN, dS, dQ) of one batch. Rows of `resp` must be nonnegative and
/// sum to 1 within 1e-9, otherwise RejectedBatch.
std::vector<SufficientStats> batch_deltas(const RowMatrix& features, const RowMatrix& resp);

/// Adds deltas to the running totals of `bank` and computes MLEs from the
/// accumulated moments. Classes below the mass thresholds report Hold/MeanOnly.
std::vector<ClassEstimate> absorb_and_reestimate(PerspectiveBank& bank,
                                                 const std::vector<SufficientStats>& deltas,
                                                 const UpdateConfig& config = {});

/// Convex EMA blend of the previous state with fresh estimates; held fields
/// are copied through, priors are renormalized and floored.
EmaState ema_blend(const EmaState& previous, std::span<const ClassEstimate> estimates,
                   double prior_floor = kPriorFloor);

/// Scoring-ready Gaussians from the blended state. Full classes get their
/// covariance shrunk and refactorized; other classes keep the previous
/// covariance (and, when held, the previous mean) bit-for-bit. Every class
/// takes the renormalized EMA prior.
std::vector<ClassGaussian> install_params(const std::vector<ClassGaussian>& previous,
                                          const EmaState& state,
                                          std::span<const ClassEstimate> estimates,
                                          double eps_shrink);

/// One batch through the whole pipeline: deltas, accumulation, MLE, EMA,
/// installation. `model` is replaced only once every step has succeeded.
std::vector<ClassEstimate> update_model(PerspectiveModel& model, const RowMatrix& features,
                                        const RowMatrix& resp, const UpdateConfig& config);

}  // namespace mmtta
