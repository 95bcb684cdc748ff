#pragma once

// Batch kernels. `kernels::` are the OpenMP versions used by the library,
// `reference::` are straightforward serial loops kept for testing and
// benchmarking. Both take pre-validated inputs; argument checking lives in the
// module-level operations that call them.
//
// The parallel loops only split over independent outputs (samples, classes,
// anchors), never over a floating-point reduction, so results are identical
// for any thread count.

#include <cstdint>
#include <vector>

#include "mmtta/gaussian_core.hpp"

namespace mmtta {

/// Which side of a sample pair is the gradient-receiving anchor.
enum class AnchorSide : std::uint8_t { M1 = 0, M2 = 1 };

struct ContrastiveTerms {
  Vector loss;            // per-anchor l_i (not yet averaged)
  RowMatrix grad_anchor;  // d l_i / d raw anchor feature, one row per sample
};

namespace kernels {

RowMatrix score_batch(const RowMatrix& features, const PerspectiveBank& bank);
std::vector<SufficientStats> accumulate_deltas(const RowMatrix& features, const RowMatrix& resp);
Vector skl_rows(const RowMatrix& p, const RowMatrix& q);
ContrastiveTerms contrastive_terms(const RowMatrix& z_m1, const RowMatrix& z_m2,
                                   const std::vector<AnchorSide>& anchors, double tau);

}  // namespace kernels

namespace reference {

RowMatrix score_batch(const RowMatrix& features, const PerspectiveBank& bank);
std::vector<SufficientStats> accumulate_deltas(const RowMatrix& features, const RowMatrix& resp);
Vector skl_rows(const RowMatrix& p, const RowMatrix& q);
ContrastiveTerms contrastive_terms(const RowMatrix& z_m1, const RowMatrix& z_m2,
                                   const std::vector<AnchorSide>& anchors, double tau);

}  // namespace reference

namespace detail {

inline constexpr double kProbClamp = 1e-12;

/// SKL of two rows after clamping at 1e-12 and renormalizing. Written so that
/// swapping the arguments gives a bit-identical result.
double skl_pair(const double* p, const double* q, Index n);

/// Per-anchor InfoNCE term and its gradient with respect to the raw anchor.
void contrastive_anchor(const RowMatrix& unit_m1, const RowMatrix& unit_m2, const Vector& norm_m1,
                        const Vector& norm_m2, AnchorSide side, Index i, double tau,
                        double& loss, Eigen::Ref<Eigen::RowVectorXd> grad);

void normalize_rows(const RowMatrix& z, RowMatrix& unit, Vector& norms);

}  // namespace detail

}  // namespace mmtta
