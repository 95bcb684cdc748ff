#pragma once

#include <vector>

#include "mmtta/fusion_scoring.hpp"
#include "mmtta/kernels.hpp"

namespace mmtta {

/// Which modality each sample of a batch is judged to be shifted in.
struct ReliabilityPartition {
  std::vector<Index> set_m1;  // D_m2 < D_m1: modality 1 flagged
  std::vector<Index> set_m2;  // D_m1 <= D_m2: modality 2 flagged
  RowMatrix discrepancies;    // B x 2, columns (D_m1, D_m2)

  Index size() const { return discrepancies.rows(); }
  /// Per-sample anchor side: the flagged modality receives the gradient.
  std::vector<AnchorSide> anchors() const;
};

/// 1/2 (KL(p||q) + KL(q||p)) after clamping to 1e-12 and renormalizing.
double symmetric_kl(const Eigen::Ref<const Vector>& p, const Eigen::Ref<const Vector>& q);

/// Partition from per-sample uni-modal posteriors compared against the fused one.
ReliabilityPartition reliability_partition(const RowMatrix& post_m1, const RowMatrix& post_m2,
                                           const RowMatrix& post_fused);

/// Same, reading the GDA posteriors stored in the batch view.
ReliabilityPartition reliability_partition(const BatchView& batch);

struct ContrastiveResult {
  double loss = 0.0;
  RowMatrix grad_m1;  // nonzero only on rows in set_m1
  RowMatrix grad_m2;  // nonzero only on rows in set_m2
};

/// One-sided InfoNCE: each sample's flagged modality is the anchor, the other
/// modality's normalized features are stop-gradient keys for the whole batch
/// (the positive included in the denominator). Loss is averaged over B.
/// A zero-norm feature raises RejectedInput.
ContrastiveResult one_sided_infonce(const RowMatrix& z_m1, const RowMatrix& z_m2,
                                    const ReliabilityPartition& partition, double tau);

}  // namespace mmtta
