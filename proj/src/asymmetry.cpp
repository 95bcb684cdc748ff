#include "mmtta/asymmetry.hpp"

#include <string>

#include "mmtta/errors.hpp"

namespace mmtta {

std::vector<AnchorSide> ReliabilityPartition::anchors() const {
  std::vector<AnchorSide> out(static_cast<std::size_t>(size()), AnchorSide::M2);
  for (Index i : set_m1) out[i] = AnchorSide::M1;
  return out;
}

double symmetric_kl(const Eigen::Ref<const Vector>& p, const Eigen::Ref<const Vector>& q) {
  if (p.size() != q.size()) throw ContractViolation("symmetric_kl: length mismatch");
  const Vector pc = p;
  const Vector qc = q;
  return detail::skl_pair(pc.data(), qc.data(), pc.size());
}

ReliabilityPartition reliability_partition(const RowMatrix& post_m1, const RowMatrix& post_m2,
                                           const RowMatrix& post_fused) {
  if (post_m1.rows() != post_fused.rows() || post_m2.rows() != post_fused.rows() ||
      post_m1.cols() != post_fused.cols() || post_m2.cols() != post_fused.cols()) {
    throw ContractViolation("reliability_partition: posterior shapes differ");
  }
  ReliabilityPartition part;
  const Index n = post_fused.rows();
  part.discrepancies.resize(n, 2);
  part.discrepancies.col(0) = kernels::skl_rows(post_m1, post_fused);
  part.discrepancies.col(1) = kernels::skl_rows(post_m2, post_fused);
  for (Index i = 0; i < n; ++i) {
    if (part.discrepancies(i, 1) < part.discrepancies(i, 0)) {
      part.set_m1.push_back(i);
    } else {
      part.set_m2.push_back(i);
    }
  }
  return part;
}

ReliabilityPartition reliability_partition(const BatchView& batch) {
  return reliability_partition(batch.posterior(Perspective::M1), batch.posterior(Perspective::M2),
                               batch.posterior(Perspective::Fused));
}

ContrastiveResult one_sided_infonce(const RowMatrix& z_m1, const RowMatrix& z_m2,
                                    const ReliabilityPartition& partition, double tau) {
  if (!(tau > 0.0)) throw ContractViolation("one_sided_infonce: tau must be positive");
  if (z_m1.rows() != z_m2.rows() || z_m1.cols() != z_m2.cols()) {
    throw ContractViolation("one_sided_infonce: modality feature shapes differ");
  }
  const Index n = z_m1.rows();
  if (n < 1) throw ContractViolation("one_sided_infonce: empty batch");
  if (partition.size() != n) throw ContractViolation("one_sided_infonce: partition size");
  for (Index i = 0; i < n; ++i) {
    if (!(z_m1.row(i).squaredNorm() > 0.0) || !(z_m2.row(i).squaredNorm() > 0.0)) {
      throw RejectedInput("one_sided_infonce: sample " + std::to_string(i) +
                          " has a zero-norm feature");
    }
  }

  const std::vector<AnchorSide> anchors = partition.anchors();
  ContrastiveTerms terms = kernels::contrastive_terms(z_m1, z_m2, anchors, tau);

  const double b = static_cast<double>(n);
  ContrastiveResult out;
  out.grad_m1 = RowMatrix::Zero(n, z_m1.cols());
  out.grad_m2 = RowMatrix::Zero(n, z_m2.cols());
  for (Index i = 0; i < n; ++i) {
    out.loss += terms.loss[i];
    RowMatrix& g = anchors[i] == AnchorSide::M1 ? out.grad_m1 : out.grad_m2;
    g.row(i) = terms.grad_anchor.row(i) / b;
  }
  out.loss /= b;
  return out;
}

}  // namespace mmtta
