#pragma once

#include <array>
#include <vector>

#include "mmtta/types.hpp"

namespace mmtta {

/// Everything the adaptation step derives from one forward pass. Labels are
/// carried for evaluation only.
struct BatchView {
  RowMatrix z_m1;
  RowMatrix z_m2;
  RowMatrix z_fused;
  RowMatrix source_logits;
  std::array<RowMatrix, 3> gda_scores;  // indexed by Perspective
  std::array<RowMatrix, 3> posteriors;  // softmax of gda_scores
  RowMatrix src_posterior;
  std::vector<int> labels;

  Index size() const { return z_fused.rows(); }
  const RowMatrix& scores(Perspective p) const { return gda_scores[static_cast<int>(p)]; }
  const RowMatrix& posterior(Perspective p) const { return posteriors[static_cast<int>(p)]; }
};

enum class BalanceSign { Literal, Flipped };

struct LossAndGrad {
  double value = 0.0;
  RowMatrix grad_logits;  // d value / d source logits, B x C
};

/// Row-wise max-shifted softmax.
RowMatrix softmax_rows(const RowMatrix& logits);

/// l = s + lambda * g_F.
RowMatrix fused_logits(const RowMatrix& source_logits, const RowMatrix& gda_fused, double lambda);

/// Per-row argmax; ties resolve to the lowest index.
std::vector<int> argmax_rows(const RowMatrix& m);

/// Cross-entropy of the (detached) GDA posterior against softmax(src_logits).
/// Gradient is (p_src - p_lp) / B.
LossAndGrad alignment_loss(const RowMatrix& p_lp, const RowMatrix& src_logits);

/// -(1/B) sum_i u_i log u_i with u_i the largest source probability. The
/// subgradient flows through the argmax coordinate only.
LossAndGrad confidence_reg(const RowMatrix& src_posterior);

/// Entropy of q = softmax(sum_i p_i), returned with the sign selected by
/// `sign` (Literal keeps +H(q)).
LossAndGrad balance_reg(const RowMatrix& src_posterior, BalanceSign sign = BalanceSign::Literal);

double accuracy(const std::vector<int>& predicted, const std::vector<int>& labels);

}  // namespace mmtta
