#include "mmtta/fusion_scoring.hpp"

#include <algorithm>
#include <cmath>

#include "mmtta/errors.hpp"

namespace mmtta {
namespace {

constexpr double kClamp = 1e-12;

double clamped_log(double p) { return std::log(std::max(p, kClamp)); }

// Pulls a gradient w.r.t. probabilities back through a row-wise softmax.
RowMatrix softmax_backward(const RowMatrix& p, const RowMatrix& grad_p) {
  RowMatrix out(p.rows(), p.cols());
  for (Index i = 0; i < p.rows(); ++i) {
    const double inner = p.row(i).dot(grad_p.row(i));
    out.row(i) = p.row(i).array() * (grad_p.row(i).array() - inner);
  }
  return out;
}

}  // namespace

RowMatrix softmax_rows(const RowMatrix& logits) {
  RowMatrix out(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.rows(); ++i) {
    const double top = logits.row(i).maxCoeff();
    out.row(i) = (logits.row(i).array() - top).exp();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

RowMatrix fused_logits(const RowMatrix& source_logits, const RowMatrix& gda_fused, double lambda) {
  if (source_logits.rows() != gda_fused.rows() || source_logits.cols() != gda_fused.cols()) {
    throw ContractViolation("fused_logits: shape mismatch");
  }
  if (lambda < 0.0) throw ContractViolation("fused_logits: lambda must be >= 0");
  if (lambda == 0.0) return source_logits;
  return source_logits + lambda * gda_fused;
}

std::vector<int> argmax_rows(const RowMatrix& m) {
  std::vector<int> out(m.rows());
  for (Index i = 0; i < m.rows(); ++i) {
    Index best = 0;
    for (Index c = 1; c < m.cols(); ++c)
      if (m(i, c) > m(i, best)) best = c;
    out[i] = static_cast<int>(best);
  }
  return out;
}

LossAndGrad alignment_loss(const RowMatrix& p_lp, const RowMatrix& src_logits) {
  if (p_lp.rows() != src_logits.rows() || p_lp.cols() != src_logits.cols()) {
    throw ContractViolation("alignment_loss: shape mismatch");
  }
  const double b = static_cast<double>(src_logits.rows());
  const RowMatrix p_src = softmax_rows(src_logits);
  double total = 0.0;
  for (Index i = 0; i < p_src.rows(); ++i)
    for (Index c = 0; c < p_src.cols(); ++c) total -= p_lp(i, c) * clamped_log(p_src(i, c));
  return {total / b, (p_src - p_lp) / b};
}

LossAndGrad confidence_reg(const RowMatrix& src_posterior) {
  const Index n = src_posterior.rows();
  const double b = static_cast<double>(n);
  const std::vector<int> top = argmax_rows(src_posterior);
  RowMatrix grad_p = RowMatrix::Zero(n, src_posterior.cols());
  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double u = src_posterior(i, top[i]);
    total -= u * clamped_log(u);
    // d(-u log u)/du; the clamp is flat below 1e-12
    grad_p(i, top[i]) = -(clamped_log(u) + (u > kClamp ? 1.0 : 0.0)) / b;
  }
  return {total / b, softmax_backward(src_posterior, grad_p)};
}

LossAndGrad balance_reg(const RowMatrix& src_posterior, BalanceSign sign) {
  const Eigen::RowVectorXd summed = src_posterior.colwise().sum();
  const double top = summed.maxCoeff();
  Eigen::RowVectorXd q = (summed.array() - top).exp();
  q /= q.sum();

  double entropy = 0.0;
  for (Index c = 0; c < q.size(); ++c) entropy -= q[c] * clamped_log(q[c]);

  // dH/dr_k = -q_k (log q_k + H), r = sum_i p_i
  Eigen::RowVectorXd grad_r(q.size());
  for (Index c = 0; c < q.size(); ++c) grad_r[c] = -q[c] * (clamped_log(q[c]) + entropy);

  const double s = sign == BalanceSign::Literal ? 1.0 : -1.0;
  RowMatrix grad_p = grad_r.replicate(src_posterior.rows(), 1) * s;
  return {s * entropy, softmax_backward(src_posterior, grad_p)};
}

double accuracy(const std::vector<int>& predicted, const std::vector<int>& labels) {
  if (predicted.size() != labels.size()) throw ContractViolation("accuracy: size mismatch");
  if (predicted.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) hits += predicted[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

}  // namespace mmtta
