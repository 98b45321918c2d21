#include "smalt/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace smalt {

void validate_target(const Vec& z, Eigen::Index target) {
  validate_logits(z);
  if (target < 0 || target >= z.size()) {
    throw std::out_of_range("target index out of range");
  }
}

LossGrad ce_loss_softmax(const Vec& z, Eigen::Index target) {
  validate_target(z, target);
  const double zmax = z.maxCoeff();
  const Vec shifted = z.array() - zmax;
  const Vec ez = shifted.array().exp();
  const double sum = ez.sum();
  LossGrad out;
  out.loss = std::log(sum) - shifted[target];
  out.grad = ez / sum;
  out.grad[target] -= 1.0;
  return out;
}

namespace {

// Shared Taylor plumbing: per-entry polynomial values (scaled by 1/K so the
// normalizer stays finite at the clamp boundary) and the scaled sum.
struct TaylorEval {
  Vec value;       // f^n(z_i) / K
  Vec derivative;  // f^{n-1}(z_i) / K
  double sum;      // sum_j f^n(z_j) / K
};

TaylorEval eval_taylor(const Vec& z, TaylorOrder n) {
  TaylorEval e;
  e.value.resize(z.size());
  e.derivative.resize(z.size());
  const double inv_k = 1.0 / static_cast<double>(z.size());
  double sum = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const PolyValue pv = eval_poly(z[i], n);
    e.value[i] = pv.value * inv_k;
    e.derivative[i] = pv.derivative * inv_k;
    sum += e.value[i];
  }
  e.sum = sum;
  return e;
}

LossGrad taylor_exact_impl(const Vec& z, Eigen::Index target, TaylorOrder n) {
  const TaylorEval e = eval_taylor(z, n);
  LossGrad out;
  out.loss = std::log(e.sum) - std::log(e.value[target]);
  out.grad = e.derivative / e.sum;
  out.grad[target] -= e.derivative[target] / e.value[target];
  return out;
}

}  // namespace

LossGrad ce_loss_taylor_exact(const Vec& z, Eigen::Index target,
                              TaylorOrder n) {
  validate_target(z, target);
  return taylor_exact_impl(z, target, n);
}

LossGrad ce_loss_taylor_inf(const Vec& z, Eigen::Index target, TaylorOrder n) {
  validate_target(z, target);
  const TaylorEval e = eval_taylor(z, n);
  LossGrad out;
  out.loss = std::log(e.sum) - std::log(e.value[target]);
  out.grad = e.value / e.sum;
  out.grad[target] -= 1.0;
  return out;
}

LossGrad ce_loss_sm(const Vec& z, Eigen::Index target, double margin) {
  validate_target(z, target);
  Vec adjusted = z;
  adjusted[target] -= margin;
  return ce_loss_softmax(adjusted, target);
}

LossGrad ce_loss_sm_taylor(const Vec& z, Eigen::Index target, TaylorOrder n,
                           double margin) {
  validate_target(z, target);
  Vec adjusted = z;
  adjusted[target] -= margin;
  return taylor_exact_impl(adjusted, target, n);
}

LossGrad ce_loss(const Vec& z, Eigen::Index target,
                 const VariantConfig& config) {
  switch (config.kind()) {
    case VariantKind::softmax:
      return ce_loss_softmax(z, target);
    case VariantKind::taylor:
      return ce_loss_taylor_exact(z, target, config.order());
    case VariantKind::taylor_inf:
      return ce_loss_taylor_inf(z, target, config.order());
    case VariantKind::sm_softmax:
      return ce_loss_sm(z, target, config.margin());
    case VariantKind::sm_taylor:
      return ce_loss_sm_taylor(z, target, config.order(), config.margin());
  }
  throw std::logic_error("unreachable");
}

Vec regularizer(const Vec& z, TaylorOrder n) {
  validate_logits(z);
  const Vec tp = taylor_softmax(z, n);
  const Vec sp = softmax(z);
  return (tp.array() / sp.array()).log();
}

BatchLossGrad ce_loss_batch(const Eigen::MatrixXd& logits,
                            const Eigen::VectorXi& targets,
                            const VariantConfig& config) {
  const Eigen::Index rows = logits.rows();
  if (rows == 0 || targets.size() != rows) {
    throw std::invalid_argument("batch logits/targets size mismatch");
  }
  BatchLossGrad out;
  out.grad.resize(rows, logits.cols());
  double total = 0.0;
  const double inv_b = 1.0 / static_cast<double>(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    LossGrad lg = ce_loss(logits.row(r).transpose(), targets[r], config);
    total += lg.loss;
    out.grad.row(r) = lg.grad.transpose() * inv_b;
  }
  out.loss = total * inv_b;
  return out;
}

}  // namespace smalt
