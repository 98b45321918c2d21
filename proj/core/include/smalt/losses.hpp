#pragma once

#include <Eigen/Core>

#include "smalt/activations.hpp"
#include "smalt/taylor_poly.hpp"

namespace smalt {

// Cross-entropy value (nats) and its gradient with respect to the logits.
struct LossGrad {
  double loss;
  Vec grad;
};

// Checks target range; accepts a class index (one-hot targets are handled by
// the batch layer in nn).
void validate_target(const Vec& z, Eigen::Index target);

// loss = -log softmax(z)_t, grad = softmax(z) - y. Log-sum-exp stabilized.
LossGrad ce_loss_softmax(const Vec& z, Eigen::Index target);

// Exact Taylor-softmax cross entropy: grad_i = f^{n-1}(z_i) / sum_j f^n(z_j)
// - y_i * f^{n-1}(z_i) / f^n(z_i). Matches finite differences of the loss.
LossGrad ce_loss_taylor_exact(const Vec& z, Eigen::Index target,
                              TaylorOrder n);

// Taylor_inf: reports the same NLL as the exact variant but the gradient is
// the softmax-like direction Tsm(z) - y. Deliberately NOT the gradient of
// the reported loss for finite n; the two coincide as n grows.
LossGrad ce_loss_taylor_inf(const Vec& z, Eigen::Index target, TaylorOrder n);

// Soft-margin softmax cross entropy: softmax CE on the margin-adjusted
// logits (margin subtracted at the target index).
LossGrad ce_loss_sm(const Vec& z, Eigen::Index target, double margin);

// SM-Taylor cross entropy: exact chain-rule gradient through the polynomial
// on the margin-adjusted logits.
LossGrad ce_loss_sm_taylor(const Vec& z, Eigen::Index target, TaylorOrder n,
                           double margin);

// Dispatch on the variant config.
LossGrad ce_loss(const Vec& z, Eigen::Index target,
                 const VariantConfig& config);

// Elementwise log(taylor_softmax(z, n)_i / softmax(z)_i); diagnostic for the
// gap between the exact and softmax-like gradients.
Vec regularizer(const Vec& z, TaylorOrder n);

// Batch form used by the training loop: logits is B x K row-major, targets
// holds B class indices. loss is the mean over rows; grad is d(mean loss)/dz,
// i.e. the per-row gradient divided by B.
struct BatchLossGrad {
  double loss;
  Eigen::MatrixXd grad;
};
BatchLossGrad ce_loss_batch(const Eigen::MatrixXd& logits,
                            const Eigen::VectorXi& targets,
                            const VariantConfig& config);

}  // namespace smalt
