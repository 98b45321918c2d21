#pragma once

#include <Eigen/Core>
#include <functional>

#include "smalt/activations.hpp"
#include "smalt/data.hpp"
#include "smalt/nn.hpp"

namespace smalt {

struct GradCheckReport {
  double max_rel_error = 0.0;
  Eigen::Index worst_index = -1;
  bool passed = false;
  double step = 0.0;
};

// Central-difference check of an analytic gradient. Relative error per
// coordinate uses denominator max(|analytic|, |numeric|, 1e-8). Non-finite
// loss evaluations raise std::runtime_error naming the coordinate.
GradCheckReport check_loss_gradient(
    const std::function<double(const Vec&)>& loss_fn, const Vec& analytic_grad,
    const Vec& z, double step = 1e-5, double tolerance = 1e-6);

// Perturbs a seeded random subsample of at most max_params network
// parameters and compares backprop gradients against central differences of
// the batch loss. Run with dropout-free networks only.
GradCheckReport check_network_gradient(Network& network,
                                       const LabeledBatch& batch,
                                       double step = 1e-5,
                                       double tolerance = 1e-6,
                                       unsigned long seed = 0,
                                       int max_params = 200);

}  // namespace smalt
