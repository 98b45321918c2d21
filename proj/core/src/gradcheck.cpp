#include "smalt/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "smalt/losses.hpp"

namespace smalt {
namespace {

double rel_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

void require_finite(double v, Eigen::Index coord) {
  if (!std::isfinite(v)) {
    throw std::runtime_error("gradcheck: non-finite loss at coordinate " +
                             std::to_string(coord));
  }
}

}  // namespace

GradCheckReport check_loss_gradient(
    const std::function<double(const Vec&)>& loss_fn, const Vec& analytic_grad,
    const Vec& z, double step, double tolerance) {
  if (analytic_grad.size() != z.size()) {
    throw std::invalid_argument("gradient/input size mismatch");
  }
  GradCheckReport report;
  report.step = step;
  Vec probe = z;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    probe[i] = z[i] + step;
    const double up = loss_fn(probe);
    require_finite(up, i);
    probe[i] = z[i] - step;
    const double down = loss_fn(probe);
    require_finite(down, i);
    probe[i] = z[i];
    const double numeric = (up - down) / (2.0 * step);
    const double err = rel_error(analytic_grad[i], numeric);
    if (err > report.max_rel_error) {
      report.max_rel_error = err;
      report.worst_index = i;
    }
  }
  report.passed = report.max_rel_error < tolerance;
  return report;
}

GradCheckReport check_network_gradient(Network& network,
                                       const LabeledBatch& batch,
                                       double step, double tolerance,
                                       unsigned long seed, int max_params) {
  batch.validate();

  // Analytic pass.
  Mat logits = network.forward(batch.features, true);
  network.backward(logits, batch.labels);
  std::vector<ParamView> params = network.params();
  std::vector<Vec> analytic;
  for (const ParamView& p : params) {
    analytic.emplace_back(Eigen::Map<Vec>(p.grad, p.size));
    Eigen::Map<Vec>(p.grad, p.size).setZero();
  }

  // Flat index space over all parameters, subsampled.
  Eigen::Index total = 0;
  for (const ParamView& p : params) total += p.size;
  std::vector<Eigen::Index> flat(static_cast<std::size_t>(total));
  std::iota(flat.begin(), flat.end(), 0);
  std::mt19937 rng(static_cast<std::uint32_t>(seed));
  std::shuffle(flat.begin(), flat.end(), rng);
  const std::size_t count =
      std::min<std::size_t>(flat.size(), static_cast<std::size_t>(max_params));

  auto eval_loss = [&] {
    return ce_loss_batch(network.forward(batch.features, false), batch.labels,
                         network.head())
        .loss;
  };

  GradCheckReport report;
  report.step = step;
  for (std::size_t s = 0; s < count; ++s) {
    Eigen::Index idx = flat[s];
    std::size_t tensor = 0;
    while (idx >= params[tensor].size) {
      idx -= params[tensor].size;
      ++tensor;
    }
    double* w = params[tensor].value + idx;
    const double saved = *w;
    *w = saved + step;
    const double up = eval_loss();
    require_finite(up, flat[s]);
    *w = saved - step;
    const double down = eval_loss();
    require_finite(down, flat[s]);
    *w = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double err = rel_error(analytic[tensor][idx], numeric);
    if (err > report.max_rel_error) {
      report.max_rel_error = err;
      report.worst_index = flat[s];
    }
  }
  report.passed = report.max_rel_error < tolerance;
  return report;
}

}  // namespace smalt
