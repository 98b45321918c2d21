#include "smalt/taylor_poly.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <mutex>

namespace smalt {
namespace {

constexpr int kMaxOrder = TaylorOrder::kMax;

// 1/i! for i = 0..30.
const std::array<double, kMaxOrder + 1>& recip_factorials() {
  static const std::array<double, kMaxOrder + 1> table = [] {
    std::array<double, kMaxOrder + 1> t{};
    double f = 1.0;
    t[0] = 1.0;
    for (int i = 1; i <= kMaxOrder; ++i) {
      f *= i;
      t[i] = 1.0 / f;
    }
    return t;
  }();
  return table;
}

double clamp_to_range(double z, TaylorOrder n) {
  auto [lo, hi] = safe_input_range(n);
  if (z < lo) return lo;
  if (z > hi) return hi;
  return z;
}

// Golden-section minimization of the raw polynomial on [a, b].
double golden_min(int order, double a, double b, double tol) {
  constexpr double inv_phi = 0.6180339887498949;
  double x1 = b - inv_phi * (b - a);
  double x2 = a + inv_phi * (b - a);
  double f1 = eval_poly_raw(x1, order);
  double f2 = eval_poly_raw(x2, order);
  while (b - a > tol) {
    if (f1 < f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - inv_phi * (b - a);
      f1 = eval_poly_raw(x1, order);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + inv_phi * (b - a);
      f2 = eval_poly_raw(x2, order);
    }
  }
  return eval_poly_raw(0.5 * (a + b), order);
}

}  // namespace

double eval_poly_raw(double z, int order) {
  const auto& rf = recip_factorials();
  double acc = rf[static_cast<size_t>(order)];
  for (int i = order - 1; i >= 0; --i) {
    acc = acc * z + rf[static_cast<size_t>(i)];
  }
  return acc;
}

PolyValue eval_poly(double z, TaylorOrder n) {
  if (!std::isfinite(z)) {
    throw std::domain_error("eval_poly: non-finite input");
  }
  const double zc = clamp_to_range(z, n);
  return PolyValue{eval_poly_raw(zc, n.value()),
                   eval_poly_raw(zc, n.value() - 1)};
}

double poly_min_bound(TaylorOrder n) {
  static std::array<double, kMaxOrder + 1> cache{};
  static std::once_flag once;
  std::call_once(once, [] {
    for (int order = TaylorOrder::kMin; order <= kMaxOrder; order += 2) {
      // Dense grid on [-50, 0]; the minimizer (real root of the odd
      // order-(n-1) polynomial) sits near -0.3*n, well inside.
      constexpr int kGrid = 100000;
      double best_z = 0.0;
      double best_v = std::numeric_limits<double>::infinity();
      for (int i = 0; i <= kGrid; ++i) {
        const double z = -50.0 + 50.0 * i / kGrid;
        const double v = eval_poly_raw(z, order);
        if (v < best_v) {
          best_v = v;
          best_z = z;
        }
      }
      const double h = 50.0 / kGrid;
      cache[static_cast<size_t>(order)] =
          golden_min(order, best_z - h, best_z + h, 1e-10);
    }
  });
  return cache[static_cast<size_t>(n.value())];
}

std::pair<double, double> safe_input_range(TaylorOrder n) {
  // Solve z^n / n! < DBL_MAX / (n+1), i.e. keep every term and their sum
  // finite, then halve for headroom in downstream accumulations.
  const int order = n.value();
  const double log_max = std::log(std::numeric_limits<double>::max());
  const double hi =
      0.5 * std::exp((log_max - std::log(order + 1.0) +
                      std::lgamma(order + 1.0)) /
                     order);
  return {-hi, hi};
}

}  // namespace smalt
