#pragma once

#include <stdexcept>
#include <utility>

namespace smalt {

// Order of the Taylor expansion of exp(z). Only even orders in [2, 30] are
// accepted: the polynomial is strictly positive on the whole real line only
// for even orders, and beyond ~30 it is indistinguishable from exp in double
// precision for the logit ranges networks produce.
class TaylorOrder {
 public:
  static constexpr int kMin = 2;
  static constexpr int kMax = 30;

  explicit TaylorOrder(int n) : n_(n) {
    if (n < kMin || n > kMax || n % 2 != 0) {
      throw std::invalid_argument(
          "Taylor order must be an even integer in [2, 30], got " +
          std::to_string(n));
    }
  }

  int value() const { return n_; }

  friend bool operator==(TaylorOrder a, TaylorOrder b) { return a.n_ == b.n_; }

 private:
  int n_;
};

// Value of the order-n polynomial together with its derivative, which is the
// order-(n-1) polynomial evaluated at the same point.
struct PolyValue {
  double value;
  double derivative;
};

// Raw truncated exponential series sum_{i=0}^{order} z^i / i!, Horner scheme
// with precomputed reciprocal factorials. Accepts any order in [0, 30]; no
// clamping, no positivity guarantee (odd orders go negative).
double eval_poly_raw(double z, int order);

// Evaluates the order-n polynomial and its derivative. The input is clamped
// into safe_input_range(n) first, so the result is always finite and, since
// n is even, strictly positive. Throws std::domain_error on non-finite z.
PolyValue eval_poly(double z, TaylorOrder n);

// Positive lower bound of the order-n polynomial over the clamped input
// range, located by dense grid search on [-50, 0] plus golden-section
// refinement (the minimizer is the real root of the order-(n-1) polynomial,
// which lies in that interval for every supported n; for z > 0 the
// polynomial is increasing from 1). Results are cached per order.
double poly_min_bound(TaylorOrder n);

// Symmetric clamp range [-hi, hi] such that the polynomial cannot overflow
// double precision: hi solves hi^n / n! < DBL_MAX with headroom for the
// lower-order terms and downstream sums.
std::pair<double, double> safe_input_range(TaylorOrder n);

}  // namespace smalt
