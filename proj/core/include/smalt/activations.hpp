#pragma once

#include <Eigen/Core>
#include <optional>
#include <string>

#include "smalt/taylor_poly.hpp"

namespace smalt {

using Vec = Eigen::VectorXd;

enum class VariantKind { softmax, taylor, taylor_inf, sm_softmax, sm_taylor };

std::string to_string(VariantKind kind);
VariantKind variant_kind_from_string(const std::string& name);

// Which head is active: plain softmax, Taylor softmax of even order n, the
// Taylor_inf training mode, soft-margin softmax with margin m, or the
// SM-Taylor combination. Construct via the factories so the order/margin
// presence rules are enforced.
class VariantConfig {
 public:
  static VariantConfig softmax();
  static VariantConfig taylor(TaylorOrder n);
  static VariantConfig taylor_inf(TaylorOrder n);
  static VariantConfig sm_softmax(double margin);
  static VariantConfig sm_taylor(TaylorOrder n, double margin);

  // From (kind, order, margin) as parsed from a CLI or config file;
  // validates that order/margin are present exactly when required.
  static VariantConfig make(VariantKind kind, std::optional<int> order,
                            std::optional<double> margin);

  VariantKind kind() const { return kind_; }
  bool has_order() const { return order_.has_value(); }
  bool has_margin() const {
    return kind_ == VariantKind::sm_softmax || kind_ == VariantKind::sm_taylor;
  }
  TaylorOrder order() const;
  double margin() const { return margin_; }

  // e.g. "softmax", "taylor(n=4)", "sm_taylor(n=2,m=0.6)"
  std::string label() const;

 private:
  VariantConfig(VariantKind kind, std::optional<TaylorOrder> order,
                double margin);

  VariantKind kind_;
  std::optional<TaylorOrder> order_;
  double margin_ = 0.0;
};

// Throws std::domain_error unless every entry is finite and size >= 2.
void validate_logits(const Vec& z);

Vec softmax(const Vec& z);
Vec taylor_softmax(const Vec& z, TaylorOrder n);

// Margin m is subtracted from the target logit only (train-time loss shaping;
// inference drops the margin). target must be in [0, K).
Vec sm_softmax(const Vec& z, Eigen::Index target, double margin);
Vec sm_taylor_softmax(const Vec& z, Eigen::Index target, TaylorOrder n,
                      double margin);

// Argmax over the inference-time probability vector of the configured
// variant (margin forced to 0). Ties break to the lowest index. Note the
// Taylor polynomial is non-monotone on negatives, so this can differ from
// argmax of the raw logits.
Eigen::Index predict(const Vec& z, const VariantConfig& config);

}  // namespace smalt
