#include "smalt/activations.hpp"

#include <cmath>
#include <iostream>
#include <stdexcept>

namespace smalt {

std::string to_string(VariantKind kind) {
  switch (kind) {
    case VariantKind::softmax: return "softmax";
    case VariantKind::taylor: return "taylor";
    case VariantKind::taylor_inf: return "taylor_inf";
    case VariantKind::sm_softmax: return "sm_softmax";
    case VariantKind::sm_taylor: return "sm_taylor";
  }
  throw std::logic_error("unreachable");
}

VariantKind variant_kind_from_string(const std::string& name) {
  if (name == "softmax") return VariantKind::softmax;
  if (name == "taylor") return VariantKind::taylor;
  if (name == "taylor_inf") return VariantKind::taylor_inf;
  if (name == "sm_softmax") return VariantKind::sm_softmax;
  if (name == "sm_taylor") return VariantKind::sm_taylor;
  throw std::invalid_argument("unknown variant: " + name);
}

VariantConfig::VariantConfig(VariantKind kind, std::optional<TaylorOrder> order,
                             double margin)
    : kind_(kind), order_(order), margin_(margin) {
  if (has_margin()) {
    if (!(margin >= 0.0) || !std::isfinite(margin)) {
      throw std::invalid_argument("margin must be a finite value >= 0");
    }
    if (margin > 0.9) {
      std::cerr << "warning: margin " << margin
                << " is outside the studied sweep range [0, 0.9]\n";
    }
  }
}

VariantConfig VariantConfig::softmax() {
  return VariantConfig(VariantKind::softmax, std::nullopt, 0.0);
}
VariantConfig VariantConfig::taylor(TaylorOrder n) {
  return VariantConfig(VariantKind::taylor, n, 0.0);
}
VariantConfig VariantConfig::taylor_inf(TaylorOrder n) {
  return VariantConfig(VariantKind::taylor_inf, n, 0.0);
}
VariantConfig VariantConfig::sm_softmax(double margin) {
  return VariantConfig(VariantKind::sm_softmax, std::nullopt, margin);
}
VariantConfig VariantConfig::sm_taylor(TaylorOrder n, double margin) {
  return VariantConfig(VariantKind::sm_taylor, n, margin);
}

VariantConfig VariantConfig::make(VariantKind kind, std::optional<int> order,
                                  std::optional<double> margin) {
  const bool needs_order = kind == VariantKind::taylor ||
                           kind == VariantKind::taylor_inf ||
                           kind == VariantKind::sm_taylor;
  const bool needs_margin =
      kind == VariantKind::sm_softmax || kind == VariantKind::sm_taylor;
  if (needs_order && !order) {
    throw std::invalid_argument("variant " + to_string(kind) +
                                " requires --order");
  }
  if (!needs_order && order) {
    throw std::invalid_argument("variant " + to_string(kind) +
                                " does not take an order");
  }
  if (needs_margin && !margin) {
    throw std::invalid_argument("variant " + to_string(kind) +
                                " requires --margin");
  }
  if (!needs_margin && margin) {
    throw std::invalid_argument("variant " + to_string(kind) +
                                " does not take a margin");
  }
  std::optional<TaylorOrder> n;
  if (order) n = TaylorOrder(*order);
  return VariantConfig(kind, n, margin.value_or(0.0));
}

TaylorOrder VariantConfig::order() const {
  if (!order_) {
    throw std::logic_error("variant " + to_string(kind_) + " has no order");
  }
  return *order_;
}

std::string VariantConfig::label() const {
  std::string s = to_string(kind_);
  if (order_ || has_margin()) {
    s += "(";
    if (order_) s += "n=" + std::to_string(order_->value());
    if (has_margin()) {
      if (order_) s += ",";
      char buf[32];
      std::snprintf(buf, sizeof(buf), "m=%g", margin_);
      s += buf;
    }
    s += ")";
  }
  return s;
}

void validate_logits(const Vec& z) {
  if (z.size() < 2) {
    throw std::domain_error("logit vector must have length >= 2");
  }
  if (!z.allFinite()) {
    throw std::domain_error("logit vector contains non-finite entries");
  }
}

Vec softmax(const Vec& z) {
  validate_logits(z);
  const double zmax = z.maxCoeff();
  Vec p = (z.array() - zmax).exp();
  p /= p.sum();
  return p;
}

Vec taylor_softmax(const Vec& z, TaylorOrder n) {
  validate_logits(z);
  const double inv_k = 1.0 / static_cast<double>(z.size());
  Vec p(z.size());
  double sum = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    // Scale by 1/K before summing so the normalizer cannot overflow even at
    // the clamp boundary.
    p[i] = eval_poly(z[i], n).value * inv_k;
    sum += p[i];
  }
  p /= sum;
  return p;
}

namespace {
Vec with_margin(const Vec& z, Eigen::Index target, double margin) {
  if (target < 0 || target >= z.size()) {
    throw std::out_of_range("target index out of range");
  }
  Vec adjusted = z;
  adjusted[target] -= margin;
  return adjusted;
}
}  // namespace

Vec sm_softmax(const Vec& z, Eigen::Index target, double margin) {
  return softmax(with_margin(z, target, margin));
}

Vec sm_taylor_softmax(const Vec& z, Eigen::Index target, TaylorOrder n,
                      double margin) {
  return taylor_softmax(with_margin(z, target, margin), n);
}

Eigen::Index predict(const Vec& z, const VariantConfig& config) {
  validate_logits(z);
  Vec p;
  switch (config.kind()) {
    case VariantKind::softmax:
    case VariantKind::sm_softmax:
      p = softmax(z);
      break;
    case VariantKind::taylor:
    case VariantKind::taylor_inf:
    case VariantKind::sm_taylor:
      p = taylor_softmax(z, config.order());
      break;
  }
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < p.size(); ++i) {
    if (p[i] > p[best]) best = i;  // strict: ties keep the lowest index
  }
  return best;
}

}  // namespace smalt
