#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>

#include "stosca/types.hpp"

namespace stosca {

enum class LossKind { Squared, CrossEntropy };

/// Output nonlinearity of the last layer.
enum class OutputHead { Identity, Sigmoid };

inline OutputHead head_for(LossKind loss) {
  return loss == LossKind::Squared ? OutputHead::Identity : OutputHead::Sigmoid;
}

inline std::string_view to_string(LossKind loss) {
  return loss == LossKind::Squared ? "squared" : "cross_entropy";
}

inline LossKind parse_loss(std::string_view name) {
  if (name == "squared" || name == "mse") return LossKind::Squared;
  if (name == "cross_entropy" || name == "ce" || name == "logistic") return LossKind::CrossEntropy;
  throw std::invalid_argument("unknown loss '" + std::string(name) + "'");
}

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// log(1 + exp(z)) without overflow.
inline double softplus(double z) {
  return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

namespace detail {

inline void check_cross_entropy_args(double y, double f) {
  if (!(f > 0.0 && f < 1.0)) {
    throw std::domain_error("cross-entropy loss needs f in (0,1), got " + std::to_string(f));
  }
  if (y != 0.0 && y != 1.0) {
    throw std::domain_error("cross-entropy loss needs a {0,1} target, got " + std::to_string(y));
  }
}

}  // namespace detail

/// Squared: (y - f)^2. CrossEntropy: -[y log f + (1-y) log(1-f)].
inline double loss_value(LossKind loss, double y, double f) {
  if (loss == LossKind::Squared) {
    const double r = y - f;
    return r * r;
  }
  detail::check_cross_entropy_args(y, f);
  return -(y * std::log(f) + (1.0 - y) * std::log1p(-f));
}

/// d loss / d f.
inline double loss_derivative(LossKind loss, double y, double f) {
  if (loss == LossKind::Squared) return -2.0 * (y - f);
  detail::check_cross_entropy_args(y, f);
  return -y / f + (1.0 - y) / (1.0 - f);
}

/// Cross-entropy of sigmoid(z) against y, evaluated from the logit.
inline double cross_entropy_from_logit(double y, double z) { return softplus(z) - y * z; }

}  // namespace stosca
