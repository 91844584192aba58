#pragma once

#include <boost/math/special_functions/beta.hpp>
#include <boost/math/special_functions/erf.hpp>

#include <cmath>
#include <exception>
#include <limits>
#include <numbers>
#include <string>

#include "sysrisk/error.hpp"

namespace sysrisk::special {

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

/// Inverse of the standard normal CDF on (0, 1).
inline double normal_quantile(double u) {
  if (!(u > 0.0 && u < 1.0)) throw DomainError("normal_quantile: u must lie in (0,1)");
  return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * u);
}

inline double log_beta_function(double a, double b) {
  return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

inline double beta_pdf(double x, double a, double b) {
  if (x <= 0.0 || x >= 1.0) {
    if ((x == 0.0 && a < 1.0) || (x == 1.0 && b < 1.0)) return std::numeric_limits<double>::infinity();
    if (x == 0.0 && a == 1.0) return std::exp(-log_beta_function(a, b));
    if (x == 1.0 && b == 1.0) return std::exp(-log_beta_function(a, b));
    return 0.0;
  }
  return std::exp((a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x) - log_beta_function(a, b));
}

/// Regularised incomplete beta function I_x(a, b).
inline double incomplete_beta(double x, double a, double b) {
  if (!(a > 0.0 && b > 0.0)) throw DomainError("incomplete_beta: shape parameters must be positive");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  return boost::math::ibeta(a, b, x);
}

/// Solves I_x(a, b) = u for x.
inline double inverse_incomplete_beta(double u, double a, double b) {
  if (!(u > 0.0 && u < 1.0)) throw DomainError("inverse_incomplete_beta: u must lie in (0,1)");
  if (!(a > 0.0 && b > 0.0)) throw DomainError("inverse_incomplete_beta: shape parameters must be positive");
  try {
    return boost::math::ibeta_inv(a, b, u);
  } catch (const std::exception& e) {
    throw NumericalError(std::string("inverse_incomplete_beta: ") + e.what());
  }
}

}  // namespace sysrisk::special
