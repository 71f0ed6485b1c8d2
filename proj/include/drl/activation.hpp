#pragma once

// Scalar activations, the sign-network angle map mu and its bounds, and the
// closed-form relu kernels with the analytic normalization operator.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>

#include "drl/error.hpp"
#include "drl/linalg.hpp"

namespace drl {

enum class ActivationKind { kSgn, kRelu, kSigmoid };

inline std::string_view to_string(ActivationKind kind) {
  switch (kind) {
    case ActivationKind::kSgn: return "sgn";
    case ActivationKind::kRelu: return "relu";
    case ActivationKind::kSigmoid: return "sigmoid";
  }
  return "?";
}

inline std::optional<ActivationKind> parse_activation(std::string_view name) {
  if (name == "sgn") return ActivationKind::kSgn;
  if (name == "relu") return ActivationKind::kRelu;
  if (name == "sigmoid") return ActivationKind::kSigmoid;
  return std::nullopt;
}

// Mean and variance of relu(Z) for Z ~ N(0, 1).
struct ReluNormConstants {
  static constexpr double m = std::numbers::inv_sqrtpi / std::numbers::sqrt2;  // 1/sqrt(2 pi)
  static constexpr double s_squared = 0.5 - 0.5 * std::numbers::inv_pi;        // 1/2 - 1/(2 pi)
  static double s() { return std::sqrt(s_squared); }
};

inline double sgn(double x) { return x >= 0.0 ? 1.0 : -1.0; }

inline double relu(double x) { return x > 0.0 ? x : 0.0; }

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// sgn(0) = +1.
inline double activate(ActivationKind kind, double x) {
  switch (kind) {
    case ActivationKind::kSgn: return sgn(x);
    case ActivationKind::kRelu: return relu(x);
    case ActivationKind::kSigmoid: return sigmoid(x);
  }
  return x;
}

namespace detail {

inline constexpr double kUnitTolerance = 1e-12;

inline double clamp_unit(double c, const char* where) {
  if (!(std::abs(c) <= 1.0 + kUnitTolerance)) {
    throw InvalidArgument(std::string(where) + ": argument outside [-1, 1]");
  }
  return std::clamp(c, -1.0, 1.0);
}

}  // namespace detail

// One-layer conditional mean of the cosine under sgn: (2/pi) asin(c).
inline double mu(double c) {
  return 2.0 * std::numbers::inv_pi * std::asin(detail::clamp_unit(c, "mu"));
}

// [1 - sqrt(2x)/pi] - mu(1 - x); nonnegative on [0, 1].
inline double mu_upper_bound_gap(double x) {
  detail::require(x >= 0.0 && x <= 1.0, "mu_upper_bound_gap: x outside [0, 1]");
  return (1.0 - std::numbers::inv_pi * std::sqrt(2.0 * x)) - mu(1.0 - x);
}

// Tight contraction constant of mu on [-mu0, mu0]. mu(c)/c increases on
// (0, 1), so the supremum sits at the endpoint.
inline double rho_for(double mu0) {
  detail::require(mu0 > 0.0 && mu0 < 1.0, "rho_for: mu0 must lie in (0, 1)");
  return mu(mu0) / mu0;
}

// E[relu(x) relu(y)] for standard normals with correlation c0.
inline double relu_plain_kernel(double c0) {
  const double c = detail::clamp_unit(c0, "relu_plain_kernel");
  const double theta = std::acos(c);
  const double sin_theta = std::sqrt(std::max(0.0, 1.0 - c * c));
  return 0.5 * c - c * theta * 0.5 * std::numbers::inv_pi + sin_theta * 0.5 * std::numbers::inv_pi;
}

// E[B(relu(x)) B(relu(y))] / c0, written with tan(theta) - sec(theta) =
// -cos(theta) / (1 + sin(theta)) so it stays finite near theta = pi/2.
inline double relu_bn_ratio(double c0) {
  const double c = detail::clamp_unit(c0, "relu_bn_ratio");
  if (c == 0.0) throw InvalidArgument("relu_bn_ratio: undefined at c0 = 0, use relu_bn_kernel");
  const double theta = std::acos(c);
  const double sin_theta = std::sqrt(std::max(0.0, 1.0 - c * c));
  return (std::numbers::pi - theta - c / (1.0 + sin_theta)) / (std::numbers::pi - 1.0);
}

// Mean-field cosine map of one relu layer followed by analytic normalization.
inline double relu_bn_kernel(double c0) {
  const double c = detail::clamp_unit(c0, "relu_bn_kernel");
  if (c == 0.0) return 0.0;
  return c * relu_bn_ratio(c);
}

// Elementwise (relu(v) - m) / s with the Gaussian relu moments.
inline Vector analytic_bn(ActivationKind kind, const Vector& v) {
  if (kind != ActivationKind::kRelu) {
    throw UnsupportedOperation("analytic_bn: analytic constants exist only for relu");
  }
  const double inv_s = 1.0 / ReluNormConstants::s();
  return v.unaryExpr([inv_s](double x) { return (relu(x) - ReluNormConstants::m) * inv_s; });
}

}  // namespace drl
