#pragma once

#include <array>

namespace senn {

// σ(x) = αx + (β + γx)/(1 + x²). (1, 0, 0) is the identity.
struct RationalParams {
  double alpha = 1.0;
  double beta = 0.0;
  double gamma = 0.0;

  static constexpr RationalParams identity() { return {1.0, 0.0, 0.0}; }
  bool operator==(const RationalParams&) const = default;
};

struct RationalDerivatives {
  double dy_dx = 0.0;
  std::array<double, 3> dy_dtheta{};  // d/dα, d/dβ, d/dγ
  double d2y_dx2 = 0.0;
};

inline double rational_eval(const RationalParams& p, double x) {
  return p.alpha * x + (p.beta + p.gamma * x) / (1.0 + x * x);
}

inline double rational_dx(const RationalParams& p, double x) {
  const double q = 1.0 + x * x;
  return p.alpha + (p.gamma - 2.0 * p.beta * x - p.gamma * x * x) / (q * q);
}

inline double rational_d2x(const RationalParams& p, double x) {
  const double q = 1.0 + x * x;
  return 2.0 * (p.beta * (3.0 * x * x - 1.0) + p.gamma * x * (x * x - 3.0)) / (q * q * q);
}

RationalDerivatives rational_derivatives(const RationalParams& p, double x);

}  // namespace senn
