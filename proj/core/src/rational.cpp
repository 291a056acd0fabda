#include "senn/rational.hpp"

namespace senn {

RationalDerivatives rational_derivatives(const RationalParams& p, double x) {
  const double q = 1.0 + x * x;
  RationalDerivatives d;
  d.dy_dx = rational_dx(p, x);
  d.dy_dtheta = {x, 1.0 / q, x / q};
  d.d2y_dx2 = rational_d2x(p, x);
  return d;
}

}  // namespace senn
