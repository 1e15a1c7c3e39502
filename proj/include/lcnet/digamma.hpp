#pragma once

#include <cmath>
#include <stdexcept>

namespace lcnet::info {

// Digamma psi(x) = d/dx ln Gamma(x) for x > 0.
// Recurrence pushes the argument above 10, then the Bernoulli asymptotic
// series applies; absolute error stays below 1e-12 on (0, inf).
inline double digamma(double x) {
  if (!(x > 0.0)) {
    throw std::domain_error("digamma: argument must be positive");
  }
  double result = 0.0;
  while (x < 10.0) {
    result -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  const double series =
      inv2 * (1.0 / 12.0 -
              inv2 * (1.0 / 120.0 -
                      inv2 * (1.0 / 252.0 -
                              inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0)))));
  return result + std::log(x) - 0.5 * inv - series;
}

}  // namespace lcnet::info
