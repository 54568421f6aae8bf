#pragma once
// Numeric minimizers used as independent references for the closed forms.

#include <algorithm>
#include <cmath>
#include <vector>

namespace oracle {

// Minimizes 1/2 (g - v)^2 + lambda g over g in [0, 1] by bisection on the
// derivative g - v + lambda, which is increasing. Comparing function values
// (golden-section) cannot resolve the minimizer below sqrt(eps).
inline double l1_box_min(double v, double lambda) {
  auto df = [&](double g) { return g - v + lambda; };
  if (df(0.0) >= 0.0) return 0.0;
  if (df(1.0) <= 0.0) return 1.0;
  double a = 0.0, b = 1.0;
  for (int it = 0; it < 200 && b - a > 0.0; ++it) {
    const double c = 0.5 * (a + b);
    if (c == a || c == b) break;
    (df(c) < 0.0 ? a : b) = c;
  }
  return 0.5 * (a + b);
}

// argmin 1/2 |g - v|^2 + lambda |g|_2 over the box [0,1]^n, by projected
// gradient ascent on the dual: max over |u| <= lambda of
// min over the box of 1/2 |g - v|^2 + <u, g>, whose inner solution is clip(v - u).
inline std::vector<double> group_box_min(const std::vector<double>& v, double lambda) {
  const auto n = v.size();
  std::vector<double> u(n, 0.0), g(n), next(n);
  for (int it = 0; it < 20000; ++it) {
    for (std::size_t i = 0; i < n; ++i) g[i] = std::clamp(v[i] - u[i], 0.0, 1.0);
    double norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      next[i] = u[i] + g[i];
      norm += next[i] * next[i];
    }
    norm = std::sqrt(norm);
    const double s = norm > lambda ? lambda / norm : 1.0;
    double moved = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double nu = next[i] * s;
      moved = std::max(moved, std::abs(nu - u[i]));
      u[i] = nu;
    }
    if (moved < 1e-16) break;
  }
  for (std::size_t i = 0; i < n; ++i) g[i] = std::clamp(v[i] - u[i], 0.0, 1.0);
  return g;
}

}  // namespace oracle
