#pragma once

// Reference values computed without the library's own quadrature.

#include <cmath>
#include <functional>

namespace oracle {

/// Composite Simpson rule in long double.
inline long double simpson(const std::function<long double(long double)>& f, long double a, long double b, int n = 20000) {
  if (n % 2) ++n;
  const long double h = (b - a) / n;
  long double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4 : 2) * f(a + i * h);
  return s * h / 3;
}

inline long double unit_pdf(long double x) { return std::exp(-0.5L * x * x) / std::sqrt(2 * 3.141592653589793238462643383279L); }

inline double normal_mass(double lo, double hi) {
  if (hi <= lo) return 0.0;
  return static_cast<double>(simpson(unit_pdf, lo, hi));
}

/// Integral of x^4 phi(x) over [-c, c].
inline double truncated_fourth_moment(double c) {
  return static_cast<double>(simpson([](long double x) { return x * x * x * x * unit_pdf(x); }, -c, c));
}

}  // namespace oracle
