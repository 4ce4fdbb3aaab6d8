#include "daopt/quadrature.hpp"

#include <algorithm>

namespace daopt {

double gaussian_pdf(double x, double mean, double std_dev) {
  if (!(std_dev > 0.0)) throw InvalidParameter("gaussian_pdf: std_dev must be positive");
  const double z = (x - mean) / std_dev;
  return kInvSqrt2Pi * std::exp(-0.5 * z * z) / std_dev;
}

double standard_normal_mass(double lo, double hi) {
  if (hi <= lo) return 0.0;
  // erfc keeps relative accuracy in the tails.
  const double s = std::numbers::sqrt2;
  if (lo >= 0.0) return 0.5 * (std::erfc(lo / s) - std::erfc(hi / s));
  if (hi <= 0.0) return 0.5 * (std::erfc(-hi / s) - std::erfc(-lo / s));
  return 1.0 - 0.5 * (std::erfc(-lo / s) + std::erfc(hi / s));
}

double QuadratureGrid::total_mass() const {
  double acc = 0.0;
  for (double w : weights) acc += w;
  return acc;
}

QuadratureGrid build_grid(double mean, double std_dev, double truncation, std::size_t n) {
  if (!(std_dev > 0.0) || !std::isfinite(std_dev)) throw InvalidParameter("build_grid: std_dev must be positive");
  if (!(truncation > 0.0) || !std::isfinite(truncation)) throw InvalidParameter("build_grid: truncation must be positive");
  if (n < 2) throw InvalidParameter("build_grid: need at least 2 nodes");
  if (!std::isfinite(mean)) throw InvalidParameter("build_grid: mean must be finite");

  QuadratureGrid g;
  g.mean = mean;
  g.std_dev = std_dev;
  g.truncation = truncation;
  g.nodes.resize(n);
  g.weights.resize(n);
  const double dz = 2.0 * truncation / static_cast<double>(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    // Standardized coordinate, built symmetrically so mirrored nodes match exactly.
    const double z = (static_cast<double>(i) - 0.5 * static_cast<double>(n - 1)) * dz;
    g.nodes[i] = mean + std_dev * z;
    const double lo = std::max(z - 0.5 * dz, -truncation);
    const double hi = std::min(z + 0.5 * dz, truncation);
    g.weights[i] = standard_normal_mass(lo, hi);
  }
  return g;
}

UniformAxis UniformAxis::symmetric(double half_width, std::size_t n) {
  if (!(half_width > 0.0) || n < 2) throw InvalidParameter("UniformAxis: need positive width and n >= 2");
  UniformAxis a;
  a.count = n;
  a.step = 2.0 * half_width / static_cast<double>(n - 1);
  a.origin = -half_width;
  return a;
}

double interpolate(const UniformAxis& axis, const std::vector<double>& values, double x) {
  if (x <= axis.origin) return values.front();
  const double t = (x - axis.origin) / axis.step;
  const auto i = static_cast<std::size_t>(t);
  if (i + 1 >= axis.count) return values.back();
  const double f = t - static_cast<double>(i);
  return values[i] + f * (values[i + 1] - values[i]);
}

}  // namespace daopt
