#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace daopt {

/// Raised for out-of-range configuration or call parameters.
class InvalidParameter : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a computation meets a non-finite value.
class NumericError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

inline constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double gaussian_pdf(double x, double mean, double std_dev);

/// Probability that a standard normal variable lies in [lo, hi].
double standard_normal_mass(double lo, double hi);

/// Uniform discretization of N(mean, std_dev^2) on
/// [mean - c*std_dev, mean + c*std_dev]. Node i carries the Gaussian mass of
/// its cell [node - dx/2, node + dx/2] clipped to the truncation interval, so
/// the weights add up to the truncated mass and are close to pdf(node)*dx.
struct QuadratureGrid {
  std::vector<double> nodes;
  std::vector<double> weights;
  double mean = 0.0;
  double std_dev = 1.0;
  double truncation = 5.0;

  std::size_t size() const { return nodes.size(); }
  double spacing() const { return nodes[1] - nodes[0]; }
  double lower() const { return nodes.front(); }
  double upper() const { return nodes.back(); }
  double total_mass() const;
};

QuadratureGrid build_grid(double mean, double std_dev, double truncation, std::size_t n);

/// Sum of weights[i] * f(nodes[i]). Throws NumericError if f is not finite
/// at some node.
template <class F>
double expect(const QuadratureGrid& grid, F&& f) {
  double acc = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double v = f(grid.nodes[i]);
    if (!std::isfinite(v)) {
      throw NumericError("expect: integrand is not finite at node " + std::to_string(grid.nodes[i]));
    }
    acc += grid.weights[i] * v;
  }
  return acc;
}

/// Evenly spaced axis used to tabulate estimators.
struct UniformAxis {
  double origin = 0.0;
  double step = 1.0;
  std::size_t count = 0;

  static UniformAxis symmetric(double half_width, std::size_t n);

  double node(std::ptrdiff_t i) const { return origin + step * static_cast<double>(i); }
  double upper() const { return node(static_cast<std::ptrdiff_t>(count) - 1); }
  std::size_t clamp(std::ptrdiff_t i) const {
    if (i < 0) return 0;
    if (i >= static_cast<std::ptrdiff_t>(count)) return count - 1;
    return static_cast<std::size_t>(i);
  }
};

/// Linear interpolation of values tabulated on `axis`, clamped to the end
/// values outside the axis.
double interpolate(const UniformAxis& axis, const std::vector<double>& values, double x);

/// Visits the axis nodes y_j with |y_j - center| <= truncation (indices may
/// fall outside the axis; callers clamp) and hands each one the weight
/// step * phi(y_j - center) together with the offset y_j - center, where phi
/// is the unit normal pdf. This is a unit-variance noise expectation whose
/// sample points sit on the axis nodes, so estimators tabulated on the axis
/// are read without interpolation. The pdf values come from a two-term
/// multiplicative recurrence instead of one exp per node.
template <class F>
void for_each_noise_node(const UniformAxis& axis, double center, double truncation, F&& visit) {
  const double h = axis.step;
  const double lo = std::ceil((center - truncation - axis.origin) / h);
  const double hi = std::floor((center + truncation - axis.origin) / h);
  if (!(std::abs(lo) < 1e15 && std::abs(hi) < 1e15)) {
    throw NumericError("noise expectation: center " + std::to_string(center) + " is out of range");
  }
  const auto first = static_cast<std::ptrdiff_t>(lo);
  const auto last = static_cast<std::ptrdiff_t>(hi);
  if (last < first) return;
  double u = axis.node(first) - center;
  double e = h * kInvSqrt2Pi * std::exp(-0.5 * u * u);
  double r = std::exp(-u * h - 0.5 * h * h);
  const double q = std::exp(-h * h);
  for (std::ptrdiff_t j = first; j <= last; ++j) {
    visit(j, e, u);
    e *= r;
    r *= q;
    u += h;
  }
}

}  // namespace daopt
