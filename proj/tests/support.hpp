#pragma once

// Random soft controllers for property checks.

#include <memory>
#include <random>

#include "daopt/engine.hpp"

namespace support {

/// Soft controller with `models` cells and random associations. Arity 2 adds
/// a side-channel map per cell, zero when `zero_side` is set.
inline daopt::RandomizedController random_controller(const std::shared_ptr<const daopt::QuadratureGrid>& grid,
                                                     std::size_t models, std::mt19937_64& rng, std::size_t arity = 1,
                                                     bool zero_side = false) {
  std::uniform_real_distribution<double> slope(-1.2, 0.5), icpt(-6, 6), side(-1, 1), p(0.01, 1);
  daopt::RandomizedController c;
  c.grid = grid;
  c.arity = arity;
  for (std::size_t m = 0; m < models; ++m) {
    c.params.push_back({slope(rng), icpt(rng)});
    if (arity == 2) c.params.push_back(zero_side ? daopt::LocalModel{} : daopt::LocalModel{side(rng), 3 * side(rng)});
  }
  c.assoc = daopt::Matrix(grid->size(), models);
  for (std::size_t i = 0; i < grid->size(); ++i) {
    double s = 0;
    for (std::size_t m = 0; m < models; ++m) s += c.assoc(i, m) = p(rng);
    for (std::size_t m = 0; m < models; ++m) c.assoc(i, m) /= s;
  }
  return c;
}

/// Largest relative difference between the analytic gradient of `point_cost`
/// and central differences over `trials` random (node, cell) pairs.
template <class Problem, class Refresh>
double gradient_mismatch(Problem& problem, int trials, std::mt19937_64& rng, Refresh&& refresh) {
  const std::size_t arity = problem.arity();
  std::uniform_int_distribution<std::size_t> node(0, problem.input_grid()->size() - 1);
  std::uniform_real_distribution<double> slope(-1.2, 0.5), icpt(-6, 6), side(-1, 1);
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    if (t % 10 == 0) refresh(random_controller(problem.input_grid(), 3, rng, arity));
    const std::size_t i = node(rng);
    std::vector<daopt::LocalModel> cell{{slope(rng), icpt(rng)}};
    if (arity == 2) cell.push_back({side(rng), 3 * side(rng)});
    std::vector<double> grad(2 * arity);
    problem.point_cost(i, cell, grad);
    const double h = 1e-5;
    for (std::size_t d = 0; d < grad.size(); ++d) {
      auto plus = cell, minus = cell;
      (d % 2 ? plus[d / 2].intercept : plus[d / 2].slope) += h;
      (d % 2 ? minus[d / 2].intercept : minus[d / 2].slope) -= h;
      const double fd = (problem.point_cost(i, plus, {}) - problem.point_cost(i, minus, {})) / (2 * h);
      worst = std::max(worst, std::abs(grad[d] - fd) / std::max(1.0, std::abs(fd)));
    }
  }
  return worst;
}

}  // namespace support
