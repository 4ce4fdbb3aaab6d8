#pragma once

// Deterministic annealing over randomized piecewise-affine controllers.
//
// A controller partitions its input grid softly: node x uses cell m with
// probability p(m|x). Each cell carries `arity` affine maps (one per
// controller sharing the partition). At temperature T the engine minimizes
// the free energy F = J - T*H, where J is the expected cost reported by a
// Problem and H is the conditional entropy of the partition.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "daopt/quadrature.hpp"

namespace daopt {

struct LocalModel {
  double slope = 0.0;
  double intercept = 0.0;

  double operator()(double x) const { return slope * x + intercept; }
  bool operator==(const LocalModel&) const = default;
};

/// Dense row-major matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Cells of a randomized partition over `grid`, with `arity` affine maps per
/// cell and association probabilities assoc(node, cell).
struct RandomizedController {
  std::shared_ptr<const QuadratureGrid> grid;
  std::size_t arity = 1;
  std::vector<LocalModel> params;  // models() * arity, cell-major
  Matrix assoc;

  std::size_t models() const { return arity == 0 ? 0 : params.size() / arity; }
  std::span<LocalModel> cell(std::size_t m) { return {params.data() + m * arity, arity}; }
  std::span<const LocalModel> cell(std::size_t m) const { return {params.data() + m * arity, arity}; }

  /// Total probability mass sum_x w_x p(m|x) carried by cell m.
  double mass(std::size_t m) const;
  /// Index of the most probable cell at `node` (lowest index on ties).
  std::size_t dominant(std::size_t node) const;

  static RandomizedController single(std::shared_ptr<const QuadratureGrid> grid, std::vector<LocalModel> cell);
};

struct Schedule {
  double t_init = 5.0;
  double alpha = 0.95;
  double t_min = 5e-4;
  double perturb_eps = 1e-2;
  double merge_tol = 1e-3;
  double inner_tol = 1e-7;
  /// Cycles also continue while some parameter still moves by more than this.
  double param_tol = 1e-6;
  int max_inner_iters = 200;
  int max_models = 64;
  std::uint64_t rng_seed = 1;

  /// Throws InvalidParameter naming the offending field.
  void validate() const;
};

struct TraceRecord {
  double temperature = 0.0;
  double cost = 0.0;
  double entropy = 0.0;
  double free_energy = 0.0;
  std::size_t models = 0;
};

using AnnealTrace = std::vector<TraceRecord>;

enum class GradientMode { analytic, finite_difference };

/// A control problem whose randomized controllers all read the same input
/// grid. Dependent controllers (conditional-mean estimators) live inside the
/// problem and are refreshed by update_dependents.
class Problem {
 public:
  virtual ~Problem() = default;

  virtual std::size_t arity() const = 0;
  virtual std::shared_ptr<const QuadratureGrid> input_grid() const = 0;

  /// Called once per temperature before the inner cycles.
  virtual void prepare(const RandomizedController&) {}
  virtual void update_dependents(const RandomizedController& controller) = 0;

  /// Conditional cost E{f | cell, x} of serving `node` with the affine maps in
  /// `cell`, holding dependent controllers fixed. When `grad` is non-empty it
  /// receives d/d(slope, intercept) for every map, i.e. 2 * arity entries.
  virtual double point_cost(std::size_t node, std::span<const LocalModel> cell, std::span<double> grad) const = 0;

  virtual GradientMode gradient_mode() const { return GradientMode::analytic; }

  /// Best affine (single-cell) cost; scales the default initial temperature.
  virtual double affine_baseline() const = 0;

  double association_cost(const RandomizedController& c, std::size_t node, std::size_t m) const {
    return point_cost(node, c.cell(m), {});
  }
  Matrix cost_matrix(const RandomizedController& c) const;
  double expected_cost(const RandomizedController& c) const;
};

/// Probabilities below this are left out of cost sums and estimator updates.
inline constexpr double kNegligibleProbability = 1e-16;

Matrix gibbs_update(const Matrix& costs, double temperature);
double entropy(const RandomizedController& controller);
inline double free_energy(double cost, double entropy_value, double temperature) {
  return cost - temperature * entropy_value;
}

/// Copies every cell and perturbs the copy; each probability column is split
/// evenly between original and copy. Returns the input unchanged if the
/// doubled count would exceed `max_models`.
RandomizedController duplicate_and_perturb(const RandomizedController& controller, double eps, std::mt19937_64& rng,
                                           int max_models = 1 << 30);

/// Coalesces cells whose parameters are within `tol` (max norm), taking the
/// transitive closure of the relation. Merged parameters are the
/// mass-weighted mean; probability columns are summed.
RandomizedController merge_models(const RandomizedController& controller, double tol);

struct TemperatureResult {
  RandomizedController controller;
  double temperature = 0.0;
  double cost = 0.0;
  double entropy = 0.0;
  double free_energy = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> cycle_free_energy;  // F after each cycle
};

TemperatureResult optimize_at_temperature(Problem& problem, RandomizedController controller, double temperature,
                                          const Schedule& schedule);

struct QuenchResult {
  RandomizedController controller;
  double initial_cost = 0.0;
  double cost = 0.0;
  int iterations = 0;
  std::vector<double> cost_history;
};

QuenchResult quench(Problem& problem, RandomizedController controller, const Schedule& schedule);

struct DescentStep {
  double cost = 0.0;
  double max_change = 0.0;  // largest parameter move, max norm
};

/// One preconditioned gradient step per cell with Armijo backtracking on the
/// cost term, probabilities and dependents held fixed.
DescentStep descend_parameters(const Problem& problem, RandomizedController& controller);

/// Gradient of the cost term with respect to the parameters of cell m, from
/// the problem's analytic derivatives or central differences.
std::vector<double> cell_gradient(const Problem& problem, const RandomizedController& controller, std::size_t m);

struct AnnealObserver {
  /// After each temperature's optimization, before merging.
  std::function<void(std::size_t index, const TemperatureResult&)> on_temperature;
};

struct AnnealResult {
  RandomizedController controller;
  AnnealTrace trace;
  double cost = 0.0;
  bool hit_model_cap = false;
  int unconverged_temperatures = 0;
};

AnnealResult anneal(Problem& problem, const Schedule& schedule, const AnnealObserver& observer = {});

/// Drops cells that carry no probability anywhere.
RandomizedController prune_unused(const RandomizedController& controller);

}  // namespace daopt
