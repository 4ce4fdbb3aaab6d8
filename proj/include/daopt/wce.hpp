#pragma once

// Witsenhausen's counterexample:
//   U1 = g1(X0), X1 = X0 + U1, U2 = g2(X1 + W), X2 = X1 - U2,
//   J = E{k^2 U1^2 + X2^2},  X0 ~ N(0, sigma^2), W ~ N(0, 1).
// g1 is randomized piecewise affine; g2 is the conditional mean E{X1 | Y2}
// tabulated on a uniform y axis.

#include <functional>
#include <memory>
#include <vector>

#include "daopt/engine.hpp"

namespace daopt {

struct WceParams {
  double k = 0.2;
  double sigma_x0 = 5.0;

  void validate() const;
};

struct GridOptions {
  std::size_t x0_nodes = 1001;
  double truncation = 5.0;
  std::size_t y_nodes = 1001;
  double noise_truncation = 8.0;
  /// Optimize on x0 >= 0 only and extend every map as an odd function.
  bool symmetric = false;
};

/// The non-negative half of a symmetric grid. Each node keeps the mass of
/// itself and its mirror image.
QuadratureGrid fold_grid(const QuadratureGrid& full);

/// Hard-assigned first-stage maps over the full x0 grid.
struct MappingTable {
  std::vector<double> x0;
  std::vector<double> f1;
  std::vector<double> g2;  // side-channel map, empty for WCE
  std::vector<std::size_t> cell;
};

/// Hard assignment (most probable cell per node) over the full grid. In
/// symmetric mode the controller lives on the folded half and negative nodes
/// use the mirrored maps, numbered after the controller's own cells.
MappingTable hard_mapping(const QuadratureGrid& full_grid, const RandomizedController& controller, bool symmetric);

struct CostSplit {
  double control = 0.0;     // k^2 E{U1^2}
  double estimation = 0.0;  // E{X2^2}
  double total() const { return control + estimation; }
};

class WceProblem : public Problem {
 public:
  explicit WceProblem(WceParams params, GridOptions grid = {});

  std::size_t arity() const override { return 1; }
  std::shared_ptr<const QuadratureGrid> input_grid() const override { return input_grid_; }
  void update_dependents(const RandomizedController& controller) override { update_g2(controller); }
  double point_cost(std::size_t node, std::span<const LocalModel> cell, std::span<double> grad) const override;
  double affine_baseline() const override;

  /// Conditional-mean second stage for the given first stage.
  void update_g2(const RandomizedController& controller);
  CostSplit cost_split(const RandomizedController& controller) const;
  MappingTable mapping(const RandomizedController& controller) const;

  /// E_W{(x1 - g2(x1 + W))^2} and its derivative in x1.
  std::pair<double, double> estimation_error(double x1) const;

  const WceParams& params() const { return params_; }
  bool symmetric() const { return symmetric_; }
  const QuadratureGrid& x0_grid() const { return *full_grid_; }
  const UniformAxis& y_axis() const { return y_axis_; }
  const std::vector<double>& g2_table() const { return g2_; }
  std::vector<double>& g2_table() { return g2_; }
  double g2(double y) const { return interpolate(y_axis_, g2_, y); }

 private:
  WceParams params_;
  bool symmetric_;
  std::shared_ptr<const QuadratureGrid> full_grid_;
  std::shared_ptr<const QuadratureGrid> input_grid_;
  UniformAxis y_axis_;
  double noise_truncation_;
  std::vector<double> g2_;
};

struct AffineOptimum {
  double slope = 0.0;  // f1(x0) = slope * x0
  double cost = 0.0;
};

/// Best linear first stage f1 = c*x0 with its (linear) MMSE second stage,
/// by golden-section search of k^2 (c-1)^2 s^2 + c^2 s^2 / (c^2 s^2 + 1).
AffineOptimum best_affine_cost(const WceParams& params, double lo = 0.0, double hi = 1.5);

/// Deterministic controller that reproduces a tabulated f1 (rows sorted by
/// x0; a repeated x0 marks a jump). One affine cell per table interval,
/// clamped to the end rows outside the table.
RandomizedController controller_from_mapping(std::shared_ptr<const QuadratureGrid> grid, const std::vector<double>& xs,
                                             const std::vector<double>& f1);

/// Controller f1 = f(x0) sampled node by node (constant cells, consecutive
/// equal values shared).
RandomizedController controller_from_function(std::shared_ptr<const QuadratureGrid> grid,
                                              const std::function<double(double)>& f1);

/// Number of steps of f1 on the positive half axis. A step is a maximal run
/// of nodes served by one cell; adjacent runs whose values meet within
/// `jump_tol` form a single step. A step that straddles the origin counts as
/// one half unless it is the only one.
double count_steps(const MappingTable& mapping, double jump_tol = 0.5);

struct StepShape {
  double x_begin = 0.0;
  double x_end = 0.0;
  std::vector<double> x;
  std::vector<double> deviation;  // f1 minus the chord through the step's end points
};

/// Steps of f1 on the positive half axis and their deviation from straight lines.
std::vector<StepShape> step_shapes(const MappingTable& mapping, double jump_tol = 0.5);

}  // namespace daopt
