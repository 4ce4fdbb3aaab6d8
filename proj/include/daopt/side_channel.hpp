#pragma once

// Witsenhausen's counterexample with a side channel:
//   U1 = g1(X0), U2 = g2(X0), X1 = X0 + U1,
//   U3 = g3(X1 + W1, U2 + W2), X2 = X1 - U3,
//   J = E{k^2 U1^2 + X2^2 + lambda U2^2}.
// g1 and g2 share one partition of the x0 axis (arity 2 cells); g3 is the
// conditional mean E{X1 | Y1, Y3} tabulated on a 2-D grid.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "daopt/engine.hpp"
#include "daopt/wce.hpp"

namespace daopt {

struct SideChannelParams {
  double k = 0.2;
  double sigma_x0 = 5.0;
  double lambda = 0.0;
  double target_b_snr = 0.0;

  void validate() const;
};

struct SideChannelGrid {
  std::size_t x0_nodes = 1001;
  double truncation = 5.0;
  std::size_t y1_nodes = 201;
  std::size_t y3_nodes = 201;
  double noise_truncation = 8.0;
  bool symmetric = false;
};

/// Row-major table over y1 x y3.
struct EstimatorTable {
  UniformAxis y1;
  UniformAxis y3;
  std::vector<double> values;

  double at(std::size_t i, std::size_t j) const { return values[i * y3.count + j]; }
  double& at(std::size_t i, std::size_t j) { return values[i * y3.count + j]; }
  /// Bilinear interpolation, clamped to the table edges.
  double operator()(double y1v, double y3v) const;
};

class SideChannelProblem : public Problem {
 public:
  explicit SideChannelProblem(SideChannelParams params, SideChannelGrid grid = {});

  std::size_t arity() const override { return 2; }
  std::shared_ptr<const QuadratureGrid> input_grid() const override { return input_grid_; }
  /// Refits the y3 axis to the current range of u2 and recomputes g3.
  void prepare(const RandomizedController& controller) override;
  void update_dependents(const RandomizedController& controller) override { update_g3(controller); }
  double point_cost(std::size_t node, std::span<const LocalModel> cell, std::span<double> grad) const override;
  double affine_baseline() const override;

  void update_g3(const RandomizedController& controller);
  /// Sets the y3 axis to +-(max_u2 + noise truncation) with a spacing no finer
  /// than the y1 axis (at most y3_nodes nodes); g3 is reset to zero.
  void set_y3_range(double max_u2);

  /// E{X2^2 | x1, u2} and its derivatives in x1 and u2.
  struct Estimation {
    double value = 0.0;
    double d_x1 = 0.0;
    double d_u2 = 0.0;
  };
  Estimation estimation_error(double x1, double u2, bool with_gradient) const;

  const SideChannelParams& params() const { return params_; }
  bool symmetric() const { return symmetric_; }
  const QuadratureGrid& x0_grid() const { return *full_grid_; }
  const EstimatorTable& g3() const { return g3_; }
  /// Mutable access drops the assumption that g3 is odd.
  EstimatorTable& g3() {
    odd_table_ = false;
    return g3_;
  }

  /// Hard-assigned f1 and g2 over the full x0 grid.
  MappingTable mapping(const RandomizedController& controller) const;

 private:
  SideChannelParams params_;
  bool symmetric_;
  std::shared_ptr<const QuadratureGrid> full_grid_;
  std::shared_ptr<const QuadratureGrid> input_grid_;
  double noise_truncation_;
  std::size_t y3_nodes_;
  EstimatorTable g3_;
  // Symmetric mode: g3 was symmetrized by update_g3, so a point and its mirror
  // image have the same estimation error.
  bool odd_table_ = false;
};

/// Side-channel power E{U2^2} under the controller's association probabilities.
double snr_of(const RandomizedController& controller, const SideChannelProblem& problem);

/// Paired controller with f1 and u2 = g2(x0) taken node by node from
/// functions (constant cells, consecutive equal pairs shared).
RandomizedController paired_controller_from_functions(std::shared_ptr<const QuadratureGrid> grid,
                                                      const std::function<double(double)>& f1,
                                                      const std::function<double(double)>& g2);

struct LambdaSweepResult {
  double lambda = 0.0;
  double achieved_b_snr = 0.0;
  AnnealResult solution;
  std::vector<std::pair<double, double>> evaluations;  // (lambda, achieved b_SNR)
  std::string warning;
};

/// Searches lambda so that the annealed solution's power meets the target.
/// Scans `ladder` (ascending, starting from its midpoint) for a bracket, then
/// bisects. Throws InvalidParameter if the target exceeds what lambda = 0
/// achieves.
LambdaSweepResult sweep_lambda(const SideChannelParams& params, const SideChannelGrid& grid, const Schedule& schedule,
                               double target_b_snr, double tol,
                               std::vector<double> ladder = {0.0, 0.01, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0, 100.0},
                               int max_bisections = 6,
                               const std::function<void(double, double)>& on_evaluation = {},
                               const AnnealObserver& observer = {});

}  // namespace daopt
