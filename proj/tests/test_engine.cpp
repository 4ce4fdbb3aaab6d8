#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "daopt/engine.hpp"

using namespace daopt;

namespace {

// Piecewise-affine fit of a step target, no dependent controllers.
class StepFit : public Problem {
 public:
  explicit StepFit(std::size_t n = 201, GradientMode mode = GradientMode::analytic)
      : grid_(std::make_shared<QuadratureGrid>(build_grid(0, 1, 3, n))), mode_(mode) {}

  std::size_t arity() const override { return 1; }
  std::shared_ptr<const QuadratureGrid> input_grid() const override { return grid_; }
  void update_dependents(const RandomizedController&) override {}
  double point_cost(std::size_t node, std::span<const LocalModel> cell, std::span<double> grad) const override {
    const double x = grid_->nodes[node];
    const double r = cell[0](x) - target(x);
    if (!grad.empty()) {
      grad[0] = 2 * r * x;
      grad[1] = 2 * r;
    }
    return r * r;
  }
  GradientMode gradient_mode() const override { return mode_; }
  double affine_baseline() const override { return 0.25; }

  static double target(double x) { return (x < 0 ? -1.0 : 1.0) + 0.1 * x; }

 private:
  std::shared_ptr<const QuadratureGrid> grid_;
  GradientMode mode_;
};

RandomizedController random_controller(const std::shared_ptr<const QuadratureGrid>& grid, std::size_t models,
                                       std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-2, 2), p(0.01, 1);
  RandomizedController c;
  c.grid = grid;
  for (std::size_t m = 0; m < models; ++m) c.params.push_back({u(rng), u(rng)});
  c.assoc = Matrix(grid->size(), models);
  for (std::size_t i = 0; i < grid->size(); ++i) {
    double s = 0;
    for (std::size_t m = 0; m < models; ++m) s += c.assoc(i, m) = p(rng);
    for (std::size_t m = 0; m < models; ++m) c.assoc(i, m) /= s;
  }
  return c;
}

Schedule quick_schedule() {
  Schedule s;
  s.t_init = 1.0;
  s.t_min = 1e-3;
  s.alpha = 0.8;
  s.perturb_eps = 0.2;
  s.merge_tol = 1e-2;
  s.max_inner_iters = 100;
  s.max_models = 16;
  return s;
}

}  // namespace

TEST_CASE("gibbs update examples") {
  Matrix c(1, 2);
  c(0, 0) = 1;
  c(0, 1) = 1;
  auto p = gibbs_update(c, 1.0);
  CHECK(p(0, 0) == doctest::Approx(0.5));
  CHECK(p(0, 1) == doctest::Approx(0.5));

  c(0, 0) = 0;
  p = gibbs_update(c, 1.0);
  CHECK(p(0, 0) == doctest::Approx(0.7310585786).epsilon(1e-9));
  CHECK(p(0, 1) == doctest::Approx(0.2689414214).epsilon(1e-9));

  c(0, 1) = 1000;
  p = gibbs_update(c, 1e-3);
  CHECK(p(0, 0) == 1.0);
  CHECK(p(0, 1) == 0.0);
  CHECK(std::isfinite(p(0, 1)));

  c(0, 1) = NAN;
  CHECK_THROWS_AS(gibbs_update(c, 1.0), NumericError);
  c(0, 1) = 1;
  CHECK_THROWS_AS(gibbs_update(c, 0.0), InvalidParameter);
}

TEST_CASE("gibbs rows are distributions and ignore row shifts") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> rows(1, 20), cols(1, 12);
  std::uniform_real_distribution<double> lt(-2, 2), cost(0, 1), scale_exp(-2, 1), shift(-10, 10);
  for (int trial = 0; trial < 1000; ++trial) {
    const int r = rows(rng), k = cols(rng);
    const double t = std::pow(10.0, lt(rng)), scale = std::pow(10.0, scale_exp(rng));
    Matrix c(r, k);
    for (int i = 0; i < r; ++i)
      for (int m = 0; m < k; ++m) c(i, m) = scale * cost(rng);
    const auto p = gibbs_update(c, t);
    Matrix shifted = c;
    for (int i = 0; i < r; ++i) {
      const double s = shift(rng);
      for (int m = 0; m < k; ++m) shifted(i, m) += s;
    }
    const auto q = gibbs_update(shifted, t);
    for (int i = 0; i < r; ++i) {
      double sum = 0;
      for (int m = 0; m < k; ++m) {
        CHECK(p(i, m) >= 0);
        CHECK(p(i, m) <= 1);
        sum += p(i, m);
        CHECK(std::abs(p(i, m) - q(i, m)) < 1e-12);
      }
      CHECK(std::abs(sum - 1) < 1e-12);
    }
  }
}

TEST_CASE("entropy and free energy examples") {
  auto grid = std::make_shared<QuadratureGrid>();
  grid->nodes = {0.0};
  grid->weights = {1.0};
  RandomizedController c;
  c.grid = grid;
  c.params = {{}, {}};
  c.assoc = Matrix(1, 2, 0.5);
  CHECK(entropy(c) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  c.assoc(0, 0) = 1;
  c.assoc(0, 1) = 0;
  CHECK(entropy(c) == 0.0);
  CHECK(free_energy(0.5, std::log(2.0), 1.0) == doctest::Approx(0.5 - 0.6931471806).epsilon(1e-9));
}

TEST_CASE("free energy identity on random states") {
  StepFit problem(101);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> lt(-3, 1);
  for (int trial = 0; trial < 100; ++trial) {
    const auto c = random_controller(problem.input_grid(), 1 + trial % 6, rng);
    const double t = std::pow(10.0, lt(rng));
    const auto costs = problem.cost_matrix(c);
    double j = 0, h = 0;
    const auto& w = problem.input_grid()->weights;
    for (std::size_t i = 0; i < costs.rows(); ++i)
      for (std::size_t m = 0; m < costs.cols(); ++m) {
        const double p = c.assoc(i, m);
        j += w[i] * p * costs(i, m);
        h -= w[i] * p * std::log(p);
      }
    const double f = free_energy(problem.expected_cost(c), entropy(c), t);
    CHECK(std::abs(f - (j - t * h)) <= 1e-9 * std::max(1.0, std::abs(f)));
  }
}

TEST_CASE("gibbs-optimal free energy is a soft minimum") {
  StepFit problem(101);
  std::mt19937_64 rng(19);
  std::uniform_real_distribution<double> lt(-3, 1);
  const auto& w = problem.input_grid()->weights;
  for (int trial = 0; trial < 100; ++trial) {
    auto c = random_controller(problem.input_grid(), 1 + trial % 7, rng);
    const double t = std::pow(10.0, lt(rng));
    const auto d = problem.cost_matrix(c);
    c.assoc = gibbs_update(d, t);
    long double expected = 0;
    for (std::size_t i = 0; i < d.rows(); ++i) {
      const auto row = d.row(i);
      const long double lo = *std::min_element(row.begin(), row.end());
      long double z = 0;
      for (double v : row) z += std::exp(-(v - lo) / t);
      expected += w[i] * (lo - t * std::log(z));
    }
    const double f = free_energy(problem.expected_cost(c), entropy(c), t);
    CHECK(std::abs(f - static_cast<double>(expected)) <= 1e-9 * std::max(1.0, std::abs(f)));
  }
}

TEST_CASE("duplicate and perturb") {
  StepFit problem(51);
  auto c = RandomizedController::single(problem.input_grid(), {{0.5, -0.25}});
  std::mt19937_64 rng(1);
  const double eps = 1e-2;
  const auto d = duplicate_and_perturb(c, eps, rng);
  REQUIRE(d.models() == 2);
  for (std::size_t i = 0; i < d.assoc.rows(); ++i) {
    CHECK(d.assoc(i, 0) == 0.5);
    CHECK(d.assoc(i, 1) == 0.5);
  }
  for (std::size_t m = 0; m < 2; ++m) {
    CHECK(std::abs(d.params[m].slope - 0.5) <= eps * (0.5 + eps));
    CHECK(std::abs(d.params[m].intercept + 0.25) <= eps * (0.25 + eps));
  }

  std::mt19937_64 a(9), b(9);
  CHECK(duplicate_and_perturb(c, eps, a).params == duplicate_and_perturb(c, eps, b).params);

  std::mt19937_64 r(2);
  const auto capped = duplicate_and_perturb(d, eps, r, 3);
  CHECK(capped.models() == 2);
  CHECK(capped.params == d.params);

  std::mt19937_64 z(4);
  const auto same = duplicate_and_perturb(c, 0.0, z);
  CHECK(std::abs(problem.expected_cost(same) - problem.expected_cost(c)) < 1e-12);
}

TEST_CASE("merge models") {
  StepFit problem(51);
  RandomizedController c;
  c.grid = problem.input_grid();
  c.params = {{1.0, 0.0}, {1.0, 1e-6}, {3.0, 0.0}};
  c.assoc = Matrix(c.grid->size(), 3);
  for (std::size_t i = 0; i < c.assoc.rows(); ++i) {
    c.assoc(i, 0) = 0.3;
    c.assoc(i, 1) = 0.3;
    c.assoc(i, 2) = 0.4;
  }
  const auto merged = merge_models(c, 1e-3);
  REQUIRE(merged.models() == 2);
  for (std::size_t i = 0; i < merged.assoc.rows(); ++i) {
    CHECK(merged.assoc(i, 0) == doctest::Approx(0.6));
    CHECK(merged.assoc(i, 0) + merged.assoc(i, 1) == doctest::Approx(1.0).epsilon(1e-14));
  }
  CHECK(merged.params[0].slope == 1.0);
  CHECK(merged.params[0].intercept == doctest::Approx(5e-7));

  // Transitive closure: 0 ~ 1 ~ 2 though 0 and 2 are farther than tol.
  c.params = {{0.0, 0.0}, {0.0, 0.8e-3}, {0.0, 1.6e-3}};
  CHECK(merge_models(c, 1e-3).models() == 1);

  // Merging identical cells leaves the cost unchanged.
  std::mt19937_64 rng(3);
  auto d = duplicate_and_perturb(RandomizedController::single(c.grid, {{0.7, 0.1}}), 0.0, rng);
  CHECK(std::abs(problem.expected_cost(merge_models(d, 1e-9)) - problem.expected_cost(d)) < 1e-10);
}

TEST_CASE("single model is always fully associated") {
  StepFit problem(51);
  auto c = RandomizedController::single(problem.input_grid(), {{0.0, 0.0}});
  const auto r = optimize_at_temperature(problem, c, 2.0, quick_schedule());
  for (std::size_t i = 0; i < r.controller.assoc.rows(); ++i) CHECK(r.controller.assoc(i, 0) == 1.0);
}

TEST_CASE("high temperature gives uniform associations") {
  StepFit problem(51);
  std::mt19937_64 rng(8);
  const auto c = random_controller(problem.input_grid(), 3, rng);
  const auto p = gibbs_update(problem.cost_matrix(c), 1e9);
  for (std::size_t i = 0; i < p.rows(); ++i)
    for (std::size_t m = 0; m < 3; ++m) CHECK(std::abs(p(i, m) - 1.0 / 3) < 1e-6);
}

TEST_CASE("free energy never increases within a temperature") {
  StepFit problem(101);
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    const auto c = random_controller(problem.input_grid(), 2 + trial % 4, rng);
    const auto r = optimize_at_temperature(problem, c, 0.05 * (trial + 1), quick_schedule());
    for (std::size_t i = 1; i < r.cycle_free_energy.size(); ++i) {
      const double prev = r.cycle_free_energy[i - 1];
      CHECK(r.cycle_free_energy[i] <= prev + 1e-9 * std::max(1.0, std::abs(prev)));
    }
  }
}

TEST_CASE("quench hardens and does not raise the cost") {
  StepFit problem(101);
  std::mt19937_64 rng(12);
  const auto c = random_controller(problem.input_grid(), 4, rng);
  const auto q = quench(problem, c, quick_schedule());
  CHECK(q.cost <= q.initial_cost + 1e-12);
  CHECK(entropy(q.controller) == 0.0);
  for (std::size_t i = 0; i < q.controller.assoc.rows(); ++i) {
    const auto row = q.controller.assoc.row(i);
    CHECK(std::count(row.begin(), row.end(), 1.0) == 1);
  }
  const auto again = quench(problem, q.controller, quick_schedule());
  CHECK(again.cost <= q.cost + 1e-12);
  CHECK(std::abs(again.cost - q.cost) <= 1e-6 * std::max(1.0, q.cost));
}

TEST_CASE("analytic and finite-difference cell gradients agree") {
  StepFit analytic(101), numeric(101, GradientMode::finite_difference);
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const auto c = random_controller(analytic.input_grid(), 3, rng);
    for (std::size_t m = 0; m < 3; ++m) {
      const auto ga = cell_gradient(analytic, c, m), gn = cell_gradient(numeric, c, m);
      for (std::size_t d = 0; d < 2; ++d) CHECK(std::abs(ga[d] - gn[d]) <= 1e-5 * std::max(1.0, std::abs(ga[d])));
    }
  }
}

TEST_CASE("annealing fits the step and is deterministic") {
  StepFit problem(101);
  const auto s = quick_schedule();
  const auto a = anneal(problem, s);
  const auto b = anneal(problem, s);
  REQUIRE(a.trace.size() == b.trace.size());
  for (std::size_t i = 0; i < a.trace.size(); ++i) {
    CHECK(a.trace[i].cost == b.trace[i].cost);
    CHECK(a.trace[i].free_energy == b.trace[i].free_energy);
    CHECK(a.trace[i].models == b.trace[i].models);
    if (i) CHECK(a.trace[i].temperature < a.trace[i - 1].temperature);
    CHECK(std::isfinite(a.trace[i].free_energy));
  }
  CHECK(a.controller.params == b.controller.params);
  // Two affine pieces reproduce the target up to the node that sits on the jump.
  CHECK(a.cost < 0.05);
  CHECK(a.cost < problem.affine_baseline());
}

TEST_CASE("very high temperature keeps one distinct model") {
  StepFit problem(101);
  auto s = quick_schedule();
  s.perturb_eps = 1e-3;
  std::mt19937_64 rng(2);
  auto c = duplicate_and_perturb(RandomizedController::single(problem.input_grid(), {{0.3, 0.2}}), s.perturb_eps, rng);
  const auto r = optimize_at_temperature(problem, c, 1e6, s);
  CHECK(merge_models(r.controller, s.merge_tol).models() == 1);
}

TEST_CASE("schedule validation names the field") {
  Schedule s;
  s.alpha = 1.2;
  try {
    s.validate();
    FAIL("expected an error");
  } catch (const InvalidParameter& e) {
    CHECK(std::string(e.what()).rfind("alpha", 0) == 0);
  }
  s = Schedule{};
  s.t_min = 10;
  CHECK_THROWS_AS(s.validate(), InvalidParameter);
  s = Schedule{};
  s.max_models = 0;
  CHECK_THROWS_AS(s.validate(), InvalidParameter);
}

TEST_CASE("pruning drops empty cells") {
  StepFit problem(11);
  RandomizedController c;
  c.grid = problem.input_grid();
  c.params = {{1, 0}, {2, 0}, {3, 0}};
  c.assoc = Matrix(11, 3);
  for (std::size_t i = 0; i < 11; ++i) c.assoc(i, i < 5 ? 0 : 2) = 1;
  const auto p = prune_unused(c);
  REQUIRE(p.models() == 2);
  CHECK(p.params[0].slope == 1);
  CHECK(p.params[1].slope == 3);
}
