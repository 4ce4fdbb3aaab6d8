#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "daopt/wce.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace daopt;

namespace {

const WceParams kBench{0.2, 5.0};

GridOptions coarse(bool symmetric = false) {
  GridOptions g;
  g.x0_nodes = 301;
  g.y_nodes = 301;
  g.symmetric = symmetric;
  return g;
}

double one_step(double x) { return x >= 0 ? 5.0 : -5.0; }

std::size_t node_at(const QuadratureGrid& g, double x) {
  const auto it = std::min_element(g.nodes.begin(), g.nodes.end(),
                                   [x](double a, double b) { return std::abs(a - x) < std::abs(b - x); });
  return static_cast<std::size_t>(it - g.nodes.begin());
}

}  // namespace

TEST_CASE("association cost examples") {
  WceProblem p(kBench);
  std::fill(p.g2_table().begin(), p.g2_table().end(), 0.0);
  const auto& g = *p.input_grid();
  const std::size_t at2 = node_at(g, 2.0), at0 = node_at(g, 0.0);
  REQUIRE(std::abs(g.nodes[at2] - 2.0) < 1e-12);
  REQUIRE(std::abs(g.nodes[at0]) < 1e-12);
  const std::vector<LocalModel> zero{{0.0, 0.0}}, unit{{0.0, 1.0}};
  CHECK(std::abs(p.point_cost(at2, zero, {}) - 4.0) < 1e-10);
  CHECK(std::abs(p.point_cost(at0, unit, {}) - 1.04) < 1e-10);
}

TEST_CASE("without control cost the association cost is the estimation error") {
  WceProblem p({0.0, 5.0}, coarse());
  const auto c = controller_from_function(p.input_grid(), one_step);
  p.update_g2(c);
  const auto& g = *p.input_grid();
  for (std::size_t i = 0; i < g.size(); i += 17) {
    const double x1 = one_step(g.nodes[i]);
    const std::vector<LocalModel> m{{0.0, x1 - g.nodes[i]}};
    CHECK(std::abs(p.point_cost(i, m, {}) - p.estimation_error(x1).first) < 1e-12);
  }
}

TEST_CASE("identity first stage gives the linear MMSE") {
  WceProblem p(kBench);
  const auto c = RandomizedController::single(p.input_grid(), {{0.0, 0.0}});
  p.update_g2(c);
  CHECK(std::abs(p.g2(1.0) - 25.0 / 26.0) < 2e-3);
  CHECK(std::abs(p.expected_cost(c) - 25.0 / 26.0) < 2e-3);
}

TEST_CASE("two-point prior gives a tanh estimator") {
  GridOptions opt;
  opt.symmetric = true;
  WceProblem p(kBench, opt);
  const auto c = controller_from_function(p.input_grid(), one_step);
  p.update_g2(c);
  const auto& axis = p.y_axis();
  for (std::size_t j = 0; j < axis.count; ++j) {
    const double y = axis.node(static_cast<std::ptrdiff_t>(j));
    if (std::abs(y) > 10) continue;
    const long double a = oracle::unit_pdf(y - 5), b = oracle::unit_pdf(y + 5);
    const double expected = static_cast<double>(5 * (a - b) / (a + b));
    CHECK(std::abs(p.g2_table()[j] - expected) < 2e-3);
  }
}

TEST_CASE("estimator is odd for symmetric controllers") {
  GridOptions opt = coarse(true);
  WceProblem p(kBench, opt);
  std::mt19937_64 rng(4);
  const auto c = support::random_controller(p.input_grid(), 3, rng);
  p.update_g2(c);
  const auto& g2 = p.g2_table();
  for (std::size_t j = 0; j < g2.size(); ++j) CHECK(std::abs(g2[j] + g2[g2.size() - 1 - j]) < 1e-9);
}

TEST_CASE("one-step mapping cost") {
  WceProblem p(kBench);
  const auto c = controller_from_function(p.input_grid(), one_step);
  p.update_g2(c);
  const double j = p.expected_cost(c);
  CHECK(std::abs(j - 0.404253) < 1e-3);
  CHECK(count_steps(p.mapping(c)) == 1.0);
}

TEST_CASE("costs stay above the best known value") {
  WceProblem p(kBench, coarse());
  std::mt19937_64 rng(17);
  for (int t = 0; t < 20; ++t) {
    const auto c = support::random_controller(p.input_grid(), 1 + t % 5, rng);
    p.update_g2(c);
    const double j = p.expected_cost(c);
    CHECK(j > 0);
    CHECK(j >= 0.16692291 - 1e-3);
  }
}

TEST_CASE("best affine cost") {
  const auto a = best_affine_cost(kBench);
  CHECK(std::abs(a.cost - 0.96) < 5e-3);
  CHECK(std::abs(best_affine_cost({0.63, 5.0}).cost - 0.961) < 5e-3);
  const auto stiff = best_affine_cost({1e3, 5.0});
  CHECK(std::abs(stiff.slope - 1.0) < 1e-3);
  CHECK(std::abs(stiff.cost - 25.0 / 26.0) < 1e-3);
}

TEST_CASE("step counting") {
  WceProblem p(kBench);
  const auto g = p.input_grid();
  CHECK(count_steps(p.mapping(RandomizedController::single(g, {{0.0, 0.0}}))) == 1.0);
  CHECK(count_steps(p.mapping(controller_from_function(g, one_step))) == 1.0);
  // Levels 7n with jumps at +-3.5, 10.5, 17.5, 24.5: a straddling step, three
  // full steps and a short tail step.
  const auto stairs = controller_from_function(g, [](double x) { return 7.0 * std::round(x / 7.0); });
  CHECK(count_steps(p.mapping(stairs)) == 4.5);
  const auto shapes = step_shapes(p.mapping(stairs));
  for (const auto& s : shapes)
    for (double d : s.deviation) CHECK(std::abs(d) < 1e-12);
}

TEST_CASE("estimator table is node-wise optimal") {
  WceProblem p(kBench, coarse());
  std::mt19937_64 rng(23);
  const auto c = support::random_controller(p.input_grid(), 3, rng);
  p.update_g2(c);
  const double base = p.expected_cost(c);
  std::uniform_int_distribution<std::size_t> node(0, p.g2_table().size() - 1);
  for (int t = 0; t < 200; ++t) {
    const std::size_t j = node(rng);
    const double saved = p.g2_table()[j];
    for (double delta : {1e-2, -1e-2}) {
      p.g2_table()[j] = saved + delta;
      CHECK(p.expected_cost(c) >= base - 1e-10);
    }
    p.g2_table()[j] = saved;
  }
}

TEST_CASE("analytic parameter gradients match finite differences") {
  for (bool symmetric : {false, true}) {
    WceProblem p(kBench, coarse(symmetric));
    std::mt19937_64 rng(symmetric ? 31 : 29);
    CHECK(support::gradient_mismatch(p, 100, rng, [&](const RandomizedController& c) { p.update_g2(c); }) < 1e-4);
  }
}

TEST_CASE("cost is invariant under mirroring") {
  WceProblem p(kBench, coarse());
  std::mt19937_64 rng(37);
  const auto c = support::random_controller(p.input_grid(), 3, rng);
  RandomizedController mirrored = c;
  const std::size_t n = c.assoc.rows();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t m = 0; m < c.models(); ++m) mirrored.assoc(i, m) = c.assoc(n - 1 - i, m);
  for (auto& model : mirrored.params) model.intercept = -model.intercept;
  p.update_g2(c);
  const double j = p.expected_cost(c);
  p.update_g2(mirrored);
  CHECK(std::abs(p.expected_cost(mirrored) - j) < 1e-10);
}

TEST_CASE("refining the grids barely moves the one-step cost") {
  GridOptions fine;
  fine.x0_nodes = 2001;
  fine.y_nodes = 2001;
  WceProblem a(kBench), b(kBench, fine);
  const auto ca = controller_from_function(a.input_grid(), one_step);
  const auto cb = controller_from_function(b.input_grid(), one_step);
  a.update_g2(ca);
  b.update_g2(cb);
  CHECK(std::abs(a.expected_cost(ca) - b.expected_cost(cb)) < 5e-4);
}

TEST_CASE("tabulated mappings are reproduced") {
  WceProblem p(kBench, coarse());
  const std::vector<double> xs{-25, 0, 0, 25}, f1{-30, -5, 5, 30};
  const auto c = controller_from_mapping(p.input_grid(), xs, f1);
  const auto m = p.mapping(c);
  for (std::size_t i = 0; i < m.x0.size(); ++i) {
    const double x = m.x0[i];
    const double expected = x < 0 ? -5 + x : (x > 0 ? 5 + x : m.f1[i]);
    CHECK(std::abs(m.f1[i] - expected) < 1e-12);
  }
}

TEST_CASE("parameter validation") {
  CHECK_THROWS_AS(WceProblem({0.2, 0.0}), InvalidParameter);
  CHECK_THROWS_AS(WceProblem({-1.0, 5.0}), InvalidParameter);
  GridOptions g;
  g.y_nodes = 1;
  CHECK_THROWS_AS(WceProblem(kBench, g), InvalidParameter);
}
