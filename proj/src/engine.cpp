#include "daopt/engine.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

namespace daopt {

namespace {

constexpr double kArmijo = 1e-4;
constexpr int kMaxHalvings = 40;
// Unit curvature underestimates flat directions; a full step that succeeds
// is doubled up to this many times while the cost keeps falling.
constexpr int kMaxDoublings = 6;

// Uniform draw in [-1, 1) from the raw 64-bit stream; avoids the
// implementation-defined std distributions so runs reproduce across toolchains.
double symmetric_unit(std::mt19937_64& rng) {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return 2.0 * u - 1.0;
}

double cell_distance(std::span<const LocalModel> a, std::span<const LocalModel> b) {
  double d = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    d = std::max(d, std::abs(a[k].slope - b[k].slope));
    d = std::max(d, std::abs(a[k].intercept - b[k].intercept));
  }
  return d;
}

struct ActiveNodes {
  std::vector<std::size_t> index;
  std::vector<double> mass;  // w_x * p(m|x)
};

ActiveNodes active_nodes(const RandomizedController& c, std::size_t m) {
  ActiveNodes a;
  const auto& w = c.grid->weights;
  for (std::size_t x = 0; x < c.assoc.rows(); ++x) {
    const double p = c.assoc(x, m);
    if (p > kNegligibleProbability) {
      a.index.push_back(x);
      a.mass.push_back(w[x] * p);
    }
  }
  return a;
}

double cell_cost(const Problem& problem, const ActiveNodes& nodes, std::span<const LocalModel> cell) {
  double acc = 0.0;
  for (std::size_t i = 0; i < nodes.index.size(); ++i) {
    acc += nodes.mass[i] * problem.point_cost(nodes.index[i], cell, {});
  }
  return acc;
}

double& param_ref(std::span<LocalModel> cell, std::size_t k) {
  return (k % 2 == 0) ? cell[k / 2].slope : cell[k / 2].intercept;
}

std::vector<double> gradient_on(const Problem& problem, const ActiveNodes& nodes, std::span<const LocalModel> cell) {
  const std::size_t dim = 2 * cell.size();
  std::vector<double> grad(dim, 0.0);
  if (problem.gradient_mode() == GradientMode::analytic) {
    std::vector<double> g(dim);
    for (std::size_t i = 0; i < nodes.index.size(); ++i) {
      std::fill(g.begin(), g.end(), 0.0);
      problem.point_cost(nodes.index[i], cell, g);
      for (std::size_t k = 0; k < dim; ++k) grad[k] += nodes.mass[i] * g[k];
    }
    return grad;
  }
  std::vector<LocalModel> probe(cell.begin(), cell.end());
  for (std::size_t k = 0; k < dim; ++k) {
    double& v = param_ref(probe, k);
    const double saved = v;
    const double h = 1e-6 * std::max(1.0, std::abs(saved));
    v = saved + h;
    const double up = cell_cost(problem, nodes, probe);
    v = saved - h;
    const double down = cell_cost(problem, nodes, probe);
    v = saved;
    grad[k] = (up - down) / (2.0 * h);
  }
  return grad;
}

}  // namespace

double RandomizedController::mass(std::size_t m) const {
  double acc = 0.0;
  for (std::size_t x = 0; x < assoc.rows(); ++x) acc += grid->weights[x] * assoc(x, m);
  return acc;
}

std::size_t RandomizedController::dominant(std::size_t node) const {
  const auto r = assoc.row(node);
  return static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
}

RandomizedController RandomizedController::single(std::shared_ptr<const QuadratureGrid> grid,
                                                  std::vector<LocalModel> cell) {
  RandomizedController c;
  c.arity = cell.size();
  c.assoc = Matrix(grid->size(), 1, 1.0);
  c.params = std::move(cell);
  c.grid = std::move(grid);
  return c;
}

void Schedule::validate() const {
  auto fail = [](const std::string& field, const std::string& why) { throw InvalidParameter(field + ": " + why); };
  if (!(t_init > 0.0) || !std::isfinite(t_init)) fail("t_init", "must be positive and finite");
  if (!(t_min > 0.0)) fail("t_min", "must be positive");
  if (!(t_init > t_min)) fail("t_min", "must be below t_init");
  if (!(alpha > 0.0 && alpha < 1.0)) fail("alpha", "must lie in (0, 1)");
  if (!(perturb_eps > 0.0)) fail("perturb_eps", "must be positive");
  if (!(merge_tol > 0.0)) fail("merge_tol", "must be positive");
  if (!(inner_tol > 0.0)) fail("inner_tol", "must be positive");
  if (!(param_tol > 0.0)) fail("param_tol", "must be positive");
  if (max_inner_iters < 1) fail("max_inner_iters", "must be at least 1");
  if (max_models < 1) fail("max_models", "must be at least 1");
}

Matrix Problem::cost_matrix(const RandomizedController& c) const {
  Matrix costs(c.assoc.rows(), c.models());
  for (std::size_t x = 0; x < costs.rows(); ++x) {
    for (std::size_t m = 0; m < costs.cols(); ++m) costs(x, m) = point_cost(x, c.cell(m), {});
  }
  return costs;
}

double Problem::expected_cost(const RandomizedController& c) const {
  const auto& w = c.grid->weights;
  double acc = 0.0;
  for (std::size_t x = 0; x < c.assoc.rows(); ++x) {
    for (std::size_t m = 0; m < c.models(); ++m) {
      const double p = c.assoc(x, m);
      if (p > kNegligibleProbability) acc += w[x] * p * point_cost(x, c.cell(m), {});
    }
  }
  return acc;
}

Matrix gibbs_update(const Matrix& costs, double temperature) {
  if (!(temperature > 0.0)) throw InvalidParameter("gibbs_update: temperature must be positive");
  Matrix p(costs.rows(), costs.cols());
  for (std::size_t x = 0; x < costs.rows(); ++x) {
    const auto c = costs.row(x);
    double lo = std::numeric_limits<double>::infinity();
    for (double v : c) {
      if (!std::isfinite(v)) throw NumericError("gibbs_update: non-finite cost at node " + std::to_string(x));
      lo = std::min(lo, v);
    }
    auto out = p.row(x);
    double sum = 0.0;
    for (std::size_t m = 0; m < c.size(); ++m) {
      out[m] = std::exp(-(c[m] - lo) / temperature);
      sum += out[m];
    }
    for (double& v : out) v /= sum;
  }
  return p;
}

double entropy(const RandomizedController& controller) {
  const auto& w = controller.grid->weights;
  double acc = 0.0;
  for (std::size_t x = 0; x < controller.assoc.rows(); ++x) {
    double row = 0.0;
    for (double p : controller.assoc.row(x)) {
      if (p > 0.0) row -= p * std::log(p);
    }
    acc += w[x] * row;
  }
  return acc;
}

RandomizedController duplicate_and_perturb(const RandomizedController& controller, double eps, std::mt19937_64& rng,
                                           int max_models) {
  const std::size_t m0 = controller.models();
  if (2 * m0 > static_cast<std::size_t>(max_models)) return controller;

  RandomizedController out;
  out.grid = controller.grid;
  out.arity = controller.arity;
  out.params = controller.params;
  out.params.reserve(2 * controller.params.size());
  for (std::size_t m = 0; m < m0; ++m) {
    for (const LocalModel& src : controller.cell(m)) {
      LocalModel copy = src;
      copy.slope += symmetric_unit(rng) * eps * (std::abs(src.slope) + eps);
      copy.intercept += symmetric_unit(rng) * eps * (std::abs(src.intercept) + eps);
      out.params.push_back(copy);
    }
  }
  out.assoc = Matrix(controller.assoc.rows(), 2 * m0);
  for (std::size_t x = 0; x < controller.assoc.rows(); ++x) {
    for (std::size_t m = 0; m < m0; ++m) {
      const double half = 0.5 * controller.assoc(x, m);
      out.assoc(x, m) = half;
      out.assoc(x, m0 + m) = half;
    }
  }
  return out;
}

RandomizedController merge_models(const RandomizedController& controller, double tol) {
  const std::size_t n = controller.models();
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto find = [&](std::size_t i) {
    while (parent[i] != i) i = parent[i] = parent[parent[i]];
    return i;
  };
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (cell_distance(controller.cell(i), controller.cell(j)) < tol) {
        const std::size_t a = find(i), b = find(j);
        if (a != b) parent[std::max(a, b)] = std::min(a, b);
      }
    }
  }

  // Group order follows the lowest member index.
  std::vector<std::size_t> group_of(n), roots;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r = find(i);
    auto it = std::find(roots.begin(), roots.end(), r);
    group_of[i] = static_cast<std::size_t>(it - roots.begin());
    if (it == roots.end()) roots.push_back(r);
  }
  if (roots.size() == n) return controller;

  const std::size_t g = roots.size();
  RandomizedController out;
  out.grid = controller.grid;
  out.arity = controller.arity;
  out.params.assign(g * controller.arity, LocalModel{0.0, 0.0});
  out.assoc = Matrix(controller.assoc.rows(), g);

  std::vector<double> mass(n), group_mass(g, 0.0);
  std::vector<int> group_size(g, 0);
  for (std::size_t i = 0; i < n; ++i) {
    mass[i] = controller.mass(i);
    group_mass[group_of[i]] += mass[i];
    ++group_size[group_of[i]];
  }
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = group_of[i];
    const double share = group_mass[k] > 0.0 ? mass[i] / group_mass[k] : 1.0 / group_size[k];
    auto dst = out.cell(k);
    auto src = controller.cell(i);
    for (std::size_t a = 0; a < controller.arity; ++a) {
      dst[a].slope += share * src[a].slope;
      dst[a].intercept += share * src[a].intercept;
    }
  }
  for (std::size_t x = 0; x < controller.assoc.rows(); ++x) {
    for (std::size_t i = 0; i < n; ++i) out.assoc(x, group_of[i]) += controller.assoc(x, i);
  }
  return out;
}

RandomizedController prune_unused(const RandomizedController& controller) {
  std::vector<std::size_t> keep;
  for (std::size_t m = 0; m < controller.models(); ++m) {
    bool used = false;
    for (std::size_t x = 0; x < controller.assoc.rows() && !used; ++x) used = controller.assoc(x, m) > 0.0;
    if (used) keep.push_back(m);
  }
  if (keep.size() == controller.models()) return controller;
  RandomizedController out;
  out.grid = controller.grid;
  out.arity = controller.arity;
  out.assoc = Matrix(controller.assoc.rows(), keep.size());
  for (std::size_t k = 0; k < keep.size(); ++k) {
    for (const LocalModel& lm : controller.cell(keep[k])) out.params.push_back(lm);
    for (std::size_t x = 0; x < controller.assoc.rows(); ++x) out.assoc(x, k) = controller.assoc(x, keep[k]);
  }
  return out;
}

std::vector<double> cell_gradient(const Problem& problem, const RandomizedController& controller, std::size_t m) {
  return gradient_on(problem, active_nodes(controller, m), controller.cell(m));
}

DescentStep descend_parameters(const Problem& problem, RandomizedController& controller) {
  const auto& nodes_x = controller.grid->nodes;
  double total = 0.0;
  double max_change = 0.0;
  for (std::size_t m = 0; m < controller.models(); ++m) {
    const ActiveNodes nodes = active_nodes(controller, m);
    if (nodes.index.empty()) continue;
    auto cell = controller.cell(m);
    const double base = cell_cost(problem, nodes, cell);
    const std::vector<double> grad = gradient_on(problem, nodes, cell);

    // Every map in a cell is affine in the same input, so the second moments
    // of the cell's input distribution precondition each (slope, intercept) pair.
    double s0 = 0.0, s1 = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i < nodes.index.size(); ++i) {
      const double x = nodes_x[nodes.index[i]];
      s0 += nodes.mass[i];
      s1 += nodes.mass[i] * x;
      s2 += nodes.mass[i] * x * x;
    }
    const double ridge = 1e-9 * (s0 + s2) + 1e-300;
    const double a = s2 + ridge, b = s1, d = s0 + ridge;
    const double det = a * d - b * b;

    std::vector<double> dir(grad.size());
    double slope0 = 0.0;
    for (std::size_t k = 0; k + 1 < grad.size(); k += 2) {
      const double gs = grad[k], gi = grad[k + 1];
      dir[k] = -0.5 * (d * gs - b * gi) / det;
      dir[k + 1] = -0.5 * (-b * gs + a * gi) / det;
      slope0 += gs * dir[k] + gi * dir[k + 1];
    }
    if (!(slope0 < 0.0) || !std::isfinite(slope0)) {
      total += base;
      continue;
    }

    std::vector<LocalModel> trial(cell.begin(), cell.end());
    double step = 1.0;
    double accepted = base;
    auto try_step = [&](double s) {
      for (std::size_t k = 0; k < dir.size(); ++k) param_ref(trial, k) = param_ref(cell, k) + s * dir[k];
      return cell_cost(problem, nodes, trial);
    };
    double taken = 0.0;
    for (int h = 0; h < kMaxHalvings; ++h, step *= 0.5) {
      const double value = try_step(step);
      if (std::isfinite(value) && value <= base + kArmijo * step * slope0) {
        taken = step;
        accepted = value;
        break;
      }
    }
    if (taken == 1.0) {
      for (int e = 0; e < kMaxDoublings; ++e) {
        const double value = try_step(2.0 * taken);
        if (!std::isfinite(value) || !(value < accepted)) break;
        taken *= 2.0;
        accepted = value;
      }
    }
    if (taken > 0.0) {
      for (std::size_t k = 0; k < dir.size(); ++k) {
        param_ref(cell, k) += taken * dir[k];
        max_change = std::max(max_change, std::abs(taken * dir[k]));
      }
    }
    total += accepted;
  }
  return {total, max_change};
}

TemperatureResult optimize_at_temperature(Problem& problem, RandomizedController controller, double temperature,
                                          const Schedule& schedule) {
  if (!(temperature > 0.0)) throw InvalidParameter("optimize_at_temperature: temperature must be positive");
  TemperatureResult r;
  r.temperature = temperature;
  problem.prepare(controller);
  double previous = std::numeric_limits<double>::quiet_NaN();
  for (int it = 0; it < schedule.max_inner_iters; ++it) {
    problem.update_dependents(controller);
    controller.assoc = gibbs_update(problem.cost_matrix(controller), temperature);
    const DescentStep step = descend_parameters(problem, controller);
    const double f = free_energy(step.cost, entropy(controller), temperature);
    if (!std::isfinite(f)) throw NumericError("optimize_at_temperature: free energy is not finite");
    r.cycle_free_energy.push_back(f);
    r.iterations = it + 1;
    if (std::isfinite(previous)) {
      const double scale = std::max({std::abs(previous), std::abs(f), 1e-12});
      if (std::abs(previous - f) <= schedule.inner_tol * scale && step.max_change <= schedule.param_tol) {
        r.converged = true;
        break;
      }
    }
    previous = f;
  }
  problem.update_dependents(controller);
  r.cost = problem.expected_cost(controller);
  r.entropy = entropy(controller);
  r.free_energy = free_energy(r.cost, r.entropy, temperature);
  r.controller = std::move(controller);
  return r;
}

QuenchResult quench(Problem& problem, RandomizedController controller, const Schedule& schedule) {
  QuenchResult q;
  problem.update_dependents(controller);
  q.initial_cost = problem.expected_cost(controller);
  double previous = q.initial_cost;
  for (int it = 0; it < schedule.max_inner_iters; ++it) {
    const Matrix costs = problem.cost_matrix(controller);
    for (std::size_t x = 0; x < costs.rows(); ++x) {
      const auto row = costs.row(x);
      const auto best = static_cast<std::size_t>(std::min_element(row.begin(), row.end()) - row.begin());
      auto p = controller.assoc.row(x);
      std::fill(p.begin(), p.end(), 0.0);
      p[best] = 1.0;
    }
    problem.update_dependents(controller);
    const double cost = descend_parameters(problem, controller).cost;
    q.cost_history.push_back(cost);
    q.iterations = it + 1;
    if (previous - cost <= schedule.inner_tol * std::abs(previous)) break;
    previous = cost;
  }
  problem.update_dependents(controller);
  q.cost = problem.expected_cost(controller);
  q.controller = std::move(controller);
  return q;
}

AnnealResult anneal(Problem& problem, const Schedule& schedule, const AnnealObserver& observer) {
  schedule.validate();
  AnnealResult result;
  std::mt19937_64 rng(schedule.rng_seed);
  RandomizedController c =
      RandomizedController::single(problem.input_grid(), std::vector<LocalModel>(problem.arity(), LocalModel{}));

  double t = schedule.t_init;
  for (std::size_t index = 0; t >= schedule.t_min; ++index) {
    TemperatureResult r = optimize_at_temperature(problem, std::move(c), t, schedule);
    if (!r.converged) ++result.unconverged_temperatures;
    if (observer.on_temperature) observer.on_temperature(index, r);
    c = merge_models(r.controller, schedule.merge_tol);
    result.trace.push_back({t, r.cost, r.entropy, r.free_energy, c.models()});
    const double next = schedule.alpha * t;
    if (next >= schedule.t_min) {
      RandomizedController d = duplicate_and_perturb(c, schedule.perturb_eps, rng, schedule.max_models);
      if (d.models() == c.models()) result.hit_model_cap = true;
      c = std::move(d);
    }
    t = next;
  }

  QuenchResult q = quench(problem, std::move(c), schedule);
  result.controller = prune_unused(q.controller);
  problem.update_dependents(result.controller);
  result.cost = problem.expected_cost(result.controller);
  return result;
}

}  // namespace daopt
