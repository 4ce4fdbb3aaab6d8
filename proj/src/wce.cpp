#include "daopt/wce.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

namespace daopt {

void WceParams::validate() const {
  if (!(k >= 0.0) || !std::isfinite(k)) throw InvalidParameter("k: must be non-negative");
  if (!(sigma_x0 > 0.0) || !std::isfinite(sigma_x0)) throw InvalidParameter("sigma: must be positive");
}

QuadratureGrid fold_grid(const QuadratureGrid& full) {
  QuadratureGrid half;
  half.mean = full.mean;
  half.std_dev = full.std_dev;
  half.truncation = full.truncation;
  const std::size_t n = full.size();
  for (std::size_t i = n / 2; i < n; ++i) {
    const std::size_t mirror = n - 1 - i;
    half.nodes.push_back(full.nodes[i]);
    half.weights.push_back(mirror == i ? full.weights[i] : full.weights[i] + full.weights[mirror]);
  }
  return half;
}

WceProblem::WceProblem(WceParams params, GridOptions grid) : params_(params), symmetric_(grid.symmetric) {
  params_.validate();
  if (!(grid.noise_truncation > 0.0)) throw InvalidParameter("noise_truncation: must be positive");
  full_grid_ = std::make_shared<const QuadratureGrid>(build_grid(0.0, params_.sigma_x0, grid.truncation, grid.x0_nodes));
  input_grid_ = symmetric_ ? std::make_shared<const QuadratureGrid>(fold_grid(*full_grid_)) : full_grid_;
  y_axis_ = UniformAxis::symmetric(grid.truncation * params_.sigma_x0 + grid.noise_truncation, grid.y_nodes);
  noise_truncation_ = grid.noise_truncation;
  g2_.assign(y_axis_.count, 0.0);
}

std::pair<double, double> WceProblem::estimation_error(double x1) const {
  double est = 0.0, d_est = 0.0;
  for_each_noise_node(y_axis_, x1, noise_truncation_, [&](std::ptrdiff_t j, double w, double u) {
    const double e = x1 - g2_[y_axis_.clamp(j)];
    est += w * e * e;
    d_est += w * e * (u * e + 2.0);
  });
  return {est, d_est};
}

double WceProblem::point_cost(std::size_t node, std::span<const LocalModel> cell, std::span<double> grad) const {
  const double x0 = input_grid_->nodes[node];
  const double u1 = cell[0](x0);
  const double x1 = x0 + u1;
  if (!std::isfinite(x1)) throw NumericError("wce: first-stage output is not finite");
  const double k2 = params_.k * params_.k;

  double est, d_est;
  if (grad.empty()) {
    est = 0.0;
    auto accumulate = [&](double center) {
      for_each_noise_node(y_axis_, center, noise_truncation_, [&](std::ptrdiff_t j, double w, double) {
        const double e = center - g2_[y_axis_.clamp(j)];
        est += w * e * e;
      });
    };
    accumulate(x1);
    if (symmetric_) {
      // The mirrored node -x0 is served by the mirrored map and lands on -x1.
      accumulate(-x1);
      est *= 0.5;
    }
    return k2 * u1 * u1 + est;
  }
  std::tie(est, d_est) = estimation_error(x1);
  if (symmetric_) {
    const auto [e2, d2] = estimation_error(-x1);
    est = 0.5 * (est + e2);
    d_est = 0.5 * (d_est - d2);
  }
  const double d_u1 = 2.0 * k2 * u1 + d_est;
  grad[0] = d_u1 * x0;
  grad[1] = d_u1;
  return k2 * u1 * u1 + est;
}

double WceProblem::affine_baseline() const { return best_affine_cost(params_).cost; }

void WceProblem::update_g2(const RandomizedController& controller) {
  std::vector<double> num(y_axis_.count, 0.0), den(y_axis_.count, 0.0);
  const auto& nodes = input_grid_->nodes;
  const auto& weights = input_grid_->weights;
  auto deposit = [&](double x1, double mass) {
    for_each_noise_node(y_axis_, x1, noise_truncation_, [&](std::ptrdiff_t j, double w, double) {
      const std::size_t i = y_axis_.clamp(j);
      den[i] += mass * w;
      num[i] += mass * w * x1;
    });
  };
  for (std::size_t x = 0; x < controller.assoc.rows(); ++x) {
    for (std::size_t m = 0; m < controller.models(); ++m) {
      const double p = controller.assoc(x, m);
      if (!(p > kNegligibleProbability)) continue;
      const double mass = weights[x] * p;
      const double x1 = nodes[x] + controller.cell(m)[0](nodes[x]);
      if (!std::isfinite(x1)) throw NumericError("wce: first-stage output is not finite");
      if (symmetric_) {
        deposit(x1, 0.5 * mass);
        deposit(-x1, 0.5 * mass);
      } else {
        deposit(x1, mass);
      }
    }
  }
  for (std::size_t i = 0; i < g2_.size(); ++i) g2_[i] = den[i] > 1e-300 ? num[i] / den[i] : 0.0;
}

CostSplit WceProblem::cost_split(const RandomizedController& controller) const {
  CostSplit s;
  const double k2 = params_.k * params_.k;
  const auto& nodes = input_grid_->nodes;
  const auto& weights = input_grid_->weights;
  for (std::size_t x = 0; x < controller.assoc.rows(); ++x) {
    for (std::size_t m = 0; m < controller.models(); ++m) {
      const double p = controller.assoc(x, m);
      if (!(p > kNegligibleProbability)) continue;
      const auto cell = controller.cell(m);
      const double u1 = cell[0](nodes[x]);
      const double total = point_cost(x, cell, {});
      s.control += weights[x] * p * k2 * u1 * u1;
      s.estimation += weights[x] * p * (total - k2 * u1 * u1);
    }
  }
  return s;
}

MappingTable WceProblem::mapping(const RandomizedController& controller) const {
  return hard_mapping(*full_grid_, controller, symmetric_);
}

MappingTable hard_mapping(const QuadratureGrid& full_grid, const RandomizedController& controller, bool symmetric) {
  MappingTable t;
  const auto& full = full_grid.nodes;
  t.x0 = full;
  t.f1.resize(full.size());
  if (controller.arity > 1) t.g2.resize(full.size());
  t.cell.resize(full.size());
  const std::size_t models = controller.models();
  const std::size_t offset = full.size() - controller.assoc.rows();
  if (!symmetric && offset != 0) throw InvalidParameter("mapping: controller does not match the grid");
  for (std::size_t n = 0; n < full.size(); ++n) {
    const double x = full[n];
    double sign = 1.0;
    std::size_t m;
    if (!symmetric) {
      m = controller.dominant(n);
      t.cell[n] = m;
    } else if (n >= offset) {
      m = controller.dominant(n - offset);
      t.cell[n] = m;
    } else {
      // Mirror image of folded node (full.size() - 1 - n); its cells get distinct ids.
      m = controller.dominant(full.size() - 1 - n - offset);
      t.cell[n] = models + m;
      sign = -1.0;
    }
    const auto cell = controller.cell(m);
    t.f1[n] = x + sign * cell[0](sign * x);
    if (controller.arity > 1) t.g2[n] = sign * cell[1](sign * x);
  }
  return t;
}

AffineOptimum best_affine_cost(const WceParams& params, double lo, double hi) {
  params.validate();
  const double k2 = params.k * params.k;
  const double s2 = params.sigma_x0 * params.sigma_x0;
  auto cost = [&](double c) { return k2 * (c - 1.0) * (c - 1.0) * s2 + c * c * s2 / (c * c * s2 + 1.0); };
  const double r = 0.5 * (std::sqrt(5.0) - 1.0);
  double a = lo, b = hi;
  double c = b - r * (b - a), d = a + r * (b - a);
  double fc = cost(c), fd = cost(d);
  while (b - a > 1e-12) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - r * (b - a);
      fc = cost(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + r * (b - a);
      fd = cost(d);
    }
  }
  const double x = 0.5 * (a + b);
  return {x, cost(x)};
}

RandomizedController controller_from_mapping(std::shared_ptr<const QuadratureGrid> grid, const std::vector<double>& xs,
                                             const std::vector<double>& f1) {
  if (xs.size() != f1.size() || xs.empty()) throw InvalidParameter("mapping: need matching, non-empty columns");
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!std::isfinite(xs[i]) || !std::isfinite(f1[i])) throw NumericError("mapping: non-finite entry in row " + std::to_string(i + 1));
    if (i > 0 && xs[i] < xs[i - 1]) throw InvalidParameter("mapping: x0 column must be non-decreasing");
  }

  // Cell 0: constant f1 left of the table, then one per proper interval, then the right clamp.
  std::vector<LocalModel> cells;
  std::vector<double> starts;
  cells.push_back({-1.0, f1.front()});
  for (std::size_t i = 0; i + 1 < xs.size(); ++i) {
    const double dx = xs[i + 1] - xs[i];
    if (dx <= 0.0) continue;
    const double s = (f1[i + 1] - f1[i]) / dx;
    cells.push_back({s - 1.0, f1[i] - s * xs[i]});
    starts.push_back(xs[i]);
  }
  cells.push_back({-1.0, f1.back()});

  RandomizedController c;
  c.grid = grid;
  c.arity = 1;
  c.params = cells;
  c.assoc = Matrix(grid->size(), cells.size());
  for (std::size_t n = 0; n < grid->size(); ++n) {
    const double x = grid->nodes[n];
    std::size_t m;
    if (x < xs.front()) {
      m = 0;
    } else if (x > xs.back()) {
      m = cells.size() - 1;
    } else if (starts.empty()) {
      m = cells.size() - 1;
    } else {
      const auto it = std::upper_bound(starts.begin(), starts.end(), x);
      m = static_cast<std::size_t>(std::max<std::ptrdiff_t>(it - starts.begin(), 1));
    }
    c.assoc(n, m) = 1.0;
  }
  return prune_unused(c);
}

RandomizedController controller_from_function(std::shared_ptr<const QuadratureGrid> grid,
                                              const std::function<double(double)>& f1) {
  std::vector<LocalModel> cells;
  std::vector<std::size_t> owner(grid->size());
  for (std::size_t n = 0; n < grid->size(); ++n) {
    const double x = grid->nodes[n];
    const LocalModel lm{0.0, f1(x) - x};
    if (!std::isfinite(lm.intercept)) throw NumericError("mapping: f1 is not finite at x0 = " + std::to_string(x));
    if (cells.empty() || !(cells.back() == lm)) cells.push_back(lm);
    owner[n] = cells.size() - 1;
  }
  RandomizedController c;
  c.grid = grid;
  c.arity = 1;
  c.params = std::move(cells);
  c.assoc = Matrix(grid->size(), c.params.size());
  for (std::size_t n = 0; n < grid->size(); ++n) c.assoc(n, owner[n]) = 1.0;
  return c;
}

namespace {

// Index ranges [begin, end) of steps over the whole axis.
std::vector<std::pair<std::size_t, std::size_t>> split_steps(const MappingTable& t, double jump_tol) {
  std::vector<std::pair<std::size_t, std::size_t>> steps;
  std::size_t begin = 0;
  for (std::size_t i = 1; i <= t.f1.size(); ++i) {
    const bool boundary = i == t.f1.size() || (t.cell[i] != t.cell[i - 1] && std::abs(t.f1[i] - t.f1[i - 1]) > jump_tol);
    if (boundary) {
      steps.emplace_back(begin, i);
      begin = i;
    }
  }
  return steps;
}

}  // namespace

double count_steps(const MappingTable& mapping, double jump_tol) {
  const auto& x0 = mapping.x0;
  double count = 0.0;
  std::size_t positive = 0;
  for (const auto& [b, e] : split_steps(mapping, jump_tol)) {
    if (x0[e - 1] <= 0.0) continue;
    ++positive;
    count += x0[b] < 0.0 ? 0.5 : 1.0;
  }
  if (positive == 1 && count == 0.5) count = 1.0;
  return count;
}

std::vector<StepShape> step_shapes(const MappingTable& mapping, double jump_tol) {
  const auto& x0 = mapping.x0;
  const auto& f1 = mapping.f1;
  std::vector<StepShape> out;
  for (const auto& [b, e] : split_steps(mapping, jump_tol)) {
    if (x0[e - 1] <= 0.0) continue;
    StepShape s;
    const std::size_t first = b;
    const std::size_t last = e - 1;
    s.x_begin = x0[first];
    s.x_end = x0[last];
    const double span = x0[last] - x0[first];
    for (std::size_t i = first; i <= last; ++i) {
      const double t = span > 0.0 ? (x0[i] - x0[first]) / span : 0.0;
      const double chord = f1[first] + t * (f1[last] - f1[first]);
      s.x.push_back(x0[i]);
      s.deviation.push_back(f1[i] - chord);
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace daopt
