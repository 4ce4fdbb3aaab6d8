#include "daopt/side_channel.hpp"

#include <algorithm>
#include <cmath>

namespace daopt {

void SideChannelParams::validate() const {
  if (!(k >= 0.0) || !std::isfinite(k)) throw InvalidParameter("k: must be non-negative");
  if (!(sigma_x0 > 0.0) || !std::isfinite(sigma_x0)) throw InvalidParameter("sigma: must be positive");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InvalidParameter("lambda: must be non-negative");
  if (!(target_b_snr >= 0.0) || std::isnan(target_b_snr)) throw InvalidParameter("target_b_snr: must be non-negative");
}

double EstimatorTable::operator()(double y1v, double y3v) const {
  auto locate = [](const UniformAxis& a, double y, std::size_t& i, double& f) {
    const double t = std::clamp((y - a.origin) / a.step, 0.0, static_cast<double>(a.count - 1));
    i = std::min(static_cast<std::size_t>(t), a.count - 2);
    f = t - static_cast<double>(i);
  };
  std::size_t i, j;
  double fi, fj;
  locate(y1, y1v, i, fi);
  locate(y3, y3v, j, fj);
  const double lo = at(i, j) + fj * (at(i, j + 1) - at(i, j));
  const double hi = at(i + 1, j) + fj * (at(i + 1, j + 1) - at(i + 1, j));
  return lo + fi * (hi - lo);
}

SideChannelProblem::SideChannelProblem(SideChannelParams params, SideChannelGrid grid)
    : params_(params), symmetric_(grid.symmetric), noise_truncation_(grid.noise_truncation), y3_nodes_(grid.y3_nodes) {
  params_.validate();
  if (!(grid.noise_truncation > 0.0)) throw InvalidParameter("noise_truncation: must be positive");
  if (grid.y1_nodes < 2) throw InvalidParameter("y1_nodes: need at least 2");
  if (grid.y3_nodes < 2) throw InvalidParameter("y3_nodes: need at least 2");
  full_grid_ = std::make_shared<const QuadratureGrid>(build_grid(0.0, params_.sigma_x0, grid.truncation, grid.x0_nodes));
  input_grid_ = symmetric_ ? std::make_shared<const QuadratureGrid>(fold_grid(*full_grid_)) : full_grid_;
  g3_.y1 = UniformAxis::symmetric(grid.truncation * params_.sigma_x0 + noise_truncation_, grid.y1_nodes);
  set_y3_range(0.0);
}

void SideChannelProblem::set_y3_range(double max_u2) {
  if (!std::isfinite(max_u2)) throw NumericError("side channel: u2 is not finite");
  const double half = std::abs(max_u2) + noise_truncation_;
  const auto steps = static_cast<std::size_t>(std::ceil(2.0 * half / g3_.y1.step));
  g3_.y3 = UniformAxis::symmetric(half, std::clamp<std::size_t>(steps + 1 + steps % 2, 3, y3_nodes_));
  g3_.values.assign(g3_.y1.count * g3_.y3.count, 0.0);
  odd_table_ = false;
}

void SideChannelProblem::prepare(const RandomizedController& controller) {
  double max_u2 = 0.0;
  const auto& nodes = input_grid_->nodes;
  for (std::size_t x = 0; x < controller.assoc.rows(); ++x) {
    for (std::size_t m = 0; m < controller.models(); ++m) {
      if (!(controller.assoc(x, m) > kNegligibleProbability)) continue;
      max_u2 = std::max(max_u2, std::abs(controller.cell(m)[1](nodes[x])));
    }
  }
  set_y3_range(max_u2);
  update_g3(controller);
}

namespace {

struct Window {
  std::vector<std::size_t> index;
  std::vector<double> weight;
  std::vector<double> offset;
  bool contiguous = true;  // index[c] == index[0] + c

  void fill(const UniformAxis& axis, double center, double truncation) {
    index.clear();
    weight.clear();
    offset.clear();
    contiguous = true;
    for_each_noise_node(axis, center, truncation, [&](std::ptrdiff_t j, double w, double u) {
      if (j < 0 || j >= static_cast<std::ptrdiff_t>(axis.count)) contiguous = false;
      index.push_back(axis.clamp(j));
      weight.push_back(w);
      offset.push_back(u);
    });
  }
};

thread_local Window row_window, col_window;

}  // namespace

SideChannelProblem::Estimation SideChannelProblem::estimation_error(double x1, double u2, bool with_gradient) const {
  if (!std::isfinite(x1) || !std::isfinite(u2)) throw NumericError("side channel: controller output is not finite");
  Window& rows = row_window;
  Window& cols = col_window;
  rows.fill(g3_.y1, x1, noise_truncation_);
  cols.fill(g3_.y3, u2, noise_truncation_);
  const std::size_t stride = g3_.y3.count;
  Estimation out;
  const std::size_t width = cols.index.size();
  const double* bw = cols.weight.data();
  const double* bu = cols.offset.data();
  for (std::size_t r = 0; r < rows.index.size(); ++r) {
    const double* g = g3_.values.data() + rows.index[r] * stride;
    double sq = 0.0, lin = 0.0, sq_off = 0.0;
    if (cols.contiguous && width > 0) {
      const double* gc = g + cols.index[0];
      if (with_gradient) {
        for (std::size_t c = 0; c < width; ++c) {
          const double e = x1 - gc[c];
          const double be = bw[c] * e;
          sq += be * e;
          lin += be;
          sq_off += be * e * bu[c];
        }
      } else {
        for (std::size_t c = 0; c < width; ++c) {
          const double e = x1 - gc[c];
          sq += bw[c] * e * e;
        }
      }
    } else {
      for (std::size_t c = 0; c < width; ++c) {
        const double e = x1 - g[cols.index[c]];
        const double be2 = bw[c] * e * e;
        sq += be2;
        if (with_gradient) {
          lin += bw[c] * e;
          sq_off += be2 * bu[c];
        }
      }
    }
    const double a = rows.weight[r];
    out.value += a * sq;
    if (with_gradient) {
      out.d_x1 += a * (rows.offset[r] * sq + 2.0 * lin);
      out.d_u2 += a * sq_off;
    }
  }
  return out;
}

double SideChannelProblem::point_cost(std::size_t node, std::span<const LocalModel> cell, std::span<double> grad) const {
  const double x0 = input_grid_->nodes[node];
  const double u1 = cell[0](x0);
  const double u2 = cell[1](x0);
  const double x1 = x0 + u1;
  const double k2 = params_.k * params_.k;
  const bool with_gradient = !grad.empty();

  Estimation est = estimation_error(x1, u2, with_gradient);
  if (symmetric_ && !odd_table_) {
    // The mirrored node -x0 lands on (-x1, -u2).
    const Estimation mirror = estimation_error(-x1, -u2, with_gradient);
    est.value = 0.5 * (est.value + mirror.value);
    est.d_x1 = 0.5 * (est.d_x1 - mirror.d_x1);
    est.d_u2 = 0.5 * (est.d_u2 - mirror.d_u2);
  }
  if (with_gradient) {
    const double d_u1 = 2.0 * k2 * u1 + est.d_x1;
    const double d_u2 = 2.0 * params_.lambda * u2 + est.d_u2;
    grad[0] = d_u1 * x0;
    grad[1] = d_u1;
    grad[2] = d_u2 * x0;
    grad[3] = d_u2;
  }
  return k2 * u1 * u1 + params_.lambda * u2 * u2 + est.value;
}

double SideChannelProblem::affine_baseline() const {
  return best_affine_cost(WceParams{params_.k, params_.sigma_x0}).cost;
}

void SideChannelProblem::update_g3(const RandomizedController& controller) {
  const std::size_t stride = g3_.y3.count;
  std::vector<double> num(g3_.values.size(), 0.0), den(g3_.values.size(), 0.0);
  Window rows, cols;
  auto deposit = [&](double x1, double u2, double mass) {
    rows.fill(g3_.y1, x1, noise_truncation_);
    cols.fill(g3_.y3, u2, noise_truncation_);
    for (std::size_t r = 0; r < rows.index.size(); ++r) {
      const double a = mass * rows.weight[r];
      double* nrow = num.data() + rows.index[r] * stride;
      double* drow = den.data() + rows.index[r] * stride;
      for (std::size_t c = 0; c < cols.index.size(); ++c) {
        const double w = a * cols.weight[c];
        drow[cols.index[c]] += w;
        nrow[cols.index[c]] += w * x1;
      }
    }
  };
  const auto& nodes = input_grid_->nodes;
  const auto& weights = input_grid_->weights;
  for (std::size_t x = 0; x < controller.assoc.rows(); ++x) {
    for (std::size_t m = 0; m < controller.models(); ++m) {
      const double p = controller.assoc(x, m);
      if (!(p > kNegligibleProbability)) continue;
      const double mass = weights[x] * p;
      const auto cell = controller.cell(m);
      const double x1 = nodes[x] + cell[0](nodes[x]);
      const double u2 = cell[1](nodes[x]);
      if (!std::isfinite(x1) || !std::isfinite(u2)) throw NumericError("side channel: controller output is not finite");
      if (symmetric_) {
        deposit(x1, u2, 0.5 * mass);
        deposit(-x1, -u2, 0.5 * mass);
      } else {
        deposit(x1, u2, mass);
      }
    }
  }
  for (std::size_t i = 0; i < g3_.values.size(); ++i) g3_.values[i] = den[i] > 1e-300 ? num[i] / den[i] : 0.0;
  if (symmetric_) {
    // Both axes are symmetric, so the mirror of flat index i is n - 1 - i.
    const std::size_t n = g3_.values.size();
    for (std::size_t i = 0; i < n / 2; ++i) {
      const double v = 0.5 * (g3_.values[i] - g3_.values[n - 1 - i]);
      g3_.values[i] = v;
      g3_.values[n - 1 - i] = -v;
    }
    if (n % 2) g3_.values[n / 2] = 0.0;
    odd_table_ = true;
  }
}

MappingTable SideChannelProblem::mapping(const RandomizedController& controller) const {
  return hard_mapping(*full_grid_, controller, symmetric_);
}

double snr_of(const RandomizedController& controller, const SideChannelProblem& problem) {
  if (controller.arity < 2) throw InvalidParameter("snr_of: controller has no side-channel map");
  const auto& grid = *problem.input_grid();
  double acc = 0.0;
  for (std::size_t x = 0; x < controller.assoc.rows(); ++x) {
    for (std::size_t m = 0; m < controller.models(); ++m) {
      const double p = controller.assoc(x, m);
      if (!(p > 0.0)) continue;
      const double u2 = controller.cell(m)[1](grid.nodes[x]);
      acc += grid.weights[x] * p * u2 * u2;
    }
  }
  return acc;
}

RandomizedController paired_controller_from_functions(std::shared_ptr<const QuadratureGrid> grid,
                                                      const std::function<double(double)>& f1,
                                                      const std::function<double(double)>& g2) {
  RandomizedController c;
  c.grid = grid;
  c.arity = 2;
  std::vector<std::size_t> owner(grid->size());
  for (std::size_t n = 0; n < grid->size(); ++n) {
    const double x = grid->nodes[n];
    const LocalModel first{0.0, f1(x) - x};
    const LocalModel second{0.0, g2(x)};
    if (!std::isfinite(first.intercept) || !std::isfinite(second.intercept)) {
      throw NumericError("mapping: not finite at x0 = " + std::to_string(x));
    }
    const std::size_t count = c.params.size() / 2;
    if (count == 0 || !(c.params[2 * count - 2] == first && c.params[2 * count - 1] == second)) {
      c.params.push_back(first);
      c.params.push_back(second);
    }
    owner[n] = c.params.size() / 2 - 1;
  }
  c.assoc = Matrix(grid->size(), c.models());
  for (std::size_t n = 0; n < grid->size(); ++n) c.assoc(n, owner[n]) = 1.0;
  return c;
}

namespace {

struct SweepPoint {
  double lambda;
  double snr;
  AnnealResult result;
};

SweepPoint run_at(const SideChannelParams& base, const SideChannelGrid& grid, const Schedule& schedule, double lambda,
                  const std::function<void(double, double)>& on_evaluation, const AnnealObserver& observer) {
  SideChannelParams p = base;
  p.lambda = lambda;
  SideChannelProblem problem(p, grid);
  AnnealResult r = anneal(problem, schedule, observer);
  const double snr = snr_of(r.controller, problem);
  if (on_evaluation) on_evaluation(lambda, snr);
  return {lambda, snr, std::move(r)};
}

LambdaSweepResult finish(SweepPoint&& point, std::vector<std::pair<double, double>> evaluations, std::string warning) {
  LambdaSweepResult out;
  out.lambda = point.lambda;
  out.achieved_b_snr = point.snr;
  out.solution = std::move(point.result);
  out.evaluations = std::move(evaluations);
  out.warning = std::move(warning);
  return out;
}

}  // namespace

LambdaSweepResult sweep_lambda(const SideChannelParams& params, const SideChannelGrid& grid, const Schedule& schedule,
                               double target_b_snr, double tol, std::vector<double> ladder, int max_bisections,
                               const std::function<void(double, double)>& on_evaluation,
                               const AnnealObserver& observer) {
  params.validate();
  schedule.validate();
  if (!(target_b_snr >= 0.0) || !std::isfinite(target_b_snr)) throw InvalidParameter("target_b_snr: must be non-negative");
  if (!(tol > 0.0)) throw InvalidParameter("tol: must be positive");
  if (ladder.empty()) throw InvalidParameter("ladder: must not be empty");
  for (std::size_t i = 0; i < ladder.size(); ++i) {
    if (!(ladder[i] >= 0.0) || (i > 0 && !(ladder[i] > ladder[i - 1]))) {
      throw InvalidParameter("ladder: must be non-negative and strictly increasing");
    }
  }

  std::vector<std::pair<double, double>> evaluations;
  std::vector<SweepPoint> scanned;  // in ladder order of visit
  auto evaluate = [&](double lambda) {
    SweepPoint p = run_at(params, grid, schedule, lambda, on_evaluation, observer);
    evaluations.emplace_back(p.lambda, p.snr);
    return p;
  };
  auto closest = [&](std::vector<SweepPoint>& pts) -> SweepPoint& {
    return *std::min_element(pts.begin(), pts.end(), [&](const SweepPoint& a, const SweepPoint& b) {
      return std::abs(a.snr - target_b_snr) < std::abs(b.snr - target_b_snr);
    });
  };

  // Power is expected to fall as lambda grows: walk up the ladder while the
  // power is too high, down while it is too low.
  std::ptrdiff_t i = static_cast<std::ptrdiff_t>(ladder.size() / 2);
  scanned.push_back(evaluate(ladder[static_cast<std::size_t>(i)]));
  if (std::abs(scanned.back().snr - target_b_snr) <= tol) return finish(std::move(scanned.back()), evaluations, "");
  const int direction = scanned.back().snr > target_b_snr ? 1 : -1;
  std::size_t bracket = 0;  // index into scanned of the second bracket point
  for (;;) {
    i += direction;
    if (i < 0) {
      const double reach = scanned.back().snr;
      throw InvalidParameter("target_b_snr: " + std::to_string(target_b_snr) + " is not reachable; lambda = 0 gives power " +
                             std::to_string(reach) + ", so the achievable range is [0, " + std::to_string(reach) + "]");
    }
    if (i >= static_cast<std::ptrdiff_t>(ladder.size())) {
      return finish(std::move(closest(scanned)), evaluations, "ladder exhausted before reaching the target power");
    }
    const double previous = scanned.back().snr;
    scanned.push_back(evaluate(ladder[static_cast<std::size_t>(i)]));
    const double now = scanned.back().snr;
    const bool monotone = direction > 0 ? now <= previous : now >= previous;
    if (!monotone) {
      return finish(std::move(closest(scanned)), evaluations, "power is not monotone in lambda; returning the closest ladder point");
    }
    if (std::abs(now - target_b_snr) <= tol) return finish(std::move(scanned.back()), evaluations, "");
    const bool crossed = direction > 0 ? now < target_b_snr : now > target_b_snr;
    if (crossed) {
      bracket = scanned.size() - 1;
      break;
    }
  }

  // lo has the higher power (smaller lambda).
  SweepPoint lo = std::move(scanned[bracket - 1]);
  SweepPoint hi = std::move(scanned[bracket]);
  if (lo.lambda > hi.lambda) std::swap(lo, hi);
  std::string warning;
  for (int b = 0; b < max_bisections; ++b) {
    const double mid = lo.lambda > 0.0 ? std::sqrt(lo.lambda * hi.lambda) : 0.5 * hi.lambda;
    SweepPoint p = evaluate(mid);
    if (std::abs(p.snr - target_b_snr) <= tol) return finish(std::move(p), evaluations, "");
    if (p.snr > lo.snr || p.snr < hi.snr) warning = "power is not monotone in lambda inside the bracket";
    if (p.snr > target_b_snr) {
      lo = std::move(p);
    } else {
      hi = std::move(p);
    }
  }
  SweepPoint& best = std::abs(lo.snr - target_b_snr) <= std::abs(hi.snr - target_b_snr) ? lo : hi;
  if (warning.empty()) warning = "tolerance not met after bisection; returning the closest evaluation";
  return finish(std::move(best), evaluations, warning);
}

}  // namespace daopt
