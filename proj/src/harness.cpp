#include "daopt/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>

#ifndef DAOPT_VERSION
#define DAOPT_VERSION "0.0.0"
#endif
#ifndef DAOPT_DATA_DIR
#define DAOPT_DATA_DIR "data"
#endif

namespace fs = std::filesystem;

namespace daopt {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(trim(cur));
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

double parse_double(const std::string& text, const std::string& field) {
  double v = 0.0;
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || text.empty()) throw ConfigError(field + ": '" + text + "' is not a number");
  return v;
}

long long parse_int(const std::string& text, const std::string& field) {
  long long v = 0;
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || text.empty()) throw ConfigError(field + ": '" + text + "' is not an integer");
  return v;
}

std::size_t parse_count(const std::string& text, const std::string& field) {
  const long long v = parse_int(text, field);
  if (v < 0) throw ConfigError(field + ": must not be negative");
  return static_cast<std::size_t>(v);
}

bool parse_bool(const std::string& text, const std::string& field) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError(field + ": '" + text + "' is not a boolean");
}

std::string join(const std::vector<double>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) out += (i ? ", " : "") + format_double(values[i]);
  return out;
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError(path.string() + ": cannot open for writing");
  return out;
}

void check_written(std::ofstream& out, const fs::path& path) {
  out.flush();
  if (!out) throw ConfigError(path.string() + ": write failed");
}

}  // namespace

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string format_short(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

// ---- configuration ----

void RunConfig::validate() const {
  try {
    if (problem == ProblemKind::wce) {
      WceParams{k, sigma}.validate();
    } else {
      SideChannelParams{k, sigma, lambda, target_b_snr.value_or(0.0)}.validate();
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const InvalidParameter& e) {
    throw ConfigError(e.what());
  }
  if (target_b_snr && problem != ProblemKind::side_channel) throw ConfigError("target_b_snr: only valid for the side-channel problem");
  if (!(b_snr_tol > 0.0)) throw ConfigError("b_snr_tol: must be positive");
  if (max_bisections < 0) throw ConfigError("max_bisections: must not be negative");
  if (lambda_ladder.empty()) throw ConfigError("lambda_ladder: must not be empty");
  for (std::size_t i = 0; i < lambda_ladder.size(); ++i) {
    if (!(lambda_ladder[i] >= 0.0) || (i > 0 && !(lambda_ladder[i] > lambda_ladder[i - 1]))) {
      throw ConfigError("lambda_ladder: must be non-negative and strictly increasing");
    }
  }
  if (x0_nodes < 3) throw ConfigError("x0_nodes: need at least 3");
  if (y_nodes < 3) throw ConfigError("y_nodes: need at least 3");
  if (y1_nodes < 3) throw ConfigError("y1_nodes: need at least 3");
  if (y3_nodes < 3) throw ConfigError("y3_nodes: need at least 3");
  if (!(truncation > 0.0) || !std::isfinite(truncation)) throw ConfigError("truncation: must be positive");
  if (!(noise_truncation > 0.0) || !std::isfinite(noise_truncation)) throw ConfigError("noise_truncation: must be positive");
  if (t_init && !(*t_init > 0.0 && std::isfinite(*t_init))) throw ConfigError("t_init: must be positive and finite");
  if (t_min && !(*t_min > 0.0)) throw ConfigError("t_min: must be positive");
  if (output.empty()) throw ConfigError("output: must not be empty");
  try {
    resolved_schedule().validate();
  } catch (const InvalidParameter& e) {
    throw ConfigError(e.what());
  }
}

GridOptions RunConfig::wce_grid() const {
  GridOptions g;
  g.x0_nodes = x0_nodes;
  g.truncation = truncation;
  g.y_nodes = y_nodes;
  g.noise_truncation = noise_truncation;
  g.symmetric = symmetric;
  return g;
}

SideChannelGrid RunConfig::side_channel_grid() const {
  SideChannelGrid g;
  g.x0_nodes = x0_nodes;
  g.truncation = truncation;
  g.y1_nodes = y1_nodes;
  g.y3_nodes = y3_nodes;
  g.noise_truncation = noise_truncation;
  g.symmetric = symmetric;
  return g;
}

Schedule RunConfig::resolved_schedule() const {
  Schedule s = schedule;
  s.t_init = t_init ? *t_init : 5.0 * best_affine_cost(WceParams{k, sigma}).cost;
  s.t_min = t_min ? *t_min : 1e-4 * s.t_init;
  return s;
}

std::vector<std::pair<std::string, std::string>> RunConfig::entries() const {
  std::vector<std::pair<std::string, std::string>> e;
  e.emplace_back("problem", problem == ProblemKind::wce ? "wce" : "side-channel");
  e.emplace_back("k", format_double(k));
  e.emplace_back("sigma", format_double(sigma));
  if (problem == ProblemKind::side_channel) {
    e.emplace_back("lambda", format_double(lambda));
    if (target_b_snr) e.emplace_back("target_b_snr", format_double(*target_b_snr));
    e.emplace_back("b_snr_tol", format_double(b_snr_tol));
    e.emplace_back("lambda_ladder", join(lambda_ladder));
    e.emplace_back("max_bisections", std::to_string(max_bisections));
  }
  const Schedule s = resolved_schedule();
  e.emplace_back("t_init", format_double(s.t_init));
  e.emplace_back("t_min", format_double(s.t_min));
  e.emplace_back("alpha", format_double(s.alpha));
  e.emplace_back("perturb_eps", format_double(s.perturb_eps));
  e.emplace_back("merge_tol", format_double(s.merge_tol));
  e.emplace_back("inner_tol", format_double(s.inner_tol));
  e.emplace_back("param_tol", format_double(s.param_tol));
  e.emplace_back("max_inner_iters", std::to_string(s.max_inner_iters));
  e.emplace_back("max_models", std::to_string(s.max_models));
  e.emplace_back("seed", std::to_string(s.rng_seed));
  e.emplace_back("x0_nodes", std::to_string(x0_nodes));
  e.emplace_back("truncation", format_double(truncation));
  if (problem == ProblemKind::wce) {
    e.emplace_back("y_nodes", std::to_string(y_nodes));
  } else {
    e.emplace_back("y1_nodes", std::to_string(y1_nodes));
    e.emplace_back("y3_nodes", std::to_string(y3_nodes));
  }
  e.emplace_back("noise_truncation", format_double(noise_truncation));
  e.emplace_back("symmetric", symmetric ? "true" : "false");
  e.emplace_back("output", output.generic_string());
  return e;
}

RunConfig parse_config(std::istream& in, const std::string& source) {
  RunConfig c;
  using Setter = std::function<void(const std::string&)>;
  const std::map<std::string, Setter> setters{
      {"problem",
       [&](const std::string& v) {
         if (v == "wce") {
           c.problem = ProblemKind::wce;
         } else if (v == "side-channel" || v == "side_channel") {
           c.problem = ProblemKind::side_channel;
         } else {
           throw ConfigError("problem: '" + v + "' is not one of wce, side-channel");
         }
       }},
      {"k", [&](const std::string& v) { c.k = parse_double(v, "k"); }},
      {"sigma", [&](const std::string& v) { c.sigma = parse_double(v, "sigma"); }},
      {"lambda", [&](const std::string& v) { c.lambda = parse_double(v, "lambda"); }},
      {"target_b_snr", [&](const std::string& v) { c.target_b_snr = parse_double(v, "target_b_snr"); }},
      {"b_snr_tol", [&](const std::string& v) { c.b_snr_tol = parse_double(v, "b_snr_tol"); }},
      {"lambda_ladder",
       [&](const std::string& v) {
         c.lambda_ladder.clear();
         for (const auto& item : split(v, ',')) c.lambda_ladder.push_back(parse_double(item, "lambda_ladder"));
       }},
      {"max_bisections", [&](const std::string& v) { c.max_bisections = static_cast<int>(parse_int(v, "max_bisections")); }},
      {"t_init", [&](const std::string& v) { c.t_init = parse_double(v, "t_init"); }},
      {"t_min", [&](const std::string& v) { c.t_min = parse_double(v, "t_min"); }},
      {"alpha", [&](const std::string& v) { c.schedule.alpha = parse_double(v, "alpha"); }},
      {"perturb_eps", [&](const std::string& v) { c.schedule.perturb_eps = parse_double(v, "perturb_eps"); }},
      {"merge_tol", [&](const std::string& v) { c.schedule.merge_tol = parse_double(v, "merge_tol"); }},
      {"inner_tol", [&](const std::string& v) { c.schedule.inner_tol = parse_double(v, "inner_tol"); }},
      {"param_tol", [&](const std::string& v) { c.schedule.param_tol = parse_double(v, "param_tol"); }},
      {"max_inner_iters",
       [&](const std::string& v) { c.schedule.max_inner_iters = static_cast<int>(parse_int(v, "max_inner_iters")); }},
      {"max_models", [&](const std::string& v) { c.schedule.max_models = static_cast<int>(parse_int(v, "max_models")); }},
      {"seed", [&](const std::string& v) { c.schedule.rng_seed = static_cast<std::uint64_t>(parse_count(v, "seed")); }},
      {"x0_nodes", [&](const std::string& v) { c.x0_nodes = parse_count(v, "x0_nodes"); }},
      {"truncation", [&](const std::string& v) { c.truncation = parse_double(v, "truncation"); }},
      {"y_nodes", [&](const std::string& v) { c.y_nodes = parse_count(v, "y_nodes"); }},
      {"y1_nodes", [&](const std::string& v) { c.y1_nodes = parse_count(v, "y1_nodes"); }},
      {"y3_nodes", [&](const std::string& v) { c.y3_nodes = parse_count(v, "y3_nodes"); }},
      {"noise_truncation", [&](const std::string& v) { c.noise_truncation = parse_double(v, "noise_truncation"); }},
      {"symmetric", [&](const std::string& v) { c.symmetric = parse_bool(v, "symmetric"); }},
      {"output", [&](const std::string& v) { c.output = v; }},
  };

  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string text = trim(line);
    if (text.empty()) continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(number) + ": expected 'key = value'");
    }
    const std::string key = trim(std::string_view(text).substr(0, eq));
    const std::string value = trim(std::string_view(text).substr(eq + 1));
    const auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError(key + ": unknown key (" + source + ":" + std::to_string(number) + ")");
    it->second(value);
  }
  c.validate();
  return c;
}

RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot read config file");
  return parse_config(in, path.string());
}

// ---- files ----

std::size_t CsvTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw ConfigError("csv: missing column '" + name + "'");
  return static_cast<std::size_t>(it - header.begin());
}

void write_csv(const fs::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& columns) {
  if (header.size() != columns.size()) throw InvalidParameter("write_csv: header and column counts differ");
  const std::size_t rows = columns.empty() ? 0 : columns.front().size();
  for (const auto& col : columns) {
    if (col.size() != rows) throw InvalidParameter("write_csv: columns differ in length");
  }
  auto out = open_output(path);
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << '\n';
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < columns.size(); ++i) out << (i ? "," : "") << format_double(columns[i][r]);
    out << '\n';
  }
  check_written(out, path);
}

CsvTable read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot read");
  CsvTable t;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string text = trim(line);
    if (text.empty()) continue;
    if (t.header.empty()) {
      t.header = split(text, ',');
      continue;
    }
    const auto fields = split(text, ',');
    const std::string where = path.string() + ":" + std::to_string(number);
    if (fields.size() != t.header.size()) {
      throw ConfigError(where + ": expected " + std::to_string(t.header.size()) + " fields, got " + std::to_string(fields.size()));
    }
    std::vector<double> row;
    for (const auto& f : fields) {
      const double v = parse_double(f, where);
      if (!std::isfinite(v)) throw ConfigError(where + ": non-finite value '" + f + "'");
      row.push_back(v);
    }
    t.rows.push_back(std::move(row));
  }
  if (t.header.empty()) throw ConfigError(path.string() + ": empty file");
  return t;
}

void write_report(const fs::path& path, const Report& report) {
  auto out = open_output(path);
  for (const auto& [k, v] : report) out << k << " = " << v << '\n';
  check_written(out, path);
}

std::map<std::string, std::string> read_report(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot read");
  std::map<std::string, std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    out[trim(std::string_view(line).substr(0, eq))] = trim(std::string_view(line).substr(eq + 1));
  }
  return out;
}

// ---- runs ----

namespace {

struct RunRecorder {
  std::vector<double> t, j, h, f, m;
  std::vector<double> snap_index, snap_t, snap_x, snap_f1;
  std::vector<double> inner_index, inner_t, inner_iter, inner_f;

  void clear() { *this = RunRecorder{}; }
};

AnnealObserver make_observer(RunRecorder& rec, const QuadratureGrid& full_grid, bool symmetric, const RunOptions& options) {
  AnnealObserver obs;
  obs.on_temperature = [&rec, &full_grid, symmetric, &options](std::size_t index, const TemperatureResult& r) {
    const MappingTable snap = hard_mapping(full_grid, r.controller, symmetric);
    for (std::size_t n = 0; n < snap.x0.size(); ++n) {
      rec.snap_index.push_back(static_cast<double>(index));
      rec.snap_t.push_back(r.temperature);
      rec.snap_x.push_back(snap.x0[n]);
      rec.snap_f1.push_back(snap.f1[n]);
    }
    if (options.verbose) {
      for (std::size_t i = 0; i < r.cycle_free_energy.size(); ++i) {
        rec.inner_index.push_back(static_cast<double>(index));
        rec.inner_t.push_back(r.temperature);
        rec.inner_iter.push_back(static_cast<double>(i + 1));
        rec.inner_f.push_back(r.cycle_free_energy[i]);
      }
    }
    if (options.log) {
      *options.log << "T = " << format_short(r.temperature) << "  J = " << format_short(r.cost)
                   << "  H = " << format_short(r.entropy) << "  M = " << r.controller.models()
                   << "  iterations = " << r.iterations << std::endl;
    }
  };
  return obs;
}

void write_run_files(const fs::path& dir, const RunRecorder& rec, const AnnealTrace& trace, bool verbose) {
  std::vector<std::vector<double>> cols(5);
  for (const auto& r : trace) {
    cols[0].push_back(r.temperature);
    cols[1].push_back(r.cost);
    cols[2].push_back(r.entropy);
    cols[3].push_back(r.free_energy);
    cols[4].push_back(static_cast<double>(r.models));
  }
  write_csv(dir / "trace.csv", {"T", "J", "H", "F", "M"}, cols);
  write_csv(dir / "snapshots.csv", {"index", "T", "x0", "f1"}, {rec.snap_index, rec.snap_t, rec.snap_x, rec.snap_f1});
  if (verbose) {
    write_csv(dir / "inner.csv", {"index", "T", "iteration", "F"}, {rec.inner_index, rec.inner_t, rec.inner_iter, rec.inner_f});
  }
}

void prepare_output(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw ConfigError("output: cannot create directory " + dir.string());
}

}  // namespace

RunSummary run_experiment(RunConfig config, const RunOptions& options) {
  if (options.seed) config.schedule.rng_seed = *options.seed;
  config.validate();
  prepare_output(config.output);
  const Schedule schedule = config.resolved_schedule();
  const auto started = std::chrono::steady_clock::now();

  RunSummary summary;
  RunRecorder rec;
  Report report;
  report.emplace_back("problem", config.problem == ProblemKind::wce ? "wce" : "side-channel");

  if (config.problem == ProblemKind::wce) {
    const WceParams params{config.k, config.sigma};
    WceProblem problem(params, config.wce_grid());
    const AnnealResult result = anneal(problem, schedule, make_observer(rec, problem.x0_grid(), config.symmetric, options));
    const MappingTable mapping = problem.mapping(result.controller);
    const CostSplit split = problem.cost_split(result.controller);

    write_run_files(config.output, rec, result.trace, options.verbose);
    write_csv(config.output / "mapping.csv", {"x0", "f1"}, {mapping.x0, mapping.f1});
    std::vector<double> ys(problem.y_axis().count);
    for (std::size_t i = 0; i < ys.size(); ++i) ys[i] = problem.y_axis().node(static_cast<std::ptrdiff_t>(i));
    write_csv(config.output / "estimator.csv", {"y", "g2"}, {ys, problem.g2_table()});

    summary.cost = result.cost;
    summary.steps = count_steps(mapping);
    summary.models = result.controller.models();
    summary.hit_model_cap = result.hit_model_cap;
    report.emplace_back("J", format_double(result.cost));
    report.emplace_back("control_cost", format_double(split.control));
    report.emplace_back("estimation_cost", format_double(split.estimation));
    report.emplace_back("linear_J", format_double(best_affine_cost(params).cost));
    report.emplace_back("final_entropy", format_double(entropy(result.controller)));
    report.emplace_back("models", std::to_string(summary.models));
    report.emplace_back("steps", format_double(summary.steps));
    report.emplace_back("temperatures", std::to_string(result.trace.size()));
    report.emplace_back("unconverged_temperatures", std::to_string(result.unconverged_temperatures));
    report.emplace_back("hit_model_cap", result.hit_model_cap ? "true" : "false");
  } else {
    SideChannelParams params{config.k, config.sigma, config.lambda, config.target_b_snr.value_or(0.0)};
    const SideChannelGrid grid = config.side_channel_grid();
    const QuadratureGrid full_grid = build_grid(0.0, config.sigma, config.truncation, config.x0_nodes);
    AnnealResult result;
    std::string warning;
    std::vector<std::pair<double, double>> evaluations;
    if (config.target_b_snr) {
      std::map<double, RunRecorder> by_lambda;
      const LambdaSweepResult sweep = sweep_lambda(
          params, grid, schedule, *config.target_b_snr, config.b_snr_tol, config.lambda_ladder, config.max_bisections,
          [&](double lambda, double snr) {
            by_lambda[lambda] = std::move(rec);
            rec.clear();
            if (options.log) *options.log << "lambda = " << format_short(lambda) << "  b_snr = " << format_short(snr) << std::endl;
          },
          make_observer(rec, full_grid, config.symmetric, options));
      params.lambda = sweep.lambda;
      result = sweep.solution;
      warning = sweep.warning;
      evaluations = sweep.evaluations;
      rec = std::move(by_lambda[sweep.lambda]);
    } else {
      SideChannelProblem problem(params, grid);
      result = anneal(problem, schedule, make_observer(rec, full_grid, config.symmetric, options));
    }

    // Fresh problem so that the exported g3 is the conditional mean of the final controller.
    SideChannelProblem problem(params, grid);
    problem.prepare(result.controller);
    const double cost = problem.expected_cost(result.controller);
    const MappingTable mapping = problem.mapping(result.controller);
    const double b_snr = snr_of(result.controller, problem);
    double control = 0.0;
    const auto& in = *problem.input_grid();
    for (std::size_t x = 0; x < result.controller.assoc.rows(); ++x) {
      for (std::size_t m = 0; m < result.controller.models(); ++m) {
        const double p = result.controller.assoc(x, m);
        const double u1 = result.controller.cell(m)[0](in.nodes[x]);
        control += in.weights[x] * p * config.k * config.k * u1 * u1;
      }
    }
    const double power_cost = params.lambda * b_snr;

    write_run_files(config.output, rec, result.trace, options.verbose);
    write_csv(config.output / "mapping.csv", {"x0", "f1", "g2"}, {mapping.x0, mapping.f1, mapping.g2});
    const EstimatorTable& g3 = problem.g3();
    std::vector<double> c1, c3, cv;
    for (std::size_t i = 0; i < g3.y1.count; ++i) {
      for (std::size_t j = 0; j < g3.y3.count; ++j) {
        c1.push_back(g3.y1.node(static_cast<std::ptrdiff_t>(i)));
        c3.push_back(g3.y3.node(static_cast<std::ptrdiff_t>(j)));
        cv.push_back(g3.at(i, j));
      }
    }
    write_csv(config.output / "estimator.csv", {"y1", "y3", "g3"}, {c1, c3, cv});
    if (!evaluations.empty()) {
      std::vector<double> ls, ss;
      for (const auto& [l, s] : evaluations) {
        ls.push_back(l);
        ss.push_back(s);
      }
      write_csv(config.output / "sweep.csv", {"lambda", "b_snr"}, {ls, ss});
    }

    summary.cost = cost - power_cost;
    summary.steps = count_steps(mapping);
    summary.models = result.controller.models();
    summary.b_snr = b_snr;
    summary.lambda = params.lambda;
    summary.hit_model_cap = result.hit_model_cap;
    summary.warning = warning;
    // J excludes the multiplier term; it is the constrained objective at the achieved power.
    report.emplace_back("J", format_double(summary.cost));
    report.emplace_back("lagrangian", format_double(cost));
    report.emplace_back("control_cost", format_double(control));
    report.emplace_back("estimation_cost", format_double(cost - control - power_cost));
    report.emplace_back("b_snr", format_double(b_snr));
    report.emplace_back("u2_rms", format_double(std::sqrt(b_snr)));
    report.emplace_back("lambda", format_double(params.lambda));
    if (config.target_b_snr) report.emplace_back("target_b_snr", format_double(*config.target_b_snr));
    if (!warning.empty()) report.emplace_back("sweep_warning", warning);
    report.emplace_back("final_entropy", format_double(entropy(result.controller)));
    report.emplace_back("models", std::to_string(summary.models));
    report.emplace_back("steps", format_double(summary.steps));
    report.emplace_back("temperatures", std::to_string(result.trace.size()));
    report.emplace_back("unconverged_temperatures", std::to_string(result.unconverged_temperatures));
    report.emplace_back("hit_model_cap", result.hit_model_cap ? "true" : "false");
  }

  summary.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  if (!std::isfinite(summary.cost) || !(summary.cost > 0.0)) throw NumericError("run: final cost is not finite and positive");
  report.emplace_back("wall_clock_seconds", format_short(summary.seconds));
  report.emplace_back("version", DAOPT_VERSION);
  report.emplace_back("rng_seed", std::to_string(schedule.rng_seed));
  for (const auto& [k, v] : config.entries()) report.emplace_back("config." + k, v);
  write_report(config.output / "report.txt", report);
  return summary;
}

// ---- mapping evaluation ----

MappingEvaluation evaluate_mapping(const CsvTable& table, const WceParams& params, const GridOptions& grid) {
  params.validate();
  const std::size_t xc = table.column("x0");
  const std::size_t fc = table.column("f1");
  if (table.rows.empty()) throw ConfigError("csv: no data rows");
  std::vector<double> xs, f1;
  for (const auto& row : table.rows) {
    xs.push_back(row[xc]);
    f1.push_back(row[fc]);
  }
  GridOptions g = grid;
  g.symmetric = false;
  WceProblem problem(params, g);
  const RandomizedController c = controller_from_mapping(problem.input_grid(), xs, f1);
  problem.update_g2(c);
  MappingEvaluation e;
  e.split = problem.cost_split(c);
  e.mapping = problem.mapping(c);
  e.steps = count_steps(e.mapping);
  e.y.resize(problem.y_axis().count);
  for (std::size_t i = 0; i < e.y.size(); ++i) e.y[i] = problem.y_axis().node(static_cast<std::ptrdiff_t>(i));
  e.g2 = problem.g2_table();
  if (!std::isfinite(e.split.total())) throw NumericError("eval-mapping: cost is not finite");
  return e;
}

void write_evaluation(const fs::path& dir, const MappingEvaluation& e, const WceParams& params) {
  prepare_output(dir);
  write_csv(dir / "mapping.csv", {"x0", "f1"}, {e.mapping.x0, e.mapping.f1});
  write_csv(dir / "estimator.csv", {"y", "g2"}, {e.y, e.g2});
  write_report(dir / "report.txt", {{"problem", "wce"},
                                    {"J", format_double(e.split.total())},
                                    {"control_cost", format_double(e.split.control)},
                                    {"estimation_cost", format_double(e.split.estimation)},
                                    {"linear_J", format_double(best_affine_cost(params).cost)},
                                    {"steps", format_double(e.steps)},
                                    {"source", "eval-mapping"},
                                    {"config.k", format_double(params.k)},
                                    {"config.sigma", format_double(params.sigma_x0)}});
}

// ---- tables ----

ReferenceCosts load_reference_costs(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot read reference costs");
  ReferenceCosts refs;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string text = trim(line);
    if (text.empty()) continue;
    const auto eq = text.find('=');
    const std::string where = path.string() + ":" + std::to_string(number);
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = trim(std::string_view(text).substr(0, eq));
    const std::string value = trim(std::string_view(text).substr(eq + 1));
    if (key.rfind("wce.", 0) == 0) {
      refs.wce[key.substr(4)] = parse_double(value, where);
    } else if (key.rfind("side_channel.", 0) == 0) {
      const auto parts = split(value, ',');
      if (parts.size() != 2) throw ConfigError(where + ": expected 'linear, J_M'");
      refs.side_channel.emplace_back(parse_double(key.substr(13), where), parse_double(parts[0], where),
                                     parse_double(parts[1], where));
    } else {
      throw ConfigError(where + ": unknown reference key '" + key + "'");
    }
  }
  std::sort(refs.side_channel.begin(), refs.side_channel.end());
  return refs;
}

fs::path default_reference_path() { return fs::path(DAOPT_DATA_DIR) / "reference_costs.txt"; }

std::string CostTable::aligned() const {
  std::vector<std::size_t> width(header.size());
  for (std::size_t i = 0; i < header.size(); ++i) width[i] = header[i].size();
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());
  }
  std::ostringstream out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      out << (i ? "  " : "") << std::left << std::setw(static_cast<int>(width[i])) << cells[i];
    }
    out << '\n';
  };
  line(header);
  std::vector<std::string> rule;
  for (auto w : width) rule.emplace_back(w, '-');
  line(rule);
  for (const auto& r : rows) line(r);
  return out.str();
}

std::string CostTable::csv() const {
  std::ostringstream out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
    out << '\n';
  };
  line(header);
  for (const auto& r : rows) line(r);
  return out.str();
}

std::vector<CostTable> build_tables(const fs::path& dir, const ReferenceCosts& refs) {
  if (!fs::is_directory(dir)) throw ConfigError(dir.string() + ": not a directory");
  std::vector<fs::path> reports;
  if (fs::exists(dir / "report.txt")) reports.push_back(dir / "report.txt");
  std::vector<fs::path> subdirs;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_directory() && fs::exists(entry.path() / "report.txt")) subdirs.push_back(entry.path());
  }
  std::sort(subdirs.begin(), subdirs.end());
  for (const auto& s : subdirs) reports.push_back(s / "report.txt");
  if (reports.empty()) throw ConfigError(dir.string() + ": no run reports found");

  auto number = [](const std::map<std::string, std::string>& r, const std::string& key, const fs::path& where) {
    const auto it = r.find(key);
    if (it == r.end()) throw ConfigError(where.string() + ": missing '" + key + "'");
    return parse_double(it->second, where.string());
  };

  CostTable wce{{"source", "k", "sigma", "J", "linear_J", "gain_vs_linear", "steps"}, {}};
  struct ScRow {
    double rms;
    std::vector<std::string> cells;
  };
  std::vector<ScRow> sc;

  for (const auto& path : reports) {
    const auto r = read_report(path);
    const std::string name = path.parent_path().filename().string();
    const auto problem = r.count("problem") ? r.at("problem") : "";
    const double j = number(r, "J", path);
    if (problem == "wce") {
      const double k = number(r, "config.k", path);
      const double sigma = number(r, "config.sigma", path);
      const double linear = best_affine_cost(WceParams{k, sigma}).cost;
      wce.rows.push_back({name, format_short(k), format_short(sigma), format_short(j), format_short(linear),
                          format_short((linear - j) / linear), r.count("steps") ? r.at("steps") : "-"});
    } else if (problem == "side-channel") {
      // The published side-channel rows are labelled by the RMS of U2, not its power.
      const double power = number(r, "b_snr", path);
      const double rms = std::sqrt(power);
      std::string level = "-", linear = "-", jm = "-", rel = "-";
      const auto ref = std::min_element(refs.side_channel.begin(), refs.side_channel.end(), [&](const auto& a, const auto& b) {
        return std::abs(std::get<0>(a) - rms) < std::abs(std::get<0>(b) - rms);
      });
      if (ref != refs.side_channel.end() && std::abs(std::get<0>(*ref) - rms) <= 0.25) {
        level = format_short(std::get<0>(*ref));
        linear = format_short(std::get<1>(*ref));
        jm = format_short(std::get<2>(*ref));
        rel = format_short((std::get<2>(*ref) - j) / std::get<2>(*ref));
      }
      sc.push_back({rms,
                    {level, format_short(rms), format_short(power), format_short(number(r, "lambda", path)), linear, jm,
                     format_short(j), rel, name}});
    } else {
      throw ConfigError(path.string() + ": unknown problem '" + problem + "'");
    }
  }

  std::vector<CostTable> tables;
  if (!wce.rows.empty()) {
    for (const auto& [label, value] : refs.wce) {
      wce.rows.push_back({"literature:" + label, "0.2", "5", format_short(value), format_short(refs.wce.count("linear") ? refs.wce.at("linear") : 0.96),
                          "-", "-"});
    }
    tables.push_back(std::move(wce));
  }
  if (!sc.empty()) {
    std::stable_sort(sc.begin(), sc.end(), [](const ScRow& a, const ScRow& b) { return a.rms < b.rms; });
    CostTable t{{"ref_level", "u2_rms", "b_snr", "lambda", "linear_J", "J_M", "J_star", "rel_improvement", "source"}, {}};
    for (auto& row : sc) t.rows.push_back(std::move(row.cells));
    tables.push_back(std::move(t));
  }
  return tables;
}

// ---- plot data ----

std::vector<std::string> write_plot_data(const fs::path& dir, double jump_tol) {
  if (!fs::exists(dir / "mapping.csv")) throw ConfigError(dir.string() + ": missing mapping.csv");
  std::vector<std::string> written;
  auto dat = [&](const std::string& name, const std::string& comment, const std::vector<std::vector<double>>& cols,
                 const std::vector<std::size_t>& breaks = {}) {
    const fs::path path = dir / name;
    auto out = open_output(path);
    out << "# " << comment << '\n';
    const std::size_t rows = cols.empty() ? 0 : cols.front().size();
    std::size_t next_break = 0;
    for (std::size_t r = 0; r < rows; ++r) {
      if (next_break < breaks.size() && breaks[next_break] == r) {
        out << '\n';  // gnuplot: blank line separates curve pieces
        ++next_break;
      }
      for (std::size_t c = 0; c < cols.size(); ++c) out << (c ? " " : "") << format_double(cols[c][r]);
      out << '\n';
    }
    check_written(out, path);
    written.push_back(name);
  };

  const CsvTable mapping = read_csv(dir / "mapping.csv");
  MappingTable m;
  for (const auto& row : mapping.rows) {
    m.x0.push_back(row[mapping.column("x0")]);
    m.f1.push_back(row[mapping.column("f1")]);
  }
  // Cells are not stored; every node may start a new run, so steps split at jumps only.
  m.cell.resize(m.x0.size());
  for (std::size_t i = 0; i < m.cell.size(); ++i) m.cell[i] = i;

  if (fs::exists(dir / "snapshots.csv")) {
    const CsvTable snaps = read_csv(dir / "snapshots.csv");
    const std::size_t ic = snaps.column("index"), tc = snaps.column("T"), xc = snaps.column("x0"), fc = snaps.column("f1");
    std::size_t begin = 0;
    while (begin < snaps.rows.size()) {
      std::size_t end = begin;
      while (end < snaps.rows.size() && snaps.rows[end][ic] == snaps.rows[begin][ic]) ++end;
      std::vector<double> xs, fs1;
      for (std::size_t r = begin; r < end; ++r) {
        xs.push_back(snaps.rows[r][xc]);
        fs1.push_back(snaps.rows[r][fc]);
      }
      char name[48];
      std::snprintf(name, sizeof name, "snapshot_%03d.dat", static_cast<int>(snaps.rows[begin][ic]));
      dat(name, "x0 f1 (most probable cell) at T = " + format_double(snaps.rows[begin][tc]), {xs, fs1});
      begin = end;
    }
  }

  std::vector<std::size_t> jumps;
  for (std::size_t i = 1; i < m.f1.size(); ++i) {
    if (std::abs(m.f1[i] - m.f1[i - 1]) > jump_tol) jumps.push_back(i);
  }
  if (mapping.header.size() > 2) {
    std::vector<double> g2;
    for (const auto& row : mapping.rows) g2.push_back(row[mapping.column("g2")]);
    dat("final_f1.dat", "x0 f1 g2", {m.x0, m.f1, g2}, jumps);
  } else {
    dat("final_f1.dat", "x0 f1", {m.x0, m.f1}, jumps);
  }

  if (fs::exists(dir / "estimator.csv")) {
    const CsvTable est = read_csv(dir / "estimator.csv");
    if (est.header.size() == 2) {
      std::vector<double> y, g;
      for (const auto& row : est.rows) {
        y.push_back(row[est.column("y")]);
        g.push_back(row[est.column("g2")]);
      }
      dat("final_g2.dat", "y g2", {y, g});
    } else {
      // Slice of g3 at the y3 node closest to zero.
      const std::size_t c1 = est.column("y1"), c3 = est.column("y3"), cg = est.column("g3");
      double best = std::numeric_limits<double>::infinity();
      for (const auto& row : est.rows) best = std::min(best, std::abs(row[c3]));
      std::vector<double> y1, g;
      double y3 = 0.0;
      for (const auto& row : est.rows) {
        if (std::abs(row[c3]) == best) {
          y1.push_back(row[c1]);
          g.push_back(row[cg]);
          y3 = row[c3];
        }
      }
      dat("final_g3_slice.dat", "y1 g3 at y3 = " + format_double(y3), {y1, g});
    }
  }

  std::vector<double> sx, sdev, sid;
  std::vector<std::size_t> breaks;
  int index = 0;
  for (const auto& step : step_shapes(m, jump_tol)) {
    if (!sx.empty()) breaks.push_back(sx.size());
    for (std::size_t i = 0; i < step.x.size(); ++i) {
      sid.push_back(index);
      sx.push_back(step.x[i]);
      sdev.push_back(step.deviation[i]);
    }
    ++index;
  }
  dat("step_deviation.dat", "step x0 deviation_from_chord", {sid, sx, sdev}, breaks);
  return written;
}

}  // namespace daopt
