// daopt: deterministic annealing for Witsenhausen-type control problems.
//
//   daopt run <config> [--seed N] [--verbose]
//   daopt eval-mapping <csv> --k <v> --sigma <v> [--out <dir>]
//   daopt sweep <config> --target-bsnr <v> --tol <v> [--seed N] [--verbose]
//   daopt table <dir> [--reference <file>] [--csv]
//   daopt plot-data <dir>
//
// Exit codes: 0 ok, 2 invalid configuration/input, 3 numeric failure.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "daopt/harness.hpp"

using namespace daopt;

namespace {

void print_summary(const RunSummary& s, const RunConfig& config) {
  std::cout << "J = " << format_double(s.cost) << '\n'
            << "models = " << s.models << '\n'
            << "steps = " << format_short(s.steps) << '\n';
  if (config.problem == ProblemKind::side_channel) {
    std::cout << "b_snr = " << format_double(s.b_snr) << '\n' << "lambda = " << format_double(s.lambda) << '\n';
  }
  std::cout << "seconds = " << format_short(s.seconds) << '\n' << "output = " << config.output.string() << '\n';
  if (s.hit_model_cap) std::cerr << "warning: the model cap was reached during annealing\n";
  if (!s.warning.empty()) std::cerr << "warning: " << s.warning << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deterministic annealing optimizer for decentralized control problems"};
  app.require_subcommand(1);

  std::optional<std::uint64_t> seed;
  bool verbose = false;
  app.add_option("--seed", seed, "Override the configured random seed");
  app.add_flag("--verbose", verbose, "Log every temperature and write inner-iteration free energies");

  std::string config_path;
  auto* run = app.add_subcommand("run", "Anneal the problem described by a config file");
  run->add_option("config", config_path, "Config file (key = value lines)")->required();

  std::string csv_path, eval_out;
  double k = 0.0, sigma = 0.0;
  auto* eval = app.add_subcommand("eval-mapping", "Cost of a tabulated first-stage map f1 with its optimal g2");
  eval->add_option("csv", csv_path, "CSV with columns x0,f1")->required();
  eval->add_option("--k", k, "Control cost weight")->required();
  eval->add_option("--sigma", sigma, "Standard deviation of x0")->required();
  eval->add_option("--out", eval_out, "Also write mapping, estimator and report files here");

  double target = 0.0, tol = 0.1;
  auto* sweep = app.add_subcommand("sweep", "Search lambda so the side-channel power meets a target");
  sweep->add_option("config", config_path, "Side-channel config file")->required();
  sweep->add_option("--target-bsnr", target, "Target side-channel power E{U2^2}")->required();
  sweep->add_option("--tol", tol, "Accepted distance from the target")->required();

  std::string dir, reference;
  bool as_csv = false;
  auto* table = app.add_subcommand("table", "Cost comparison table of the runs in a directory");
  table->add_option("dir", dir, "Run directory or parent of run directories")->required();
  table->add_option("--reference", reference, "Literature reference costs file");
  table->add_flag("--csv", as_csv, "Print CSV instead of aligned text");

  auto* plot = app.add_subcommand("plot-data", "Write gnuplot data files for a run");
  plot->add_option("dir", dir, "Run directory")->required();

  // Global flags are accepted after the subcommand as well.
  for (auto* sub : {run, sweep}) {
    sub->add_option("--seed", seed, "Override the configured random seed");
    sub->add_flag("--verbose", verbose, "Log every temperature and write inner-iteration free energies");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInvalid;
  }

  try {
    RunOptions options;
    options.seed = seed;
    options.verbose = verbose;
    if (verbose) options.log = &std::cerr;

    if (run->parsed()) {
      const RunConfig config = load_config(config_path);
      print_summary(run_experiment(config, options), config);
    } else if (sweep->parsed()) {
      RunConfig config = load_config(config_path);
      if (config.problem != ProblemKind::side_channel) throw ConfigError("problem: sweep needs the side-channel problem");
      config.target_b_snr = target;
      config.b_snr_tol = tol;
      print_summary(run_experiment(config, options), config);
    } else if (eval->parsed()) {
      const WceParams params{k, sigma};
      const MappingEvaluation e = evaluate_mapping(read_csv(csv_path), params);
      std::cout << "J = " << format_double(e.split.total()) << '\n'
                << "control_cost = " << format_double(e.split.control) << '\n'
                << "estimation_cost = " << format_double(e.split.estimation) << '\n'
                << "steps = " << format_short(e.steps) << '\n';
      if (!eval_out.empty()) write_evaluation(eval_out, e, params);
    } else if (table->parsed()) {
      const ReferenceCosts refs = load_reference_costs(reference.empty() ? default_reference_path() : std::filesystem::path(reference));
      const auto tables = build_tables(dir, refs);
      std::ofstream text(std::filesystem::path(dir) / "table.txt"), csv(std::filesystem::path(dir) / "table.csv");
      for (std::size_t i = 0; i < tables.size(); ++i) {
        if (i) std::cout << '\n';
        std::cout << (as_csv ? tables[i].csv() : tables[i].aligned());
        text << (i ? "\n" : "") << tables[i].aligned();
        csv << (i ? "\n" : "") << tables[i].csv();
      }
    } else if (plot->parsed()) {
      for (const auto& name : write_plot_data(dir)) std::cout << name << '\n';
    }
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const InvalidParameter& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInvalid;
  }
  return kExitOk;
}
