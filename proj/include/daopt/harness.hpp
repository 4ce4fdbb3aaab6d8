#pragma once

// Experiment plumbing behind the daopt command line: configuration files,
// CSV and report I/O, runs, mapping evaluation, tables and plot data.

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "daopt/engine.hpp"
#include "daopt/side_channel.hpp"
#include "daopt/wce.hpp"

namespace daopt {

/// Bad configuration, command-line or file contents. The message starts with
/// the offending field or file.
class ConfigError : public InvalidParameter {
 public:
  using InvalidParameter::InvalidParameter;
};

/// Exit codes of the command line tool.
enum ExitCode : int { kExitOk = 0, kExitInvalid = 2, kExitNumeric = 3 };

enum class ProblemKind { wce, side_channel };

struct RunConfig {
  ProblemKind problem = ProblemKind::wce;
  double k = 0.2;
  double sigma = 5.0;
  double lambda = 0.0;
  std::optional<double> target_b_snr;
  double b_snr_tol = 0.1;
  std::vector<double> lambda_ladder{0.0, 0.01, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0, 100.0};
  int max_bisections = 6;

  Schedule schedule;
  /// Unset: 5 x best affine cost.
  std::optional<double> t_init;
  /// Unset: 1e-4 x t_init.
  std::optional<double> t_min;

  std::size_t x0_nodes = 1001;
  double truncation = 5.0;
  std::size_t y_nodes = 1001;
  std::size_t y1_nodes = 201;
  std::size_t y3_nodes = 201;
  double noise_truncation = 8.0;
  bool symmetric = false;

  std::filesystem::path output = "out";

  /// Throws ConfigError naming the first invalid field.
  void validate() const;
  GridOptions wce_grid() const;
  SideChannelGrid side_channel_grid() const;
  /// Schedule with t_init / t_min resolved against the affine baseline.
  Schedule resolved_schedule() const;
  /// key = value lines that parse back to this configuration.
  std::vector<std::pair<std::string, std::string>> entries() const;
};

RunConfig parse_config(std::istream& in, const std::string& source = "config");
RunConfig load_config(const std::filesystem::path& path);

/// Round-trip decimal form (17 significant digits).
std::string format_double(double v);
/// Short form for tables (6 significant digits).
std::string format_short(double v);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  std::size_t column(const std::string& name) const;  // throws ConfigError if absent
};

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& columns);
CsvTable read_csv(const std::filesystem::path& path);

using Report = std::vector<std::pair<std::string, std::string>>;
void write_report(const std::filesystem::path& path, const Report& report);
std::map<std::string, std::string> read_report(const std::filesystem::path& path);

struct RunOptions {
  std::optional<std::uint64_t> seed;
  bool verbose = false;
  std::ostream* log = nullptr;  // progress lines, one per temperature
};

struct RunSummary {
  double cost = 0.0;
  double steps = 0.0;
  std::size_t models = 0;
  double b_snr = 0.0;
  double lambda = 0.0;
  double seconds = 0.0;
  bool hit_model_cap = false;
  std::string warning;
};

/// Anneals the configured problem and writes trace.csv, snapshots.csv,
/// mapping.csv, estimator.csv, report.txt (and inner.csv when verbose) to
/// the output directory. A side-channel config with target_b_snr searches
/// lambda first.
RunSummary run_experiment(RunConfig config, const RunOptions& options = {});

struct MappingEvaluation {
  CostSplit split;
  double steps = 0.0;
  MappingTable mapping;
  std::vector<double> y;
  std::vector<double> g2;
};

/// WCE cost of the f1 tabulated in `table` (columns x0, f1; interpolated
/// between rows, clamped outside) with its exact conditional-mean g2.
MappingEvaluation evaluate_mapping(const CsvTable& table, const WceParams& params, const GridOptions& grid = {});

/// Writes mapping.csv, estimator.csv and report.txt for an evaluated mapping.
void write_evaluation(const std::filesystem::path& dir, const MappingEvaluation& e, const WceParams& params);

struct ReferenceCosts {
  std::map<std::string, double> wce;                            // literature rows of the WCE table
  std::vector<std::tuple<double, double, double>> side_channel;  // (b_snr, linear cost, J^M)
};

ReferenceCosts load_reference_costs(const std::filesystem::path& path);
std::filesystem::path default_reference_path();

struct CostTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::string aligned() const;
  std::string csv() const;
};

/// Collects report.txt files in `dir` and its immediate subdirectories.
/// Throws ConfigError if there are none.
std::vector<CostTable> build_tables(const std::filesystem::path& dir, const ReferenceCosts& refs);

/// Writes gnuplot-ready .dat files for the run in `dir` and returns their names.
std::vector<std::string> write_plot_data(const std::filesystem::path& dir, double jump_tol = 0.5);

}  // namespace daopt
