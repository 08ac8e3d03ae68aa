#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "lnvb/gibbs.hpp"
#include "lnvb/simulation.hpp"
#include "lnvb/vb_core.hpp"

namespace lnvb {

enum class Subcommand { kFit, kGibbs, kSimulate, kBench, kDiagnose };

std::string to_string(Subcommand s);
Subcommand parse_subcommand(const std::string& name);

/// Exit codes of a run.
enum ExitCode : int { kExitSuccess = 0, kExitValidation = 2, kExitNumerical = 3, kExitNotConverged = 4 };

/// Simulation-study grid: one cell per (size, eta, replicate).
struct BenchConfig {
  std::vector<Eigen::Index> sizes{50, 100};
  std::vector<double> etas{0.0, 1.0, 10.0};
  int replicates = 1;
  /// Any of "svi", "scvi", "gibbs"; Gibbs is the reference when present.
  std::vector<std::string> methods{"svi", "scvi", "gibbs"};
  /// Data and fitted-model settings; n and eta are taken from the grid.
  Ar1ScenarioConfig scenario;

  std::size_t cell_count() const { return sizes.size() * etas.size() * static_cast<std::size_t>(replicates); }
  void validate() const;
};

struct RunConfig {
  Subcommand subcommand = Subcommand::kFit;
  std::string model_path;
  std::string data_path;
  std::string out_dir = "lnvb-out";
  /// "svi", "scvi" or "gibbs".
  std::string method = "scvi";
  std::uint64_t seed = 1;
  VbConfig vb;
  GibbsConfig gibbs;
  /// simulate: the scenario; bench: see BenchConfig.
  Ar1ScenarioConfig simulate;
  BenchConfig bench;
  /// diagnose: improved-tail draws and the E[V] flag rule.
  int tail_draws = 2000;
  double flag_multiple = 3.0;

  /// Copies the master seed into the VB and Gibbs configurations.
  void resolve();
  void validate() const;
};

/// JSON form of a resolved configuration (with library versions on output).
std::string run_config_to_json(const RunConfig& config);
RunConfig run_config_from_json(const std::string& text);

/// Fit of one method in one bench cell.
struct MethodFit {
  std::string method;
  bool ok = false;
  std::string error;
  Eigen::VectorXd x_mean;
  Eigen::VectorXd x_sd;
  Eigen::VectorXd v_mean;
  double eta_mean = 0.0;
  double eta_sd = 0.0;
  /// Natural-scale hyperparameter means and sds (problem order).
  std::vector<double> theta_mean;
  std::vector<double> theta_sd;
  std::vector<std::string> theta_names;
  int iterations = 0;
  bool converged = false;
  double seconds = 0.0;
  std::vector<VbIteration> trace;
  /// Gibbs: minimum effective sample size over x and eta.
  double min_ess = 0.0;
};

struct BenchCell {
  std::size_t index = 0;
  Eigen::Index n = 0;
  double eta = 0.0;
  int replicate = 0;
  Eigen::VectorXd x_true;
  Eigen::VectorXd v_true;
  std::vector<MethodFit> fits;

  const MethodFit* fit(const std::string& method) const;
};

struct BenchResult {
  BenchConfig config;
  std::vector<BenchCell> cells;
  double seconds = 0.0;
};

/// Runs every cell on a worker pool; each cell owns the stream
/// derive_stream(seed, cell index). A failing method is recorded in its
/// MethodFit and the grid continues.
BenchResult bench_run(const BenchConfig& config, const VbConfig& vb, const GibbsConfig& gibbs, std::uint64_t seed,
                      int workers = 0, const std::function<void(const BenchCell&)>& on_cell = {});

/// Writes cells.csv, scatter.csv, timing.csv, trace.csv and diagnostics.csv,
/// and returns the summary object as JSON text.
std::string write_bench_tables(const BenchResult& result, const std::filesystem::path& dir);

/// Runs a subcommand end to end: loads inputs, writes the output directory
/// (config.json, summary.json, trace.csv, diagnostics.csv and extras), prints
/// a short report to `report`, and maps failures to exit codes.
int execute(RunConfig config, std::ostream& report);

}  // namespace lnvb
