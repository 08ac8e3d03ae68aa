// lnvb: command line front end for fitting, simulating and benchmarking
// latent non-Gaussian models.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lnvb/error.hpp"
#include "lnvb/harness.hpp"
#include "lnvb/io.hpp"

namespace {

double parse_double(const std::string& text) {
  std::size_t pos = 0;
  const double v = std::stod(text, &pos);
  if (pos != text.size()) {
    throw CLI::ValidationError("not a number: " + text);
  }
  return v;
}

// Flags shared by every subcommand; only options given on the command line
// override a configuration loaded with --config.
struct Common {
  std::string config;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
};

struct FitFlags {
  std::optional<std::string> model;
  std::optional<std::string> data;
  std::optional<std::string> method;
  std::optional<std::string> threshold;
  std::optional<int> max_iter;
  std::optional<int> mc_samples;
  std::optional<double> flag_multiple;
  std::optional<int> tail_draws;
  std::optional<int> iterations;
  std::optional<int> burn_in;
  bool debug_elbo = false;
};

struct SimFlags {
  std::optional<long> n;
  std::optional<double> eta;
  std::optional<double> rho;
  std::optional<double> sigma_x;
  std::optional<double> sigma_y;
  std::optional<std::string> noise;
  std::optional<std::vector<long>> jumps;
  std::optional<double> jump_size;
};

struct BenchFlags {
  std::optional<std::vector<long>> sizes;
  std::optional<std::vector<double>> etas;
  std::optional<int> replicates;
  std::optional<std::vector<std::string>> methods;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "Rerun from a config.json written by an earlier run")->check(CLI::ExistingFile);
  app->add_option("--out", c.out, "Output directory");
  app->add_option("--seed", c.seed, "Master seed");
}

void add_fit(CLI::App* app, FitFlags& f, bool method, bool gibbs, bool tail) {
  app->add_option("--model", f.model, "Model description (JSON)");
  app->add_option("--data", f.data, "Data file (.csv or .json)");
  if (method) {
    app->add_option("--method", f.method, "svi, scvi or gibbs");
  }
  app->add_option("--threshold", f.threshold, "Relative-change stopping threshold (inf = fixed iterations)");
  app->add_option("--max-iter", f.max_iter, "Maximum VB iterations");
  app->add_option("--mc-samples", f.mc_samples, "Monte Carlo draws per SCVI iteration");
  app->add_option("--flag-multiple", f.flag_multiple, "Flag V_i with E[V_i] above this multiple of h_i");
  app->add_flag("--debug-elbo", f.debug_elbo, "Track the ELBO on a frozen grid and check monotonicity");
  if (gibbs) {
    app->add_option("--iterations", f.iterations, "Gibbs sweeps including burn-in");
    app->add_option("--burn-in", f.burn_in, "Gibbs burn-in sweeps");
  }
  if (tail) {
    app->add_option("--tail-draws", f.tail_draws, "Improved-tail posterior draws");
  }
}

void add_scenario(CLI::App* app, SimFlags& s) {
  app->add_option("--n", s.n, "Series length");
  app->add_option("--eta", s.eta, "Noise parameter eta (0 = Gaussian)");
  app->add_option("--rho", s.rho, "AR1 coefficient");
  app->add_option("--sigma-x", s.sigma_x, "Latent noise scale");
  app->add_option("--sigma-y", s.sigma_y, "Observation noise scale");
  app->add_option("--noise", s.noise, "gaussian, nig, tstudent or gal");
  app->add_option("--jumps", s.jumps, "Increment indices receiving a jump");
  app->add_option("--jump-size", s.jump_size, "Jump added to the driving noise");
}

void apply(lnvb::RunConfig& c, const Common& f) {
  if (f.out) c.out_dir = *f.out;
  if (f.seed) c.seed = *f.seed;
}

void apply(lnvb::RunConfig& c, const FitFlags& f) {
  if (f.model) c.model_path = *f.model;
  if (f.data) c.data_path = *f.data;
  if (f.method) c.method = *f.method;
  if (f.threshold) c.vb.threshold = parse_double(*f.threshold);
  if (f.max_iter) c.vb.max_iterations = *f.max_iter;
  if (f.mc_samples) c.vb.mc_samples = *f.mc_samples;
  if (f.flag_multiple) c.flag_multiple = *f.flag_multiple;
  if (f.tail_draws) c.tail_draws = *f.tail_draws;
  if (f.iterations) c.gibbs.iterations = *f.iterations;
  if (f.burn_in) c.gibbs.burn_in = *f.burn_in;
  if (f.debug_elbo) c.vb.debug_elbo = true;
}

void apply(lnvb::Ar1ScenarioConfig& s, const SimFlags& f) {
  if (f.n) s.n = *f.n;
  if (f.eta) s.eta = *f.eta;
  if (f.rho) s.rho = *f.rho;
  if (f.sigma_x) s.sigma_x = *f.sigma_x;
  if (f.sigma_y) s.sigma_y = *f.sigma_y;
  if (f.noise) s.noise = lnvb::parse_noise_kind(*f.noise);
  if (f.jumps) s.jumps.assign(f.jumps->begin(), f.jumps->end());
  if (f.jump_size) s.jump_size = *f.jump_size;
}

void apply(lnvb::BenchConfig& b, const BenchFlags& f) {
  if (f.sizes) b.sizes.assign(f.sizes->begin(), f.sizes->end());
  if (f.etas) b.etas = *f.etas;
  if (f.replicates) b.replicates = *f.replicates;
  if (f.methods) b.methods = *f.methods;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Variational and Gibbs inference for latent non-Gaussian models"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(LNVB_VERSION));

  Common common;
  FitFlags fit;
  SimFlags sim;
  BenchFlags bench;

  auto* fit_cmd = app.add_subcommand("fit", "Fit a model with SVI, SCVI or Gibbs");
  add_common(fit_cmd, common);
  add_fit(fit_cmd, fit, true, true, false);

  auto* gibbs_cmd = app.add_subcommand("gibbs", "Run the reference Gibbs sampler");
  add_common(gibbs_cmd, common);
  add_fit(gibbs_cmd, fit, false, true, false);

  auto* diag_cmd = app.add_subcommand("diagnose", "Fit with VB and report V quantiles, evidence ratio and tails");
  add_common(diag_cmd, common);
  add_fit(diag_cmd, fit, true, false, true);

  auto* sim_cmd = app.add_subcommand("simulate", "Simulate the AR1 scenario and write data.csv and model.json");
  add_common(sim_cmd, common);
  add_scenario(sim_cmd, sim);

  auto* bench_cmd = app.add_subcommand("bench", "Run the simulation study grid");
  add_common(bench_cmd, common);
  add_fit(bench_cmd, fit, false, true, false);
  add_scenario(bench_cmd, sim);
  bench_cmd->add_option("--sizes", bench.sizes, "Series lengths");
  bench_cmd->add_option("--etas", bench.etas, "Noise parameters");
  bench_cmd->add_option("--replicates", bench.replicates, "Replicates per cell");
  bench_cmd->add_option("--methods", bench.methods, "Subset of svi, scvi, gibbs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : lnvb::kExitValidation;
  }

  try {
    CLI::App* used = app.get_subcommands().front();
    lnvb::RunConfig config;
    if (!common.config.empty()) {
      config = lnvb::run_config_from_json(lnvb::read_text_file(common.config));
    }
    config.subcommand = lnvb::parse_subcommand(used->get_name());
    if (used == gibbs_cmd) {
      config.method = "gibbs";
    }
    apply(config, common);
    apply(config, fit);
    if (used == sim_cmd) {
      apply(config.simulate, sim);
    }
    if (used == bench_cmd) {
      apply(config.bench.scenario, sim);
      apply(config.bench, bench);
    }
    return lnvb::execute(config, std::cout);
  } catch (const lnvb::ValidationError& e) {
    std::cerr << "validation error: " << e.what() << '\n';
    return lnvb::kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return lnvb::kExitValidation;
  }
}
