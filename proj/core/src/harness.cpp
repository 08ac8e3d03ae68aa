#include "lnvb/harness.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <limits>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>

#include "json.hpp"
#include "lnvb/diagnostics.hpp"
#include "lnvb/error.hpp"
#include "lnvb/io.hpp"
#include "lnvb/parallel.hpp"

#ifndef LNVB_VERSION
#define LNVB_VERSION "unknown"
#endif

namespace lnvb {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::string num(double v) {
  if (std::isnan(v)) {
    return "NA";
  }
  if (std::isinf(v)) {
    return v > 0 ? "inf" : "-inf";
  }
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

json json_number(double v) {
  if (std::isfinite(v)) {
    return v;
  }
  return std::isnan(v) ? json() : json(num(v));
}

double number_from(const json& j, double def) {
  if (j.is_null()) {
    return def;
  }
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw ValidationError("expected a number, got '" + s + "'");
  }
  return j.get<double>();
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) {
    out = j.at(key).get<T>();
  }
}

void read_num(const json& j, const char* key, double& out) {
  if (j.contains(key)) {
    out = number_from(j.at(key), out);
  }
}

// ------------------------------------------------------------ config <-> JSON

json to_json(const LgmOptions& o) {
  return {{"grid",
           {{"points_per_dim", o.grid.points_per_dim},
            {"half_width_sd", o.grid.half_width_sd},
            {"ball_limit", o.grid.ball_limit},
            {"weight_prune", o.grid.weight_prune},
            {"fd_step", o.grid.fd_step},
            {"max_mode_iterations", o.grid.max_mode_iterations},
            {"mode_tolerance", o.grid.mode_tolerance},
            {"min_curvature", o.grid.min_curvature}}},
          {"jitter_relative", o.jitter_relative},
          {"jitter_max", o.jitter_max},
          {"newton_max_iterations", o.newton_max_iterations},
          {"newton_tolerance", o.newton_tolerance}};
}

LgmOptions lgm_from_json(const json& j) {
  LgmOptions o;
  if (j.contains("grid")) {
    const json& g = j.at("grid");
    read(g, "points_per_dim", o.grid.points_per_dim);
    read_num(g, "half_width_sd", o.grid.half_width_sd);
    read_num(g, "ball_limit", o.grid.ball_limit);
    read_num(g, "weight_prune", o.grid.weight_prune);
    read_num(g, "fd_step", o.grid.fd_step);
    read(g, "max_mode_iterations", o.grid.max_mode_iterations);
    read_num(g, "mode_tolerance", o.grid.mode_tolerance);
    read_num(g, "min_curvature", o.grid.min_curvature);
  }
  read_num(j, "jitter_relative", o.jitter_relative);
  read_num(j, "jitter_max", o.jitter_max);
  read(j, "newton_max_iterations", o.newton_max_iterations);
  read_num(j, "newton_tolerance", o.newton_tolerance);
  return o;
}

json to_json(const VbConfig& c) {
  return {{"method", to_string(c.method)},
          {"threshold", json_number(c.threshold)},
          {"max_iterations", c.resolved_max_iterations()},
          {"mc_samples", c.mc_samples},
          {"seed", c.seed},
          {"eta_inv_init", c.eta_inv_init},
          {"fix_v", c.fix_v},
          {"debug_elbo", c.debug_elbo},
          {"freeze_grid", c.freeze_grid},
          {"lgm", to_json(c.lgm)}};
}

VbConfig vb_from_json(const json& j) {
  VbConfig c;
  if (j.contains("method")) c.method = parse_vb_method(j.at("method").get<std::string>());
  read_num(j, "threshold", c.threshold);
  read(j, "max_iterations", c.max_iterations);
  read(j, "mc_samples", c.mc_samples);
  read(j, "seed", c.seed);
  read_num(j, "eta_inv_init", c.eta_inv_init);
  read(j, "fix_v", c.fix_v);
  read(j, "debug_elbo", c.debug_elbo);
  read(j, "freeze_grid", c.freeze_grid);
  if (j.contains("lgm")) c.lgm = lgm_from_json(j.at("lgm"));
  return c;
}

json to_json(const GibbsConfig& c) {
  return {{"iterations", c.iterations}, {"burn_in", c.burn_in},     {"seed", c.seed},
          {"v_first", c.v_first},       {"fix_v", c.fix_v},         {"sample_eta", c.sample_eta},
          {"fixed_eta", c.fixed_eta},   {"mode_iterations", c.mode_iterations}};
}

GibbsConfig gibbs_from_json(const json& j) {
  GibbsConfig c;
  read(j, "iterations", c.iterations);
  read(j, "burn_in", c.burn_in);
  read(j, "seed", c.seed);
  read(j, "v_first", c.v_first);
  read(j, "fix_v", c.fix_v);
  read(j, "sample_eta", c.sample_eta);
  read_num(j, "fixed_eta", c.fixed_eta);
  read(j, "mode_iterations", c.mode_iterations);
  return c;
}

json to_json(const Ar1ScenarioConfig& c) {
  return {{"n", c.n},
          {"eta", c.eta},
          {"rho", c.rho},
          {"sigma_x", c.sigma_x},
          {"sigma_y", c.sigma_y},
          {"noise", to_string(c.noise)},
          {"jumps", c.jumps},
          {"jump_size", c.jump_size},
          {"alpha_eta", c.alpha_eta},
          {"precision_shape", c.precision_shape},
          {"precision_rate", c.precision_rate},
          {"learn_tau_x", c.learn_tau_x},
          {"learn_tau_y", c.learn_tau_y},
          {"learn_rho", c.learn_rho}};
}

Ar1ScenarioConfig scenario_from_json(const json& j) {
  Ar1ScenarioConfig c;
  read(j, "n", c.n);
  read_num(j, "eta", c.eta);
  read_num(j, "rho", c.rho);
  read_num(j, "sigma_x", c.sigma_x);
  read_num(j, "sigma_y", c.sigma_y);
  if (j.contains("noise")) c.noise = parse_noise_kind(j.at("noise").get<std::string>());
  read(j, "jumps", c.jumps);
  read_num(j, "jump_size", c.jump_size);
  read_num(j, "alpha_eta", c.alpha_eta);
  read_num(j, "precision_shape", c.precision_shape);
  read_num(j, "precision_rate", c.precision_rate);
  read(j, "learn_tau_x", c.learn_tau_x);
  read(j, "learn_tau_y", c.learn_tau_y);
  read(j, "learn_rho", c.learn_rho);
  return c;
}

json to_json(const BenchConfig& c) {
  return {{"sizes", c.sizes},
          {"etas", c.etas},
          {"replicates", c.replicates},
          {"methods", c.methods},
          {"scenario", to_json(c.scenario)}};
}

BenchConfig bench_from_json(const json& j) {
  BenchConfig c;
  read(j, "sizes", c.sizes);
  read(j, "etas", c.etas);
  read(j, "replicates", c.replicates);
  read(j, "methods", c.methods);
  if (j.contains("scenario")) c.scenario = scenario_from_json(j.at("scenario"));
  return c;
}

// ------------------------------------------------------------ CSV helpers

class Csv {
 public:
  explicit Csv(const std::vector<std::string>& header) {
    for (std::size_t i = 0; i < header.size(); ++i) {
      out_ << (i ? "," : "") << header[i];
    }
    out_ << '\n';
  }
  template <typename... T>
  void row(const T&... fields) {
    bool first = true;
    ((out_ << (first ? "" : ",") << field(fields), first = false), ...);
    out_ << '\n';
  }
  void write(const fs::path& path) const { write_text_file(path, out_.str()); }

 private:
  static std::string field(double v) { return num(v); }
  static std::string field(int v) { return std::to_string(v); }
  static std::string field(long v) { return std::to_string(v); }
  static std::string field(long long v) { return std::to_string(v); }
  static std::string field(std::size_t v) { return std::to_string(v); }
  static std::string field(bool v) { return v ? "true" : "false"; }
  static std::string field(const std::string& v) {
    if (v.find_first_of(",\"\n") == std::string::npos) {
      return v;
    }
    std::string q = "\"";
    for (char ch : v) {
      q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
    }
    return q + "\"";
  }
  static std::string field(const char* v) { return field(std::string(v)); }
  std::ostringstream out_;
};

double elapsed(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ------------------------------------------------------------ bench pieces

MethodFit fit_vi(const Ar1Scenario& data, VbConfig vb, const std::string& method) {
  MethodFit f;
  f.method = method;
  vb.method = parse_vb_method(method);
  const auto t0 = std::chrono::steady_clock::now();
  const VbResult r = run_vb(data.model, data.obs, vb);
  f.seconds = elapsed(t0);
  f.x_mean = r.posterior.mean();
  f.x_sd = r.posterior.sd();
  f.v_mean = r.state[0].v_plus;
  f.eta_mean = r.state[0].eta.mean;
  f.eta_sd = r.state[0].eta_sd;
  const auto& hyp = r.posterior.problem().hyperparameters();
  for (std::size_t j = 0; j < hyp.size(); ++j) {
    f.theta_names.push_back(hyp[j].name);
    f.theta_mean.push_back(r.posterior.hyper_mean(j));
    f.theta_sd.push_back(r.posterior.hyper_sd(j));
  }
  f.iterations = r.iterations;
  f.converged = r.converged;
  f.trace = r.trace;
  f.ok = true;
  return f;
}

MethodFit fit_gibbs(const Ar1Scenario& data, const GibbsConfig& cfg) {
  MethodFit f;
  f.method = "gibbs";
  const auto t0 = std::chrono::steady_clock::now();
  const auto hyp = LgmProblem::create(data.model, data.obs)->hyperparameters();
  const GibbsResult g = run_gibbs(data.model, data.obs, cfg);
  f.seconds = elapsed(t0);
  f.x_mean = g.x_mean();
  f.x_sd = g.x_sd();
  f.v_mean = g.v_mean(0);
  const ChainSummary es = g.eta_summary(0);
  f.eta_mean = es.mean;
  f.eta_sd = es.sd;
  f.min_ess = es.ess;
  for (Eigen::Index i = 0; i < g.x.cols(); ++i) {
    f.min_ess = std::min(f.min_ess, g.x_summary(i).ess);
  }
  for (std::size_t j = 0; j < hyp.size(); ++j) {
    const ChainSummary s = g.theta_summary(static_cast<Eigen::Index>(j));
    f.theta_names.push_back(hyp[j].name);
    f.theta_mean.push_back(s.mean);
    f.theta_sd.push_back(s.sd);
  }
  f.iterations = cfg.iterations;
  f.converged = true;
  f.ok = true;
  return f;
}

// Least-squares slope of b on a (with intercept).
double ls_slope(const std::vector<double>& a, const std::vector<double>& b) {
  const auto n = static_cast<double>(a.size());
  if (a.size() < 2) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  double ma = 0.0;
  double mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0;
  double saa = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
  }
  return saa > 0.0 ? sab / saa : std::numeric_limits<double>::quiet_NaN();
}

// ------------------------------------------------------------ run helpers

struct LoadedData {
  ModelFile model;
  DataBundle data;
};

LoadedData load_inputs(const RunConfig& cfg) {
  if (cfg.model_path.empty() || cfg.data_path.empty()) {
    throw ValidationError("this subcommand needs --model and --data");
  }
  for (const auto& p : {cfg.model_path, cfg.data_path}) {
    if (!fs::exists(p)) {
      throw ValidationError("file not found: " + p);
    }
  }
  LoadedData out;
  out.model = load_model(cfg.model_path);
  out.data = ingest_data(cfg.data_path, out.model.schema);
  validate(out.model.model, out.data.obs);
  return out;
}

json hyper_json(const LgmPosterior& post) {
  json arr = json::array();
  const auto& hyp = post.problem().hyperparameters();
  for (std::size_t j = 0; j < hyp.size(); ++j) {
    arr.push_back({{"name", hyp[j].name}, {"mean", post.hyper_mean(j)}, {"sd", post.hyper_sd(j)}});
  }
  return arr;
}

void write_latent(const fs::path& path, const Eigen::VectorXd& mean, const Eigen::VectorXd& sd) {
  Csv csv({"node", "mean", "sd"});
  for (Eigen::Index i = 0; i < mean.size(); ++i) {
    csv.row(static_cast<long long>(i), mean[i], sd.size() == mean.size() ? sd[i] : std::nan(""));
  }
  csv.write(path);
}

void write_vb_trace(const fs::path& path, const VbResult& r) {
  const std::size_t nc = r.state.size();
  std::string text = "iteration";
  for (std::size_t c = 0; c < nc; ++c) {
    text += ",eta_mean_" + std::to_string(c);
  }
  text += ",max_relative_change,elbo,seconds\n";
  for (const auto& it : r.trace) {
    text += std::to_string(it.iteration);
    for (std::size_t c = 0; c < nc; ++c) {
      text += "," + num(c < it.eta_mean.size() ? it.eta_mean[c] : std::nan(""));
    }
    text += "," + num(it.max_relative_change) + "," + num(it.elbo) + "," + num(it.seconds) + "\n";
  }
  write_text_file(path, text);
}

void write_v_diagnostics(const fs::path& path, const VDiagnostics& d, const ModelSpec& model) {
  std::vector<std::string> header{"component", "name", "index", "h", "mean"};
  for (double p : d.probabilities) {
    header.push_back("q" + num(p));
  }
  header.emplace_back("flagged");
  std::string text;
  for (std::size_t k = 0; k < header.size(); ++k) {
    text += (k ? "," : "") + header[k];
  }
  text += '\n';
  for (const auto& r : d.rows) {
    text += std::to_string(r.component) + "," + model.components[r.component].name + "," + std::to_string(r.index) +
            "," + num(r.h) + "," + num(r.mean);
    for (double q : r.quantiles) {
      text += "," + num(q);
    }
    text += std::string(",") + (r.flagged ? "true" : "false") + "\n";
  }
  write_text_file(path, text);
}

void report_flags(std::ostream& report, const VDiagnostics& d, const ModelSpec& model) {
  const auto flagged = d.flagged();
  report << "flagged mixing variables: " << flagged.size() << '\n';
  for (const auto& r : flagged) {
    report << "  " << model.components[r.component].name << "[" << r.index << "] E[V]=" << num(r.mean)
           << " (h=" << num(r.h) << ")\n";
  }
}

json versions_json() {
  std::ostringstream eigen;
  eigen << EIGEN_WORLD_VERSION << '.' << EIGEN_MAJOR_VERSION << '.' << EIGEN_MINOR_VERSION;
  return {{"lnvb", LNVB_VERSION}, {"eigen", eigen.str()},
#if defined(__VERSION__)
          {"compiler", __VERSION__}
#else
          {"compiler", "unknown"}
#endif
  };
}

void write_config(const fs::path& dir, const RunConfig& cfg) {
  write_text_file(dir / "config.json", run_config_to_json(cfg));
}

void write_summary(const fs::path& dir, const json& summary) { write_text_file(dir / "summary.json", summary.dump(2) + "\n"); }

int run_vb_subcommand(const RunConfig& cfg, std::ostream& report, bool diagnose) {
  const fs::path dir = cfg.out_dir;
  const LoadedData in = load_inputs(cfg);
  const ModelSpec& model = in.model.model;
  const auto t0 = std::chrono::steady_clock::now();
  const VbResult r = run_vb(model, in.data.obs, cfg.vb);
  const double seconds = elapsed(t0);
  VDiagnosticsOptions vopt;
  vopt.flag_multiple = cfg.flag_multiple;
  vopt.seed = cfg.seed;
  const VDiagnostics vd = v_diagnostics(r, vopt);

  json summary{{"subcommand", to_string(cfg.subcommand)},
               {"method", to_string(r.config.method)},
               {"converged", r.converged},
               {"iterations", r.iterations},
               {"seconds", seconds},
               {"elbo", json_number(r.elbo)},
               {"log_evidence", {{"value", json_number(r.log_evidence())},
                                 {"kind", std::isfinite(r.elbo) ? "elbo" : "laplace"},
                                 {"label", "approximate"}}},
               {"hyperparameters", hyper_json(r.posterior)},
               {"warnings", r.warnings},
               {"flagged", vd.flagged().size()}};
  json eta = json::array();
  for (std::size_t c = 0; c < r.state.size(); ++c) {
    eta.push_back({{"component", model.components[c].name},
                   {"gaussian", r.state[c].gaussian},
                   {"mean", r.state[c].eta.mean},
                   {"sd", r.state[c].eta_sd}});
  }
  summary["eta"] = eta;
  if (model.likelihood == LikelihoodKind::kGaussian) {
    const PredictiveScores ps = gaussian_predictive_scores(r.posterior);
    summary["predictive"] = {{"loo", ps.loo}, {"lppd", ps.lppd}, {"p_waic", ps.p_waic}, {"waic", ps.waic}};
  }
  if (diagnose) {
    auto problem = LgmProblem::create(model, in.data.obs, cfg.vb.lgm);
    const LgmPosterior gauss = problem->fit(problem->default_weights());
    const EvidenceRatio er = evidence_ratio(evidence_of(r), evidence_of(gauss));
    summary["evidence_ratio_vs_gaussian"] = {{"log_ratio", er.log_ratio},
                                             {"ratio", json_number(er.ratio)},
                                             {"numerator", er.kind_a},
                                             {"denominator", er.kind_b},
                                             {"label", er.label}};
    if (model.likelihood == LikelihoodKind::kGaussian) {
      const PredictiveScores ps = gaussian_predictive_scores(gauss);
      summary["predictive_gaussian_model"] = {
          {"loo", ps.loo}, {"lppd", ps.lppd}, {"p_waic", ps.p_waic}, {"waic", ps.waic}};
    }
    Rng rng = derive_stream(cfg.seed, 101);
    const auto draws = static_cast<std::size_t>(cfg.tail_draws);
    const Eigen::MatrixXd tail = improved_tail_sample(r, draws, rng);
    const Eigen::MatrixXd plain = posterior_sample(r.posterior, draws, rng);
    json kurt = json::array();
    const LgmProblem& pr = r.posterior.problem();
    for (std::size_t c = 0; c < model.components.size(); ++c) {
      const SparseMatrix d = model.components[c].d_at(model.components[c].rho.value);
      kurt.push_back({{"component", model.components[c].name},
                      {"improved_tail", json_number(mean_increment_excess_kurtosis(tail, d, pr.component_offset(c)))},
                      {"plain", json_number(mean_increment_excess_kurtosis(plain, d, pr.component_offset(c)))}});
    }
    summary["increment_excess_kurtosis"] = kurt;
    Csv csv({"node", "mean", "sd", "q05", "q95"});
    for (Eigen::Index i = 0; i < tail.cols(); ++i) {
      std::vector<double> col(tail.col(i).data(), tail.col(i).data() + tail.rows());
      std::sort(col.begin(), col.end());
      const double m = tail.col(i).mean();
      const double sd = std::sqrt((tail.col(i).array() - m).square().sum() / std::max<double>(1.0, tail.rows() - 1.0));
      csv.row(static_cast<long long>(i), m, sd, col[col.size() / 20], col[col.size() - 1 - col.size() / 20]);
    }
    csv.write(dir / "improved_tail.csv");
    report << "evidence ratio vs Gaussian model (approximate): " << num(er.ratio) << '\n';
  }
  write_config(dir, cfg);
  write_summary(dir, summary);
  write_vb_trace(dir / "trace.csv", r);
  write_v_diagnostics(dir / "diagnostics.csv", vd, model);
  write_latent(dir / "latent.csv", r.posterior.mean(), r.posterior.sd());

  report << to_string(r.config.method) << ": " << r.iterations << " iterations, "
         << (r.converged ? "converged" : "NOT converged") << ", log evidence (" << (std::isfinite(r.elbo) ? "elbo" : "laplace")
         << ") " << num(r.log_evidence()) << '\n';
  for (std::size_t c = 0; c < r.state.size(); ++c) {
    if (!r.state[c].gaussian) {
      report << "  E[eta] " << model.components[c].name << " = " << num(r.state[c].eta.mean) << " (sd "
             << num(r.state[c].eta_sd) << ")\n";
    }
  }
  for (const auto& w : r.warnings) {
    report << "warning: " << w << '\n';
  }
  report_flags(report, vd, model);
  return r.converged ? kExitSuccess : kExitNotConverged;
}

int run_gibbs_subcommand(const RunConfig& cfg, std::ostream& report) {
  const fs::path dir = cfg.out_dir;
  const LoadedData in = load_inputs(cfg);
  const ModelSpec& model = in.model.model;
  GibbsConfig gc = cfg.gibbs;
  gc.keep_x = true;
  gc.keep_v = true;
  const GibbsResult g = run_gibbs(model, in.data.obs, gc, cfg.vb.lgm);
  const auto problem = LgmProblem::create(model, in.data.obs, cfg.vb.lgm);
  const auto& hyp = problem->hyperparameters();
  json summary{{"subcommand", "gibbs"}, {"iterations", gc.iterations}, {"burn_in", gc.burn_in}, {"seconds", g.seconds}};
  double max_rhat = 1.0;
  json hj = json::array();
  for (std::size_t j = 0; j < hyp.size(); ++j) {
    const ChainSummary s = g.theta_summary(static_cast<Eigen::Index>(j));
    max_rhat = std::max(max_rhat, s.rhat);
    hj.push_back({{"name", hyp[j].name}, {"mean", s.mean}, {"sd", s.sd}, {"mcse", s.mcse}, {"ess", s.ess}, {"rhat", s.rhat}});
  }
  summary["hyperparameters"] = hj;
  json ej = json::array();
  for (std::size_t c = 0; c < model.components.size(); ++c) {
    const ChainSummary s = g.eta_summary(c);
    if (!model.components[c].noise.is_gaussian() && gc.sample_eta && !gc.fix_v) {
      max_rhat = std::max(max_rhat, s.rhat);
    }
    ej.push_back({{"component", model.components[c].name}, {"mean", s.mean}, {"sd", s.sd}, {"mcse", s.mcse},
                  {"ess", s.ess}, {"rhat", s.rhat}});
  }
  summary["eta"] = ej;
  summary["max_rhat"] = max_rhat;

  // trace.csv: kept draws of eta and hyperparameters.
  std::string text = "iteration";
  for (std::size_t c = 0; c < model.components.size(); ++c) text += ",eta_" + std::to_string(c);
  for (const auto& h : hyp) text += "," + h.name;
  text += '\n';
  for (Eigen::Index r = 0; r < g.eta.rows(); ++r) {
    text += std::to_string(r + gc.burn_in + 1);
    for (Eigen::Index c = 0; c < g.eta.cols(); ++c) text += "," + num(g.eta(r, c));
    for (Eigen::Index j = 0; j < g.theta.cols(); ++j) text += "," + num(g.theta(r, j));
    text += '\n';
  }
  write_text_file(dir / "trace.csv", text);

  // diagnostics.csv: V draws summarized.
  VDiagnostics vd;
  vd.probabilities = {0.05, 0.25, 0.5, 0.75, 0.95};
  vd.quantile_method = "gibbs";
  for (std::size_t c = 0; c < model.components.size(); ++c) {
    if (model.components[c].noise.is_gaussian() || gc.fix_v) continue;
    for (Eigen::Index i = 0; i < g.v[c].cols(); ++i) {
      VDiagnosticRow row;
      row.component = c;
      row.index = i;
      row.h = model.components[c].h[static_cast<std::size_t>(i)];
      std::vector<double> col(g.v[c].col(i).data(), g.v[c].col(i).data() + g.v[c].rows());
      row.mean = g.v[c].col(i).mean();
      std::sort(col.begin(), col.end());
      for (double p : vd.probabilities) {
        const double pos = p * static_cast<double>(col.size() - 1);
        const auto lo = static_cast<std::size_t>(pos);
        const std::size_t hi = std::min(lo + 1, col.size() - 1);
        row.quantiles.push_back(col[lo] + (pos - static_cast<double>(lo)) * (col[hi] - col[lo]));
      }
      row.flagged = row.mean > cfg.flag_multiple * row.h;
      vd.rows.push_back(std::move(row));
    }
  }
  summary["flagged"] = vd.flagged().size();
  write_v_diagnostics(dir / "diagnostics.csv", vd, model);
  write_latent(dir / "latent.csv", g.x_mean(), g.x_sd());
  write_config(dir, cfg);
  write_summary(dir, summary);

  report << "gibbs: " << gc.iterations << " sweeps (" << gc.burn_in << " burn-in) in " << num(g.seconds)
         << " s, max R-hat " << num(max_rhat) << '\n';
  report_flags(report, vd, model);
  if (max_rhat > 1.1) {
    report << "warning: split R-hat above 1.1; chain not converged\n";
    return kExitNotConverged;
  }
  return kExitSuccess;
}

int run_simulate_subcommand(const RunConfig& cfg, std::ostream& report) {
  const fs::path dir = cfg.out_dir;
  Rng rng = derive_stream(cfg.seed, 0);
  const Ar1Scenario s = simulate_ar1(cfg.simulate, rng);
  Csv data({"y", "t", "x_true", "v_true", "noise"});
  for (Eigen::Index i = 0; i < s.y.size(); ++i) {
    data.row(s.y[i], static_cast<long long>(i), s.x[i], s.v[i], s.noise[i]);
  }
  data.write(dir / "data.csv");
  const LatentComponent& comp = s.model.components[0];
  json model{{"likelihood", "gaussian"},
             {"observation_precision",
              {{"fixed", s.model.obs_precision.fixed},
               {"value", s.model.obs_precision.value},
               {"shape", s.model.obs_precision.shape},
               {"rate", s.model.obs_precision.rate}}},
             {"data", {{"response", "y"}}},
             {"components",
              {{{"name", comp.name},
                {"type", "ar1"},
                {"size", comp.cols()},
                {"index", "t"},
                {"rho", {{"value", comp.rho.value}, {"fixed", comp.rho.fixed}}},
                {"noise", {{"family", to_string(comp.noise.kind)}, {"alpha_eta", comp.noise.alpha_eta}}},
                {"precision",
                 {{"fixed", comp.precision.fixed},
                  {"value", comp.precision.value},
                  {"shape", comp.precision.shape},
                  {"rate", comp.precision.rate}}}}}}};
  write_text_file(dir / "model.json", model.dump(2) + "\n");
  write_text_file(dir / "trace.csv", "iteration\n");
  Csv diag({"component", "index", "v_true", "noise"});
  for (Eigen::Index i = 0; i < s.v.size(); ++i) {
    diag.row(std::size_t{0}, static_cast<long long>(i), s.v[i], s.noise[i]);
  }
  diag.write(dir / "diagnostics.csv");
  write_config(dir, cfg);
  write_summary(dir, {{"subcommand", "simulate"},
                      {"n", s.y.size()},
                      {"eta", cfg.simulate.eta},
                      {"y_mean", s.y.mean()},
                      {"max_v_true", s.v.maxCoeff()}});
  report << "simulated AR1 scenario with n=" << s.y.size() << ", eta=" << num(cfg.simulate.eta) << " into "
         << dir.string() << '\n';
  return kExitSuccess;
}

int run_bench_subcommand(const RunConfig& cfg, std::ostream& report) {
  const fs::path dir = cfg.out_dir;
  std::mutex m;
  const BenchResult res = bench_run(cfg.bench, cfg.vb, cfg.gibbs, cfg.seed, 0, [&](const BenchCell& c) {
    std::lock_guard<std::mutex> lock(m);
    report << "cell " << c.index << " (n=" << c.n << ", eta=" << num(c.eta) << ", replicate " << c.replicate << "):";
    for (const auto& f : c.fits) {
      report << ' ' << f.method << (f.ok ? "" : "[failed: " + f.error + "]") << " " << std::fixed
             << std::setprecision(2) << f.seconds << "s" << std::defaultfloat << std::setprecision(6);
    }
    report << '\n';
  });
  const std::string summary = write_bench_tables(res, dir);
  write_config(dir, cfg);
  write_text_file(dir / "summary.json", summary);
  std::size_t failed = 0;
  std::size_t total = 0;
  for (const auto& c : res.cells) {
    for (const auto& f : c.fits) {
      ++total;
      failed += f.ok ? 0 : 1;
    }
  }
  report << "bench: " << res.cells.size() << " cells in " << num(res.seconds) << " s, " << failed << " of " << total
         << " fits failed\n";
  return total > 0 && failed == total ? kExitNumerical : kExitSuccess;
}

}  // namespace

std::string to_string(Subcommand s) {
  switch (s) {
    case Subcommand::kFit: return "fit";
    case Subcommand::kGibbs: return "gibbs";
    case Subcommand::kSimulate: return "simulate";
    case Subcommand::kBench: return "bench";
    case Subcommand::kDiagnose: return "diagnose";
  }
  return "unknown";
}

Subcommand parse_subcommand(const std::string& name) {
  for (auto s : {Subcommand::kFit, Subcommand::kGibbs, Subcommand::kSimulate, Subcommand::kBench,
                 Subcommand::kDiagnose}) {
    if (to_string(s) == name) {
      return s;
    }
  }
  throw ValidationError("unknown subcommand '" + name + "'");
}

void BenchConfig::validate() const {
  if (sizes.empty() || etas.empty() || replicates < 1) {
    throw ValidationError("bench grid needs sizes, etas and at least one replicate");
  }
  if (methods.empty()) {
    throw ValidationError("bench grid needs at least one method");
  }
  for (const auto& m : methods) {
    if (m != "svi" && m != "scvi" && m != "gibbs") {
      throw ValidationError("unknown bench method '" + m + "'");
    }
  }
  for (auto n : sizes) {
    Ar1ScenarioConfig s = scenario;
    s.n = n;
    for (double e : etas) {
      s.eta = e;
      s.validate();
    }
  }
}

void RunConfig::resolve() {
  vb.seed = seed;
  gibbs.seed = seed;
  if (method == "svi" || method == "scvi") {
    vb.method = parse_vb_method(method);
  }
}

void RunConfig::validate() const {
  if (method != "svi" && method != "scvi" && method != "gibbs") {
    throw ValidationError("method must be svi, scvi or gibbs");
  }
  if (subcommand == Subcommand::kDiagnose && method == "gibbs") {
    throw ValidationError("diagnose works on a variational fit (svi or scvi)");
  }
  if (out_dir.empty()) {
    throw ValidationError("output directory must not be empty");
  }
  vb.validate();
  gibbs.validate();
  if (subcommand == Subcommand::kSimulate) {
    simulate.validate();
  }
  if (subcommand == Subcommand::kBench) {
    bench.validate();
  }
  if (tail_draws < 10) {
    throw ValidationError("tail draws must be at least 10");
  }
  if (!(flag_multiple > 0.0)) {
    throw ValidationError("flag multiple must be positive");
  }
}

std::string run_config_to_json(const RunConfig& c) {
  json j{{"subcommand", to_string(c.subcommand)},
         {"model", c.model_path},
         {"data", c.data_path},
         {"out", c.out_dir},
         {"method", c.method},
         {"seed", c.seed},
         {"vb", to_json(c.vb)},
         {"gibbs", to_json(c.gibbs)},
         {"simulate", to_json(c.simulate)},
         {"bench", to_json(c.bench)},
         {"tail_draws", c.tail_draws},
         {"flag_multiple", c.flag_multiple},
         {"versions", versions_json()}};
  return j.dump(2) + "\n";
}

RunConfig run_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed run configuration: ") + e.what());
  }
  try {
    RunConfig c;
    if (j.contains("subcommand")) c.subcommand = parse_subcommand(j.at("subcommand").get<std::string>());
    read(j, "model", c.model_path);
    read(j, "data", c.data_path);
    read(j, "out", c.out_dir);
    read(j, "method", c.method);
    read(j, "seed", c.seed);
    if (j.contains("vb")) c.vb = vb_from_json(j.at("vb"));
    if (j.contains("gibbs")) c.gibbs = gibbs_from_json(j.at("gibbs"));
    if (j.contains("simulate")) c.simulate = scenario_from_json(j.at("simulate"));
    if (j.contains("bench")) c.bench = bench_from_json(j.at("bench"));
    read(j, "tail_draws", c.tail_draws);
    read_num(j, "flag_multiple", c.flag_multiple);
    return c;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("invalid run configuration: ") + e.what());
  }
}

const MethodFit* BenchCell::fit(const std::string& method) const {
  for (const auto& f : fits) {
    if (f.method == method) {
      return &f;
    }
  }
  return nullptr;
}

BenchResult bench_run(const BenchConfig& config, const VbConfig& vb, const GibbsConfig& gibbs, std::uint64_t seed,
                      int workers, const std::function<void(const BenchCell&)>& on_cell) {
  config.validate();
  const auto t0 = std::chrono::steady_clock::now();
  BenchResult out;
  out.config = config;
  out.cells.resize(config.cell_count());
  std::size_t k = 0;
  for (auto n : config.sizes) {
    for (double e : config.etas) {
      for (int r = 0; r < config.replicates; ++r) {
        BenchCell& c = out.cells[k];
        c.index = k++;
        c.n = n;
        c.eta = e;
        c.replicate = r;
      }
    }
  }
  parallel_for(out.cells.size(), resolve_workers(workers), [&](std::size_t i) {
    BenchCell& cell = out.cells[i];
    Rng rng = derive_stream(seed, cell.index);
    Ar1ScenarioConfig sc = config.scenario;
    sc.n = cell.n;
    sc.eta = cell.eta;
    const Ar1Scenario data = simulate_ar1(sc, rng);
    cell.x_true = data.x;
    cell.v_true = data.v;
    VbConfig v = vb;
    v.seed = rng();
    GibbsConfig g = gibbs;
    g.seed = rng();
    for (const auto& method : config.methods) {
      try {
        cell.fits.push_back(method == "gibbs" ? fit_gibbs(data, g) : fit_vi(data, v, method));
      } catch (const std::exception& ex) {
        MethodFit f;
        f.method = method;
        f.error = ex.what();
        cell.fits.push_back(std::move(f));
      }
    }
    if (on_cell) {
      on_cell(cell);
    }
  });
  out.seconds = elapsed(t0);
  return out;
}

std::string write_bench_tables(const BenchResult& result, const fs::path& dir) {
  Csv cells({"cell", "n", "eta", "replicate", "method", "ok", "iterations", "converged", "seconds", "eta_mean",
             "eta_sd", "obs_precision_mean", "latent_precision_mean", "min_ess", "error"});
  Csv scatter({"cell", "n", "eta", "replicate", "method", "quantity", "index", "mean", "sd", "oracle_mean",
               "oracle_sd", "truth"});
  Csv trace({"cell", "method", "iteration", "eta_mean", "max_relative_change", "elbo", "seconds"});
  Csv diag({"cell", "method", "index", "v_mean", "v_oracle", "v_true"});
  struct Agg {
    std::vector<double> seconds, iterations, converged;
    std::vector<double> oracle_x, method_x;
    std::size_t within = 0, nodes = 0;
    std::vector<double> oracle_v_big, method_v_big;
    std::size_t eta_sd_under = 0, eta_sd_pairs = 0;
    std::size_t failures = 0;
  };
  std::map<std::tuple<Eigen::Index, double, std::string>, Agg> agg;
  for (const auto& c : result.cells) {
    const MethodFit* oracle = c.fit("gibbs");
    if (oracle != nullptr && !oracle->ok) {
      oracle = nullptr;
    }
    for (const auto& f : c.fits) {
      Agg& a = agg[{c.n, c.eta, f.method}];
      const auto th = [&](std::size_t j) { return j < f.theta_mean.size() ? f.theta_mean[j] : std::nan(""); };
      cells.row(c.index, static_cast<long long>(c.n), c.eta, c.replicate, f.method, f.ok, f.iterations, f.converged,
                f.seconds, f.ok ? f.eta_mean : std::nan(""), f.ok ? f.eta_sd : std::nan(""), th(0), th(1),
                f.method == "gibbs" ? f.min_ess : std::nan(""), f.error);
      if (!f.ok) {
        ++a.failures;
        continue;
      }
      a.seconds.push_back(f.seconds);
      a.iterations.push_back(f.iterations);
      a.converged.push_back(f.converged ? 1.0 : 0.0);
      for (Eigen::Index i = 0; i < f.x_mean.size(); ++i) {
        scatter.row(c.index, static_cast<long long>(c.n), c.eta, c.replicate, f.method, "x", static_cast<long long>(i),
                    f.x_mean[i], f.x_sd[i], oracle ? oracle->x_mean[i] : std::nan(""),
                    oracle ? oracle->x_sd[i] : std::nan(""), c.x_true[i]);
      }
      for (Eigen::Index i = 0; i < f.v_mean.size(); ++i) {
        scatter.row(c.index, static_cast<long long>(c.n), c.eta, c.replicate, f.method, "v", static_cast<long long>(i),
                    f.v_mean[i], std::nan(""), oracle ? oracle->v_mean[i] : std::nan(""), std::nan(""), c.v_true[i]);
        diag.row(c.index, f.method, static_cast<long long>(i), f.v_mean[i], oracle ? oracle->v_mean[i] : std::nan(""),
                 c.v_true[i]);
      }
      scatter.row(c.index, static_cast<long long>(c.n), c.eta, c.replicate, f.method, "eta", 0LL, f.eta_mean, f.eta_sd,
                  oracle ? oracle->eta_mean : std::nan(""), oracle ? oracle->eta_sd : std::nan(""), c.eta);
      for (const auto& it : f.trace) {
        trace.row(c.index, f.method, it.iteration, it.eta_mean.empty() ? std::nan("") : it.eta_mean[0],
                  it.max_relative_change, it.elbo, it.seconds);
      }
      if (oracle != nullptr && f.method != "gibbs") {
        for (Eigen::Index i = 0; i < f.x_mean.size(); ++i) {
          a.oracle_x.push_back(oracle->x_mean[i]);
          a.method_x.push_back(f.x_mean[i]);
          a.within += std::abs(f.x_mean[i] - oracle->x_mean[i]) < 0.1 * oracle->x_sd[i] ? 1 : 0;
          ++a.nodes;
        }
        for (Eigen::Index i = 0; i < f.v_mean.size(); ++i) {
          if (oracle->v_mean[i] > 1.0) {
            a.oracle_v_big.push_back(oracle->v_mean[i]);
            a.method_v_big.push_back(f.v_mean[i]);
          }
        }
        ++a.eta_sd_pairs;
        a.eta_sd_under += f.eta_sd < oracle->eta_sd ? 1 : 0;
      }
    }
  }
  Csv timing({"n", "eta", "method", "fits", "failures", "mean_seconds", "median_seconds", "mean_iterations",
              "converged_fraction"});
  json groups = json::array();
  for (const auto& [key, a] : agg) {
    const auto& [n, eta, method] = key;
    auto mean = [](const std::vector<double>& v) {
      double s = 0.0;
      for (double x : v) s += x;
      return v.empty() ? std::nan("") : s / static_cast<double>(v.size());
    };
    auto median = [](std::vector<double> v) {
      if (v.empty()) return std::nan("");
      std::sort(v.begin(), v.end());
      return v[v.size() / 2];
    };
    timing.row(static_cast<long long>(n), eta, method, a.seconds.size(), a.failures, mean(a.seconds),
               median(a.seconds), mean(a.iterations), mean(a.converged));
    json g{{"n", n},
           {"eta", eta},
           {"method", method},
           {"fits", a.seconds.size()},
           {"failures", a.failures},
           {"mean_seconds", json_number(mean(a.seconds))},
           {"mean_iterations", json_number(mean(a.iterations))},
           {"converged_fraction", json_number(mean(a.converged))}};
    if (a.nodes > 0) {
      g["x_within_0.1_sd_fraction"] = static_cast<double>(a.within) / static_cast<double>(a.nodes);
      g["x_mean_slope_vs_gibbs"] = json_number(ls_slope(a.oracle_x, a.method_x));
      g["v_mean_slope_vs_gibbs_oracle_above_1"] = json_number(ls_slope(a.oracle_v_big, a.method_v_big));
      g["eta_sd_below_gibbs_fraction"] = static_cast<double>(a.eta_sd_under) / static_cast<double>(a.eta_sd_pairs);
    }
    groups.push_back(g);
  }
  cells.write(dir / "cells.csv");
  scatter.write(dir / "scatter.csv");
  timing.write(dir / "timing.csv");
  trace.write(dir / "trace.csv");
  diag.write(dir / "diagnostics.csv");
  json summary{{"subcommand", "bench"}, {"cells", result.cells.size()}, {"seconds", result.seconds}, {"groups", groups}};
  return summary.dump(2) + "\n";
}

int execute(RunConfig config, std::ostream& report) {
  try {
    config.resolve();
    config.validate();
    fs::create_directories(config.out_dir);
    switch (config.subcommand) {
      case Subcommand::kFit:
        if (config.method == "gibbs") {
          return run_gibbs_subcommand(config, report);
        }
        return run_vb_subcommand(config, report, false);
      case Subcommand::kGibbs:
        return run_gibbs_subcommand(config, report);
      case Subcommand::kDiagnose:
        return run_vb_subcommand(config, report, true);
      case Subcommand::kSimulate:
        return run_simulate_subcommand(config, report);
      case Subcommand::kBench:
        return run_bench_subcommand(config, report);
    }
  } catch (const ValidationError& e) {
    report << "validation error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const ModelError& e) {
    report << "model error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const NumericalFailure& e) {
    report << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const DomainError& e) {
    report << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const fs::filesystem_error& e) {
    report << "validation error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    report << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  }
  return kExitSuccess;
}

}  // namespace lnvb
