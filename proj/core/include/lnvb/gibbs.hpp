#pragma once

#include <Eigen/Core>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "lnvb/lgm_engine.hpp"
#include "lnvb/rng.hpp"

namespace lnvb {

struct GibbsConfig {
  int iterations = 5000;  // total sweeps, burn-in included
  int burn_in = 1000;
  std::uint64_t seed = 1;
  /// Draw (V, eta) before (theta, x) within a sweep.
  bool v_first = false;
  /// Hold V at h (Gaussian model).
  bool fix_v = false;
  /// Hold eta at fixed_eta instead of drawing it.
  bool sample_eta = true;
  double fixed_eta = 1.0;
  /// Newton steps of the hyperparameter mode search per sweep.
  int mode_iterations = 3;
  /// Keep the x draws (needed for summaries of x).
  bool keep_x = true;
  bool keep_v = true;

  void validate() const;
};

/// Mean, sd and Monte Carlo diagnostics of one scalar chain.
struct ChainSummary {
  double mean = 0.0;
  double sd = 0.0;
  double mcse = 0.0;  // batch means
  double ess = 0.0;
  double rhat = 1.0;  // split-chain
};

ChainSummary summarize_chain(std::span<const double> draws);

/// Mutable sampler state.
struct GibbsState {
  Eigen::VectorXd theta;  // internal scale
  Eigen::VectorXd x;
  std::vector<Eigen::VectorXd> v;
  std::vector<double> eta;
};

struct GibbsResult {
  GibbsConfig config;
  /// Kept draws, one row per sweep after burn-in.
  Eigen::MatrixXd x;
  std::vector<Eigen::MatrixXd> v;  // per component
  Eigen::MatrixXd eta;             // columns: components
  Eigen::MatrixXd theta;           // natural scale
  GibbsState last;
  double seconds = 0.0;

  Eigen::VectorXd x_mean() const;
  Eigen::VectorXd x_sd() const;
  Eigen::VectorXd v_mean(std::size_t c) const;
  ChainSummary eta_summary(std::size_t c) const;
  ChainSummary x_summary(Eigen::Index i) const;
  ChainSummary theta_summary(Eigen::Index j) const;
};

/// Blocked Gibbs sampler: (theta, x) | V, eta, y on the hyperparameter grid,
/// then V_i | x, theta, eta from its GIG conditional, then eta | V.
class GibbsSampler {
 public:
  GibbsSampler(const ModelSpec& model, const Observations& obs, const GibbsConfig& config,
               const LgmOptions& options = {});

  const GibbsState& state() const { return state_; }
  GibbsState& state() { return state_; }
  const LgmProblem& problem() const { return *problem_; }
  /// Replaces the observed responses (prior-reproduction checks).
  void set_observed_response(const Eigen::VectorXd& y) { problem_->set_observed_response(y); }

  void sweep(Rng& rng);
  void draw_latent(Rng& rng);
  void draw_mixing(Rng& rng);

 private:
  std::shared_ptr<LgmProblem> problem_;
  GibbsConfig config_;
  GibbsState state_;
  LgmWorkspace ws_;
  std::optional<Eigen::VectorXd> warm_;
};

GibbsResult run_gibbs(const ModelSpec& model, const Observations& obs, const GibbsConfig& config,
                      const LgmOptions& options = {});

}  // namespace lnvb
