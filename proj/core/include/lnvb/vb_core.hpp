#pragma once

#include <Eigen/Core>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lnvb/gig.hpp"
#include "lnvb/lgm_engine.hpp"
#include "lnvb/noise_family.hpp"
#include "lnvb/tabulated_sampler.hpp"

namespace lnvb {

enum class VbMethod { kSvi, kScvi };

std::string to_string(VbMethod method);
VbMethod parse_vb_method(const std::string& name);

/// q(V_i) given d_i = E[tau (D x)_i^2] and the eta moments:
/// GIG(E[p] - 1/2, E[a], d_i + E[b]) with (p, a, b) the mixing law.
GigParams svi_update_v(double d, double h, const EtaMoments& eta, const NoiseFamily& family);

/// q(eta) for NIG noise with an Exp(alpha) prior:
/// GIG(-m/2 + 1, 2 alpha, sum(E[V] - 2h + h^2 E[1/V])). A non-positive b is
/// clamped to 1e-12 and reported through clamped.
GigParams svi_update_eta(std::span<const double> v_plus, std::span<const double> v_minus, std::span<const double> h,
                         double alpha, bool* clamped = nullptr);

/// Unnormalized log density of q(eta) for families without a closed-form
/// update: log pi(eta) + sum_i E_q(V_i)[log pi(V_i | eta)].
std::function<double(double)> svi_eta_log_kernel(const NoiseFamily& family, std::vector<VMoments> v,
                                                  std::vector<double> h);

/// Collapsed q(eta) with V integrated out:
/// log pi(eta) + sum_i [log C(prior_i(eta)) - log C(post_i(eta))], C the GIG
/// normalizing constant and post_i = (p - 1/2, a, b + d_i).
std::function<double(double)> scvi_eta_log_kernel(const NoiseFamily& family, std::vector<double> d,
                                                  std::vector<double> h);

struct ScviVUpdate {
  Eigen::VectorXd v_minus;
  Eigen::VectorXd v_plus;
  Eigen::VectorXd v_log;
  double eta_sample_mean = 0.0;
};

/// Rao-Blackwellized V moments: m stratified draws of eta, exact conditional
/// GIG moments of q(V_i | eta) averaged over the draws.
ScviVUpdate scvi_update_v(const NoiseFamily& family, std::span<const double> d, std::span<const double> h,
                          const TabulatedSampler& eta, int m, Rng& rng, bool with_log = false);

/// GIG law of q(V_i | eta) (SCVI) or the Gibbs full conditional, given d.
GigParams v_conditional(const NoiseFamily& family, double eta, double h, double d);

struct VbConfig {
  VbMethod method = VbMethod::kSvi;
  /// Relative change of E[eta] (max over components) that stops the loop.
  double threshold = 0.005;
  /// Non-positive: 40 for SVI, 50 for SCVI.
  int max_iterations = 0;
  int mc_samples = 500;
  std::uint64_t seed = 1;
  /// Initial E[1/eta] used by the first SVI update of q(V).
  double eta_inv_init = 0.5;
  /// Freeze V at h (plain Gaussian model).
  bool fix_v = false;
  /// Evaluate the ELBO at every iteration, not only the last.
  bool debug_elbo = false;
  /// Keep the hyperparameter grid of the first fit for every later fit.
  bool freeze_grid = false;
  LgmOptions lgm;

  int resolved_max_iterations() const { return max_iterations > 0 ? max_iterations : (method == VbMethod::kSvi ? 40 : 50); }
  void validate() const;
};

/// Surrogate state of one latent component.
struct VbComponentState {
  bool gaussian = false;  // V fixed at h
  Eigen::VectorXd h;
  Eigen::VectorXd d;
  Eigen::VectorXd v_minus;  // E[1/V]
  Eigen::VectorXd v_plus;   // E[V]
  Eigen::VectorXd v_log;    // E[log V] (SVI)
  EtaMoments eta;
  double eta_sd = 0.0;
  /// SVI: q(V_i) laws.
  std::vector<GigParams> q_v;
  /// SVI with NIG and exponential prior: closed-form q(eta).
  std::optional<GigParams> q_eta;
  /// SCVI, or SVI for other families: tabulated q(eta).
  std::shared_ptr<const TabulatedSampler> eta_sampler;
};

struct VbIteration {
  int iteration = 0;
  std::vector<double> eta_mean;
  std::vector<Eigen::VectorXd> v_mean;
  double max_relative_change = 0.0;
  double elbo = 0.0;  // NaN unless debug_elbo
  double seconds = 0.0;
};

struct VbResult {
  VbConfig config;
  LgmPosterior posterior;
  std::vector<VbComponentState> state;
  std::vector<VbIteration> trace;
  std::vector<std::string> warnings;
  bool converged = false;
  int iterations = 0;
  /// ELBO at the last iteration (NaN when unavailable).
  double elbo = 0.0;

  /// Evidence surrogate: the ELBO when available, else the Laplace evidence of
  /// the final conditional fit.
  double log_evidence() const;
  /// Draw of V for component c from q(V) (eta first under SCVI).
  Eigen::VectorXd sample_v(std::size_t c, Rng& rng) const;
};

/// Coordinate-ascent VI on a prepared problem.
VbResult run_vb(const std::shared_ptr<LgmProblem>& problem, const VbConfig& config);
VbResult run_vb(const ModelSpec& model, const Observations& obs, const VbConfig& config);

/// ELBO of the current surrogate. Exact for SCVI and for SVI with NIG noise;
/// NaN outside Gaussian likelihood, full-row-rank D without constraints, and
/// the default exponential eta prior.
double compute_elbo(const LgmPosterior& post, const std::vector<VbComponentState>& state, const ModelSpec& model,
                    VbMethod method);

}  // namespace lnvb
