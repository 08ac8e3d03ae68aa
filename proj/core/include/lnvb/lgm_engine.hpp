#pragma once

#include <Eigen/Core>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lnvb/model_library.hpp"
#include "lnvb/rng.hpp"
#include "lnvb/sparse_cholesky.hpp"

namespace lnvb {

/// A hyperparameter on its internal (unconstrained) scale.
/// Precisions use theta = log(tau); correlations use theta = logit((1 + rho) / 2).
struct Hyperparameter {
  enum class Kind { kLogPrecision, kRho };
  std::string name;
  Kind kind = Kind::kLogPrecision;
  int component = -1;  // -1: observation precision
  double prior_a = 1.0;  // Gamma shape, or Normal mean
  double prior_b = 1.0;  // Gamma rate, or Normal sd
  double start = 0.0;

  double natural(double theta) const;
  double internal(double natural_value) const;
  /// Log prior density on the internal scale (Jacobian included).
  double log_prior(double theta) const;
};

struct GridOptions {
  int points_per_dim = 9;
  double half_width_sd = 3.0;
  /// Points with sum(z^2)/2 above this are skipped.
  double ball_limit = 6.5;
  /// Points whose weight falls below this fraction of the largest are dropped.
  double weight_prune = 1e-12;
  double fd_step = 1e-3;
  int max_mode_iterations = 50;
  double mode_tolerance = 1e-8;
  /// Smallest admissible curvature of -log posterior per direction.
  double min_curvature = 1e-4;
};

struct LgmOptions {
  GridOptions grid;
  /// Diagonal jitter for rank-deficient blocks, relative to their largest diagonal entry.
  double jitter_relative = 1e-8;
  /// Upper bound for the relative jitter after repeated factorization failures.
  double jitter_max = 1e-2;
  int newton_max_iterations = 100;
  double newton_tolerance = 1e-10;
  /// Compute the selected inverse (marginal variances, d messages).
  bool second_moments = true;
  /// Keep per-point factors so sampling needs no refactorization.
  bool keep_factors = false;
};

/// Gaussian approximation of x | theta, y at one hyperparameter value.
struct GridPoint {
  Eigen::VectorXd theta;    // internal scale
  Eigen::VectorXd natural;  // natural scale
  double log_laplace = 0.0; // unnormalized log posterior of theta
  double log_weight = 0.0;  // normalized
  double weight = 0.0;
  Eigen::VectorXd mean;
  double log_det_post = 0.0;
  double log_pdet_prior = 0.0;
  double jitter = 0.0;
  /// Marginal variances of x (empty without second moments).
  Eigen::VectorXd variance;
  /// Per component: (D mu)_i^2 + (D Sigma D^T)_ii, not scaled by tau.
  std::vector<Eigen::VectorXd> dx_second;
  /// Gaussian likelihood: sum over observed rows of E[(y_r - a_r x)^2].
  double residual_second = 0.0;
  /// Gaussian likelihood: Var(a_r x) per observed row.
  Eigen::VectorXd predictor_variance;
  std::shared_ptr<const SparseCholesky> factor;
};

class LgmProblem;
struct LgmWorkspace;

/// Mixture-of-Gaussians posterior of (x, theta) on a hyperparameter grid.
class LgmPosterior {
 public:
  const std::vector<GridPoint>& points() const { return points_; }
  const LgmProblem& problem() const { return *problem_; }
  std::shared_ptr<const LgmProblem> problem_ptr() const { return problem_; }
  const std::vector<Eigen::VectorXd>& weights_w() const { return w_; }

  Eigen::VectorXd mean() const;
  /// Requires second moments.
  Eigen::VectorXd variance() const;
  Eigen::VectorXd sd() const { return variance().cwiseSqrt(); }

  /// Component block of the latent mean.
  Eigen::VectorXd component_mean(std::size_t c) const;
  Eigen::VectorXd component_sd(std::size_t c) const;

  /// d_i = sum_k w_k tau_k [(D mu_k)_i^2 + (D Sigma_k D^T)_ii].
  Eigen::VectorXd dx_messages(std::size_t c) const;
  /// E[tau_c] under the grid weights.
  double expected_precision(std::size_t c) const;

  double log_evidence() const { return log_evidence_; }
  double log_delta() const { return log_delta_; }
  const Eigen::VectorXd& mode() const { return mode_; }
  const Eigen::MatrixXd& mode_covariance() const { return mode_cov_; }

  /// Posterior mean and sd of hyperparameter j on the natural scale.
  double hyper_mean(std::size_t j) const;
  double hyper_sd(std::size_t j) const;

  /// Index of a grid point drawn by weight.
  std::size_t sample_point(Rng& rng) const;
  /// One draw of x from the mixture; optionally reports the grid point.
  Eigen::VectorXd sample(Rng& rng, std::size_t* point = nullptr) const;
  /// Draw of x from the Gaussian at grid point k; ws is used for refactorization when given.
  Eigen::VectorXd sample_at(std::size_t k, Rng& rng, LgmWorkspace* ws = nullptr) const;

  /// Linear predictor means for every data row (missing responses included).
  Eigen::VectorXd predictor_mean() const;

 private:
  friend class LgmProblem;
  std::shared_ptr<const LgmProblem> problem_;
  std::vector<Eigen::VectorXd> w_;
  std::vector<GridPoint> points_;
  Eigen::VectorXd mode_;
  Eigen::MatrixXd mode_cov_;
  double log_delta_ = 0.0;
  double log_evidence_ = 0.0;
};

/// Scratch state for repeated evaluations; one per thread.
struct LgmWorkspace {
  SparseCholesky chol;
  SparseMatrix q;
  Eigen::VectorXd x_warm;
  double jitter = 0.0;
};

/// Laplace evaluation at one theta.
struct LaplaceResult {
  double log_laplace = 0.0;
  double log_pdet_prior = 0.0;
  double log_det_post = 0.0;
  double loglik = 0.0;
  Eigen::VectorXd mode;
  double jitter = 0.0;
};

/// A model and data set prepared for repeated fits: fixed precision pattern,
/// observation matrix, hyperparameter list and symbolic factorization.
class LgmProblem : public std::enable_shared_from_this<LgmProblem> {
 public:
  static std::shared_ptr<LgmProblem> create(ModelSpec model, Observations obs, LgmOptions options = {});

  const ModelSpec& model() const { return model_; }
  const Observations& observations() const { return obs_; }
  const LgmOptions& options() const { return options_; }
  void set_options(const LgmOptions& options) { options_ = options; }

  const std::vector<Hyperparameter>& hyperparameters() const { return hypers_; }
  std::size_t hyper_count() const { return hypers_.size(); }
  Eigen::Index latent_size() const { return n_latent_; }
  Eigen::Index fixed_effect_count() const { return n_fixed_; }
  Eigen::Index component_offset(std::size_t c) const { return offsets_[c]; }
  Eigen::Index component_size(std::size_t c) const { return model_.components[c].cols(); }
  /// Observation matrix restricted to observed rows.
  const SparseMatrix& observation_matrix() const { return a_obs_; }
  /// Observation matrix over every data row.
  const SparseMatrix& full_observation_matrix() const { return a_all_; }
  const Eigen::VectorXd& observed_y() const { return y_obs_; }
  /// Replaces the responses of the observed rows (same missingness pattern).
  void set_observed_response(const Eigen::VectorXd& y_observed);

  /// Default weights W_c = 1 / h_c (the standardized Gaussian model).
  std::vector<Eigen::VectorXd> default_weights() const;

  /// tau_c, rho_c and observation precision at theta (fixed values filled in).
  double component_precision(std::size_t c, const Eigen::VectorXd& theta) const;
  double component_rho(std::size_t c, const Eigen::VectorXd& theta) const;
  double observation_precision(const Eigen::VectorXd& theta) const;
  double log_prior(const Eigen::VectorXd& theta) const;
  Eigen::VectorXd natural(const Eigen::VectorXd& theta) const;
  Eigen::VectorXd default_start() const;

  LgmWorkspace make_workspace() const;

  /// Laplace approximation at theta with precision weights w.
  LaplaceResult laplace(const Eigen::VectorXd& theta, const std::vector<Eigen::VectorXd>& w, LgmWorkspace& ws) const;

  /// Full fit: mode search, grid, per-point Gaussians.
  LgmPosterior fit(const std::vector<Eigen::VectorXd>& w, const std::optional<Eigen::VectorXd>& warm_start = {},
                   LgmWorkspace* ws = nullptr) const;
  /// Fit on a prescribed set of grid points (internal scale) with cell volume exp(log_delta).
  LgmPosterior fit_on_grid(const std::vector<Eigen::VectorXd>& w, const std::vector<Eigen::VectorXd>& grid,
                           double log_delta, LgmWorkspace* ws = nullptr) const;

  /// Locates the mode of the Laplace marginal; returns theta* and the Hessian there.
  std::pair<Eigen::VectorXd, Eigen::MatrixXd> find_mode(const std::vector<Eigen::VectorXd>& w,
                                                        const Eigen::VectorXd& start, LgmWorkspace& ws) const;

  /// log pdet of the prior precision of component c.
  double component_log_pdet(std::size_t c, double tau, double rho, const Eigen::VectorXd& w) const;

  /// mean + a draw from N(0, Q^{-1}) under the sum-to-zero constraints, Q factored in chol.
  Eigen::VectorXd draw(const Eigen::VectorXd& mean, const SparseCholesky& chol, Rng& rng) const;

  /// Fills point quantities (mean, moments, factor) at an evaluated theta.
  void complete_point(GridPoint& point, const std::vector<Eigen::VectorXd>& w, LgmWorkspace& ws) const;

 private:
  struct DSet {
    std::vector<SparseMatrix> owned;
    std::vector<const SparseMatrix*> ptr;
    const SparseMatrix& operator[](std::size_t c) const { return *ptr[c]; }
  };

  LgmProblem() = default;
  void prepare();
  DSet d_set(const Eigen::VectorXd& theta) const;
  void assemble(const Eigen::VectorXd& theta, const std::vector<Eigen::VectorXd>& w,
                const Eigen::VectorXd* obs_curvature, double extra_jitter, LgmWorkspace& ws, const DSet& d) const;
  bool factorize_with_jitter(const Eigen::VectorXd& theta, const std::vector<Eigen::VectorXd>& w,
                             const Eigen::VectorXd* obs_curvature, LgmWorkspace& ws, const DSet& d) const;
  double prior_quadratic(const Eigen::VectorXd& x, const Eigen::VectorXd& theta, const std::vector<Eigen::VectorXd>& w,
                         const DSet& d) const;
  double log_likelihood(const Eigen::VectorXd& eta, const Eigen::VectorXd& theta, Eigen::VectorXd* grad,
                        Eigen::VectorXd* curvature) const;
  void check_weights(const std::vector<Eigen::VectorXd>& w) const;
  LgmPosterior assemble_posterior(std::vector<GridPoint> points, const std::vector<Eigen::VectorXd>& w,
                                  const Eigen::VectorXd& mode, const Eigen::MatrixXd& mode_cov, double log_delta,
                                  LgmWorkspace& ws) const;

  struct PairTerm {
    int pos;
    int row;
    int ea;
    int eb;
  };
  struct ObsTerm {
    int pos;
    int row;
    double coef;
  };
  struct DiagTerm {
    int pos;
    int block;  // -1 fixed effects
  };

  ModelSpec model_;
  Observations obs_;
  LgmOptions options_;
  std::vector<Hyperparameter> hypers_;
  std::vector<int> precision_index_;  // per component, -1 if fixed
  std::vector<int> rho_index_;        // per component, -1 if none or fixed
  int obs_precision_index_ = -1;
  Eigen::Index n_latent_ = 0;
  Eigen::Index n_fixed_ = 0;
  std::vector<Eigen::Index> offsets_;
  Eigen::Index total_rank_ = 0;
  SparseMatrix a_obs_;
  SparseMatrix a_all_;
  Eigen::VectorXd y_obs_;
  SparseMatrix pattern_;
  std::vector<std::vector<PairTerm>> pair_terms_;  // per component
  std::vector<ObsTerm> obs_terms_;
  std::vector<DiagTerm> diag_terms_;
  std::vector<std::vector<std::pair<int, int>>> d_rows_;  // per component: flattened (col, value index) by row
  std::vector<std::vector<int>> d_row_start_;
  std::vector<double> constant_log_det_;  // per component: log det(D D^T) or 2 log|det D| for fixed D
  std::vector<int> pdet_mode_;            // 0 square, 1 full row rank, 2 general
  SparseMatrix constraints_;              // k x n_latent
  SparseCholesky analyzed_;
};

}  // namespace lnvb
