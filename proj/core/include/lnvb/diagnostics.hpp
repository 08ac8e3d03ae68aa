#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lnvb/lgm_engine.hpp"
#include "lnvb/rng.hpp"
#include "lnvb/vb_core.hpp"

namespace lnvb {

struct SamplingOptions {
  /// Threads; 0 resolves through resolve_workers().
  int workers = 0;
  /// Draws per independent random stream.
  std::size_t block = 256;
};

/// Draws of x (one per row) that carry the uncertainty of q(V): per draw, V
/// from q(V), a grid point by weight, the conditional Gaussian refitted at
/// W = 1/V, then x from it. Reproducible for a given rng state and block size,
/// whatever the thread count.
Eigen::MatrixXd improved_tail_sample(const VbResult& result, std::size_t count, Rng& rng,
                                     const SamplingOptions& options = {});

/// Draws of x from the Gaussian mixture itself (one per row).
Eigen::MatrixXd posterior_sample(const LgmPosterior& posterior, std::size_t count, Rng& rng,
                                 const SamplingOptions& options = {});

/// Sample excess kurtosis (m4 / m2^2 - 3).
double excess_kurtosis(std::span<const double> values);

/// Mean over increments i of the excess kurtosis of (D x)_i across draws, where
/// x is the block of `draws` starting at column `offset`.
double mean_increment_excess_kurtosis(const Eigen::MatrixXd& draws, const SparseMatrix& d, Eigen::Index offset = 0);

struct VDiagnosticsOptions {
  /// Flag V_i when E[V_i] > flag_multiple * h_i.
  double flag_multiple = 3.0;
  /// Monte Carlo draws per component for SCVI quantiles.
  int mc_draws = 4000;
  std::uint64_t seed = 1;
  std::vector<double> probabilities{0.05, 0.25, 0.5, 0.75, 0.95};
};

struct VDiagnosticRow {
  std::size_t component = 0;
  Eigen::Index index = 0;
  double h = 1.0;
  double mean = 1.0;
  std::vector<double> quantiles;
  bool flagged = false;
};

struct VDiagnostics {
  std::vector<double> probabilities;
  std::vector<VDiagnosticRow> rows;
  /// "exact" (GIG quantiles) or "monte-carlo".
  std::string quantile_method;

  std::vector<VDiagnosticRow> flagged() const;
};

VDiagnostics v_diagnostics(const VbResult& result, const VDiagnosticsOptions& options = {});

/// Log-evidence estimate of one fit with the identity of its data.
struct EvidenceEstimate {
  double log_evidence = 0.0;
  /// "elbo" (lower bound) or "laplace".
  std::string kind;
  std::uint64_t data_signature = 0;
};

EvidenceEstimate evidence_of(const VbResult& result);
EvidenceEstimate evidence_of(const LgmPosterior& posterior);

/// Hash of the observed responses, missingness pattern and covariates.
std::uint64_t data_signature(const Observations& obs);

struct EvidenceRatio {
  double log_ratio = 0.0;
  double ratio = 1.0;
  std::string kind_a;
  std::string kind_b;
  /// Always "approximate": the estimates are surrogates, not exact evidences.
  std::string label = "approximate";
};

/// exp(log Z_a - log Z_b); throws ValidationError when the data differ.
EvidenceRatio evidence_ratio(const EvidenceEstimate& a, const EvidenceEstimate& b);

/// Leave-one-out and WAIC scores of a Gaussian-likelihood fit, computed in
/// closed form from the grid mixture (per observed row).
struct PredictiveScores {
  Eigen::VectorXd loo_pointwise;  // log p(y_r | y_-r)
  double loo = 0.0;               // sum of loo_pointwise
  double lppd = 0.0;
  double p_waic = 0.0;
  double waic = 0.0;  // -2 (lppd - p_waic)
};

/// Throws ModelError for a non-Gaussian likelihood and ValidationError when
/// the fit lacks second moments.
PredictiveScores gaussian_predictive_scores(const LgmPosterior& posterior);

}  // namespace lnvb
