#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCore>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "lnvb/noise_family.hpp"

namespace lnvb {

using SparseMatrix = Eigen::SparseMatrix<double>;

/// Prior on a precision tau: Gamma(shape, rate), or a fixed value.
struct PrecisionSpec {
  bool fixed = false;
  double value = 1.0;
  double shape = 1.0;
  double rate = 5e-5;
};

/// Prior on an autocorrelation rho in (-1, 1): Normal(mean, sd) on
/// logit((1 + rho) / 2), or a fixed value.
struct RhoSpec {
  bool fixed = true;
  double value = 0.0;
  double prior_mean = 0.0;
  double prior_sd = 1.0;
};

enum class ComponentType { kAr1, kRw1, kRw2, kIid, kSar, kIcar, kArP, kCustom };

std::string to_string(ComponentType type);
ComponentType parse_component_type(const std::string& name);

/// One latent block x_c with increments D x_c driven by noise with mixing
/// variables V_1..V_m, m = rows(D).
struct LatentComponent {
  std::string name;
  ComponentType type = ComponentType::kCustom;
  SparseMatrix d_matrix;  // D at rho.value
  std::vector<double> h;  // length rows(D)
  NoiseFamily noise;
  PrecisionSpec precision;
  RhoSpec rho;
  /// D as a function of rho (same sparsity pattern for every rho); empty when
  /// the component has no correlation parameter.
  std::function<SparseMatrix(double)> d_builder;
  /// rank(D); rank == rows(D) means full row rank.
  Eigen::Index rank = 0;
  /// Condition the posterior on sum(x_c) = 0 (conditioning by kriging).
  bool sum_to_zero = false;

  Eigen::Index rows() const { return d_matrix.rows(); }
  Eigen::Index cols() const { return d_matrix.cols(); }
  bool has_rho() const { return static_cast<bool>(d_builder); }
  bool full_row_rank() const { return rank == rows(); }
  SparseMatrix d_at(double rho_value) const { return has_rho() ? d_builder(rho_value) : d_matrix; }
};

LatentComponent build_ar1(Eigen::Index n, double rho);
LatentComponent build_rw1(Eigen::Index n);
LatentComponent build_rw2(Eigen::Index n);
LatentComponent build_iid(Eigen::Index n);
/// adjacency: symmetric 0/1 matrix without self-loops; W is its row-standardized version.
LatentComponent build_sar(const SparseMatrix& adjacency, double rho);
/// One row per edge (i, j): +1 at min(i, j), -1 at max(i, j). Indices are 0-based.
LatentComponent build_icar(const std::vector<std::pair<Eigen::Index, Eigen::Index>>& edges, Eigen::Index n);
/// Rows p.. are x_t - sum_k phi_k x_{t-k}; the first p rows are identity.
LatentComponent build_ar_p(Eigen::Index n, const std::vector<double>& phi);
LatentComponent build_custom(const SparseMatrix& d_matrix, std::vector<double> h);

/// Numerical rank via column-pivoting QR on the dense matrix.
Eigen::Index numerical_rank(const SparseMatrix& m);

/// Adjacency matrix from a 0-based edge list.
SparseMatrix adjacency_from_edges(const std::vector<std::pair<Eigen::Index, Eigen::Index>>& edges, Eigen::Index n);

enum class LikelihoodKind { kGaussian, kPoisson, kBernoulli };

std::string to_string(LikelihoodKind kind);
LikelihoodKind parse_likelihood(const std::string& name);

/// Observed data and the map from rows to latent nodes.
struct Observations {
  Eigen::VectorXd y;           // NaN marks a missing response
  Eigen::MatrixXd covariates;  // rows x fixed effects (may have zero columns)
  /// index[c][r]: node of component c hit by row r, or -1.
  std::vector<std::vector<Eigen::Index>> index;
  /// weight[c][r]: multiplier of that node in the linear predictor (empty = 1).
  std::vector<std::vector<double>> weight;

  Eigen::Index rows() const { return y.size(); }
  std::vector<Eigen::Index> observed_rows() const;
  double weight_of(std::size_t c, Eigen::Index r) const {
    return weight.size() > c && !weight[c].empty() ? weight[c][static_cast<std::size_t>(r)] : 1.0;
  }
};

struct ModelSpec {
  LikelihoodKind likelihood = LikelihoodKind::kGaussian;
  PrecisionSpec obs_precision;
  std::vector<std::string> fixed_effect_names;
  double fixed_effects_precision = 1e-3;
  std::vector<LatentComponent> components;
};

/// Row r observes node r of the single component (no covariates).
Observations identity_observations(const Eigen::VectorXd& y, std::size_t components = 1);

/// Dimension and family checks; throws ModelError or ValidationError.
void validate(const ModelSpec& model, const Observations& obs);

}  // namespace lnvb
