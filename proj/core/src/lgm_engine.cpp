#include "lnvb/lgm_engine.hpp"

#include <Eigen/Dense>
#include <Eigen/SparseLU>
#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "lnvb/error.hpp"
#include "lnvb/special_functions.hpp"

namespace lnvb {
namespace {

constexpr double kLog2Pi = 1.8378770664093454836;
constexpr double kInf = std::numeric_limits<double>::infinity();

using RowMajorSparse = Eigen::SparseMatrix<double, Eigen::RowMajor>;

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::string describe_theta(const LgmProblem& problem, const Eigen::VectorXd& theta) {
  std::ostringstream out;
  out << "theta_k = {";
  const auto& hypers = problem.hyperparameters();
  for (std::size_t j = 0; j < hypers.size(); ++j) {
    out << (j ? ", " : "") << hypers[j].name << "=" << hypers[j].natural(theta[static_cast<Eigen::Index>(j)]);
  }
  out << "}";
  return out.str();
}

int lower_position(const SparseMatrix& pattern, Eigen::Index row, Eigen::Index col) {
  if (row < col) {
    std::swap(row, col);
  }
  const auto* outer = pattern.outerIndexPtr();
  const auto* inner = pattern.innerIndexPtr();
  const auto* begin = inner + outer[col];
  const auto* end = inner + outer[col + 1];
  const auto* it = std::lower_bound(begin, end, static_cast<int>(row));
  if (it == end || *it != row) {
    throw NumericalFailure("precision pattern lookup failed");
  }
  return static_cast<int>(it - inner);
}

}  // namespace

// ---------------------------------------------------------------- hyperparameters

double Hyperparameter::natural(double theta) const {
  return kind == Kind::kLogPrecision ? std::exp(theta) : std::tanh(0.5 * theta);
}

double Hyperparameter::internal(double value) const {
  return kind == Kind::kLogPrecision ? std::log(value) : 2.0 * std::atanh(value);
}

double Hyperparameter::log_prior(double theta) const {
  if (kind == Kind::kLogPrecision) {
    return prior_a * std::log(prior_b) - std::lgamma(prior_a) + prior_a * theta - prior_b * std::exp(theta);
  }
  const double z = (theta - prior_a) / prior_b;
  return -0.5 * kLog2Pi - std::log(prior_b) - 0.5 * z * z;
}

// ---------------------------------------------------------------- posterior

Eigen::VectorXd LgmPosterior::mean() const {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(problem_->latent_size());
  for (const auto& p : points_) {
    out += p.weight * p.mean;
  }
  return out;
}

Eigen::VectorXd LgmPosterior::variance() const {
  const Eigen::VectorXd m = mean();
  Eigen::VectorXd second = Eigen::VectorXd::Zero(m.size());
  for (const auto& p : points_) {
    if (p.variance.size() != m.size()) {
      throw NumericalFailure("posterior variances were not computed (second moments disabled)");
    }
    second += p.weight * (p.variance + p.mean.cwiseAbs2());
  }
  return (second - m.cwiseAbs2()).cwiseMax(0.0);
}

Eigen::VectorXd LgmPosterior::component_mean(std::size_t c) const {
  return mean().segment(problem_->component_offset(c), problem_->component_size(c));
}

Eigen::VectorXd LgmPosterior::component_sd(std::size_t c) const {
  return sd().segment(problem_->component_offset(c), problem_->component_size(c));
}

Eigen::VectorXd LgmPosterior::dx_messages(std::size_t c) const {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(problem_->model().components[c].rows());
  for (const auto& p : points_) {
    if (p.dx_second.size() <= c) {
      throw NumericalFailure("d messages were not computed (second moments disabled)");
    }
    out += p.weight * problem_->component_precision(c, p.theta) * p.dx_second[c];
  }
  return out;
}

double LgmPosterior::expected_precision(std::size_t c) const {
  double out = 0.0;
  for (const auto& p : points_) {
    out += p.weight * problem_->component_precision(c, p.theta);
  }
  return out;
}

double LgmPosterior::hyper_mean(std::size_t j) const {
  double out = 0.0;
  for (const auto& p : points_) {
    out += p.weight * p.natural[static_cast<Eigen::Index>(j)];
  }
  return out;
}

double LgmPosterior::hyper_sd(std::size_t j) const {
  const double m = hyper_mean(j);
  double second = 0.0;
  for (const auto& p : points_) {
    const double v = p.natural[static_cast<Eigen::Index>(j)];
    second += p.weight * v * v;
  }
  return std::sqrt(std::max(second - m * m, 0.0));
}

std::size_t LgmPosterior::sample_point(Rng& rng) const {
  const double u = uniform_open(rng);
  double acc = 0.0;
  for (std::size_t k = 0; k < points_.size(); ++k) {
    acc += points_[k].weight;
    if (u < acc) {
      return k;
    }
  }
  return points_.size() - 1;
}

Eigen::VectorXd LgmPosterior::sample_at(std::size_t k, Rng& rng, LgmWorkspace* ws_in) const {
  const GridPoint& p = points_.at(k);
  if (p.factor) {
    return problem_->draw(p.mean, *p.factor, rng);
  }
  if (ws_in != nullptr) {
    problem_->laplace(p.theta, w_, *ws_in);
    return problem_->draw(p.mean, ws_in->chol, rng);
  }
  LgmWorkspace ws = problem_->make_workspace();
  problem_->laplace(p.theta, w_, ws);
  return problem_->draw(p.mean, ws.chol, rng);
}

Eigen::VectorXd LgmPosterior::sample(Rng& rng, std::size_t* point) const {
  const std::size_t k = sample_point(rng);
  if (point != nullptr) {
    *point = k;
  }
  return sample_at(k, rng);
}

Eigen::VectorXd LgmPosterior::predictor_mean() const { return problem_->full_observation_matrix() * mean(); }

// ---------------------------------------------------------------- problem setup

std::shared_ptr<LgmProblem> LgmProblem::create(ModelSpec model, Observations obs, LgmOptions options) {
  std::shared_ptr<LgmProblem> p(new LgmProblem());
  p->model_ = std::move(model);
  p->obs_ = std::move(obs);
  p->options_ = options;
  p->prepare();
  return p;
}

void LgmProblem::set_observed_response(const Eigen::VectorXd& y_observed) {
  if (y_observed.size() != y_obs_.size()) {
    throw ValidationError("replacement response has " + std::to_string(y_observed.size()) + " entries, expected " +
                          std::to_string(y_obs_.size()));
  }
  Eigen::Index k = 0;
  for (Eigen::Index r = 0; r < obs_.rows(); ++r) {
    if (!std::isnan(obs_.y[r])) {
      obs_.y[r] = y_observed[k++];
    }
  }
  y_obs_ = y_observed;
}

void LgmProblem::prepare() {
  if (obs_.covariates.rows() != obs_.rows()) {
    obs_.covariates.resize(obs_.rows(), 0);
  }
  validate(model_, obs_);
  const std::size_t nc = model_.components.size();

  n_fixed_ = obs_.covariates.cols();
  offsets_.resize(nc);
  n_latent_ = n_fixed_;
  for (std::size_t c = 0; c < nc; ++c) {
    offsets_[c] = n_latent_;
    n_latent_ += model_.components[c].cols();
  }

  // Hyperparameters.
  hypers_.clear();
  precision_index_.assign(nc, -1);
  rho_index_.assign(nc, -1);
  obs_precision_index_ = -1;
  if (model_.likelihood == LikelihoodKind::kGaussian && !model_.obs_precision.fixed) {
    Hyperparameter h;
    h.name = "obs.precision";
    h.kind = Hyperparameter::Kind::kLogPrecision;
    h.prior_a = model_.obs_precision.shape;
    h.prior_b = model_.obs_precision.rate;
    obs_precision_index_ = static_cast<int>(hypers_.size());
    hypers_.push_back(h);
  }
  for (std::size_t c = 0; c < nc; ++c) {
    const auto& comp = model_.components[c];
    if (!comp.precision.fixed) {
      Hyperparameter h;
      h.name = comp.name + ".precision";
      h.component = static_cast<int>(c);
      h.prior_a = comp.precision.shape;
      h.prior_b = comp.precision.rate;
      precision_index_[c] = static_cast<int>(hypers_.size());
      hypers_.push_back(h);
    }
    if (comp.has_rho() && !comp.rho.fixed) {
      Hyperparameter h;
      h.name = comp.name + ".rho";
      h.kind = Hyperparameter::Kind::kRho;
      h.component = static_cast<int>(c);
      h.prior_a = comp.rho.prior_mean;
      h.prior_b = comp.rho.prior_sd;
      h.start = h.internal(comp.rho.value);
      rho_index_[c] = static_cast<int>(hypers_.size());
      hypers_.push_back(h);
    }
  }
  if (hypers_.size() > 4) {
    std::ostringstream msg;
    msg << "model has " << hypers_.size() << " free hyperparameters; the grid engine supports at most 4";
    throw ModelError(msg.str());
  }

  total_rank_ = n_fixed_;
  for (const auto& comp : model_.components) {
    total_rank_ += comp.rank;
  }

  // Observation matrices.
  std::vector<Eigen::Triplet<double>> all_t;
  std::vector<Eigen::Triplet<double>> obs_t;
  std::vector<double> y_obs;
  Eigen::Index obs_row = 0;
  for (Eigen::Index r = 0; r < obs_.rows(); ++r) {
    const bool observed = !std::isnan(obs_.y[r]);
    auto add = [&](Eigen::Index col, double v) {
      all_t.emplace_back(r, col, v);
      if (observed) {
        obs_t.emplace_back(obs_row, col, v);
      }
    };
    for (Eigen::Index j = 0; j < n_fixed_; ++j) {
      if (obs_.covariates(r, j) != 0.0) {
        add(j, obs_.covariates(r, j));
      }
    }
    for (std::size_t c = 0; c < nc; ++c) {
      const Eigen::Index idx = obs_.index[c][static_cast<std::size_t>(r)];
      if (idx >= 0) {
        add(offsets_[c] + idx, obs_.weight_of(c, r));
      }
    }
    if (observed) {
      y_obs.push_back(obs_.y[r]);
      ++obs_row;
    }
  }
  a_all_.resize(obs_.rows(), n_latent_);
  a_all_.setFromTriplets(all_t.begin(), all_t.end());
  a_obs_.resize(obs_row, n_latent_);
  a_obs_.setFromTriplets(obs_t.begin(), obs_t.end());
  a_obs_.makeCompressed();
  y_obs_ = Eigen::Map<Eigen::VectorXd>(y_obs.data(), static_cast<Eigen::Index>(y_obs.size()));

  // Dependency matrices grouped by row, with stable value indices.
  d_rows_.assign(nc, {});
  d_row_start_.assign(nc, {});
  for (std::size_t c = 0; c < nc; ++c) {
    SparseMatrix& d = model_.components[c].d_matrix;
    d.makeCompressed();
    std::vector<std::vector<std::pair<int, int>>> by_row(static_cast<std::size_t>(d.rows()));
    for (Eigen::Index k = 0; k < d.outerSize(); ++k) {
      for (Eigen::Index e = d.outerIndexPtr()[k]; e < d.outerIndexPtr()[k + 1]; ++e) {
        by_row[static_cast<std::size_t>(d.innerIndexPtr()[e])].emplace_back(static_cast<int>(k), static_cast<int>(e));
      }
    }
    d_row_start_[c].push_back(0);
    for (auto& row : by_row) {
      d_rows_[c].insert(d_rows_[c].end(), row.begin(), row.end());
      d_row_start_[c].push_back(static_cast<int>(d_rows_[c].size()));
    }
  }

  // Precision pattern: full diagonal, D^T D blocks, A^T A.
  std::vector<Eigen::Triplet<double>> pt;
  for (Eigen::Index j = 0; j < n_latent_; ++j) {
    pt.emplace_back(j, j, 1.0);
  }
  for (std::size_t c = 0; c < nc; ++c) {
    const auto off = offsets_[c];
    for (std::size_t i = 0; i + 1 < d_row_start_[c].size(); ++i) {
      for (int p = d_row_start_[c][i]; p < d_row_start_[c][i + 1]; ++p) {
        for (int q = p; q < d_row_start_[c][i + 1]; ++q) {
          const Eigen::Index a = off + d_rows_[c][p].first;
          const Eigen::Index b = off + d_rows_[c][q].first;
          pt.emplace_back(std::max(a, b), std::min(a, b), 1.0);
        }
      }
    }
  }
  const RowMajorSparse a_rows = a_obs_;
  for (Eigen::Index r = 0; r < a_rows.rows(); ++r) {
    for (RowMajorSparse::InnerIterator p(a_rows, r); p; ++p) {
      for (RowMajorSparse::InnerIterator q(a_rows, r); q; ++q) {
        if (q.col() <= p.col()) {
          pt.emplace_back(p.col(), q.col(), 1.0);
        }
      }
    }
  }
  pattern_.resize(n_latent_, n_latent_);
  pattern_.setFromTriplets(pt.begin(), pt.end());
  pattern_.makeCompressed();

  pair_terms_.assign(nc, {});
  for (std::size_t c = 0; c < nc; ++c) {
    const auto off = offsets_[c];
    for (std::size_t i = 0; i + 1 < d_row_start_[c].size(); ++i) {
      for (int p = d_row_start_[c][i]; p < d_row_start_[c][i + 1]; ++p) {
        for (int q = p; q < d_row_start_[c][i + 1]; ++q) {
          const Eigen::Index a = off + d_rows_[c][p].first;
          const Eigen::Index b = off + d_rows_[c][q].first;
          const int pos = lower_position(pattern_, a, b);
          pair_terms_[c].push_back({pos, static_cast<int>(i), d_rows_[c][p].second, d_rows_[c][q].second});
        }
      }
    }
  }
  obs_terms_.clear();
  for (Eigen::Index r = 0; r < a_rows.rows(); ++r) {
    for (RowMajorSparse::InnerIterator p(a_rows, r); p; ++p) {
      for (RowMajorSparse::InnerIterator q(a_rows, r); q; ++q) {
        if (q.col() <= p.col()) {
          obs_terms_.push_back({lower_position(pattern_, p.col(), q.col()), static_cast<int>(r), p.value() * q.value()});
        }
      }
    }
  }
  diag_terms_.clear();
  for (Eigen::Index j = 0; j < n_latent_; ++j) {
    int block = -1;
    for (std::size_t c = 0; c < nc; ++c) {
      if (j >= offsets_[c] && j < offsets_[c] + model_.components[c].cols()) {
        block = static_cast<int>(c);
      }
    }
    diag_terms_.push_back({lower_position(pattern_, j, j), block});
  }

  // Pseudo-determinant bookkeeping.
  pdet_mode_.assign(nc, 2);
  constant_log_det_.assign(nc, 0.0);
  for (std::size_t c = 0; c < nc; ++c) {
    const auto& comp = model_.components[c];
    if (comp.rank == comp.rows() && comp.rows() == comp.cols()) {
      pdet_mode_[c] = 0;
      Eigen::SparseLU<SparseMatrix> lu(comp.d_matrix);
      if (lu.info() != Eigen::Success) {
        throw ModelError("component '" + comp.name + "': D is singular");
      }
      constant_log_det_[c] = 2.0 * lu.logAbsDeterminant();
    } else if (comp.rank == comp.rows()) {
      pdet_mode_[c] = 1;
      const SparseMatrix ddt = comp.d_matrix * comp.d_matrix.transpose();
      SparseCholesky chol;
      if (!chol.factorize(ddt)) {
        throw ModelError("component '" + comp.name + "': D D^T is not positive definite");
      }
      constant_log_det_[c] = chol.log_det();
    }
  }

  // Sum-to-zero constraints.
  std::vector<Eigen::Triplet<double>> ct;
  Eigen::Index k = 0;
  for (std::size_t c = 0; c < nc; ++c) {
    if (model_.components[c].sum_to_zero) {
      for (Eigen::Index j = 0; j < model_.components[c].cols(); ++j) {
        ct.emplace_back(k, offsets_[c] + j, 1.0);
      }
      ++k;
    }
  }
  constraints_.resize(k, n_latent_);
  constraints_.setFromTriplets(ct.begin(), ct.end());

  analyzed_.analyze(pattern_);
}

std::vector<Eigen::VectorXd> LgmProblem::default_weights() const {
  std::vector<Eigen::VectorXd> w;
  for (const auto& comp : model_.components) {
    Eigen::VectorXd v(comp.rows());
    for (Eigen::Index i = 0; i < comp.rows(); ++i) {
      v[i] = 1.0 / comp.h[static_cast<std::size_t>(i)];
    }
    w.push_back(v);
  }
  return w;
}

double LgmProblem::component_precision(std::size_t c, const Eigen::VectorXd& theta) const {
  const int j = precision_index_[c];
  return j < 0 ? model_.components[c].precision.value : std::exp(theta[j]);
}

double LgmProblem::component_rho(std::size_t c, const Eigen::VectorXd& theta) const {
  const int j = rho_index_[c];
  return j < 0 ? model_.components[c].rho.value : std::tanh(0.5 * theta[j]);
}

double LgmProblem::observation_precision(const Eigen::VectorXd& theta) const {
  if (model_.likelihood != LikelihoodKind::kGaussian) {
    return 0.0;
  }
  return obs_precision_index_ < 0 ? model_.obs_precision.value : std::exp(theta[obs_precision_index_]);
}

double LgmProblem::log_prior(const Eigen::VectorXd& theta) const {
  double out = 0.0;
  for (std::size_t j = 0; j < hypers_.size(); ++j) {
    out += hypers_[j].log_prior(theta[static_cast<Eigen::Index>(j)]);
  }
  return out;
}

Eigen::VectorXd LgmProblem::natural(const Eigen::VectorXd& theta) const {
  Eigen::VectorXd out(theta.size());
  for (Eigen::Index j = 0; j < theta.size(); ++j) {
    out[j] = hypers_[static_cast<std::size_t>(j)].natural(theta[j]);
  }
  return out;
}

Eigen::VectorXd LgmProblem::default_start() const {
  Eigen::VectorXd out(static_cast<Eigen::Index>(hypers_.size()));
  for (std::size_t j = 0; j < hypers_.size(); ++j) {
    out[static_cast<Eigen::Index>(j)] = hypers_[j].start;
  }
  return out;
}

LgmWorkspace LgmProblem::make_workspace() const {
  LgmWorkspace ws;
  ws.chol = analyzed_;
  ws.q = pattern_;
  return ws;
}

void LgmProblem::check_weights(const std::vector<Eigen::VectorXd>& w) const {
  if (w.size() != model_.components.size()) {
    throw ValidationError("one precision-weight vector per component is required");
  }
  for (std::size_t c = 0; c < w.size(); ++c) {
    if (w[c].size() != model_.components[c].rows()) {
      throw ValidationError("precision-weight vector length must equal rows(D) of component '" +
                            model_.components[c].name + "'");
    }
    if (!(w[c].minCoeff() > 0.0) || !w[c].allFinite()) {
      throw NumericalFailure("precision weights of component '" + model_.components[c].name +
                             "' must be positive and finite");
    }
  }
}

// ---------------------------------------------------------------- assembly

LgmProblem::DSet LgmProblem::d_set(const Eigen::VectorXd& theta) const {
  DSet d;
  const std::size_t nc = model_.components.size();
  d.owned.resize(nc);
  d.ptr.resize(nc);
  for (std::size_t c = 0; c < nc; ++c) {
    const auto& comp = model_.components[c];
    if (rho_index_[c] >= 0) {
      d.owned[c] = comp.d_at(component_rho(c, theta));
      d.owned[c].makeCompressed();
      if (d.owned[c].nonZeros() != comp.d_matrix.nonZeros()) {
        throw NumericalFailure("component '" + comp.name + "': D(rho) changed its sparsity pattern");
      }
      d.ptr[c] = &d.owned[c];
    } else {
      d.ptr[c] = &comp.d_matrix;
    }
  }
  return d;
}

void LgmProblem::assemble(const Eigen::VectorXd& theta, const std::vector<Eigen::VectorXd>& w,
                          const Eigen::VectorXd* obs_curvature, double extra_jitter, LgmWorkspace& ws,
                          const DSet& d) const {
  double* v = ws.q.valuePtr();
  std::fill(v, v + ws.q.nonZeros(), 0.0);
  const std::size_t nc = model_.components.size();
  for (std::size_t c = 0; c < nc; ++c) {
    const double tau = component_precision(c, theta);
    const double* dv = d[c].valuePtr();
    const double* wc = w[c].data();
    for (const auto& t : pair_terms_[c]) {
      v[t.pos] += tau * wc[t.row] * dv[t.ea] * dv[t.eb];
    }
  }
  const double tau_y = observation_precision(theta);
  for (const auto& t : obs_terms_) {
    const double cr = obs_curvature != nullptr ? (*obs_curvature)[t.row] : tau_y;
    v[t.pos] += cr * t.coef;
  }
  double max_diag = 0.0;
  std::vector<double> block_max(nc, 0.0);
  for (const auto& t : diag_terms_) {
    if (t.block < 0) {
      v[t.pos] += model_.fixed_effects_precision;
    } else {
      block_max[static_cast<std::size_t>(t.block)] = std::max(block_max[static_cast<std::size_t>(t.block)], v[t.pos]);
    }
    max_diag = std::max(max_diag, v[t.pos]);
  }
  ws.jitter = extra_jitter * max_diag;
  for (const auto& t : diag_terms_) {
    double add = ws.jitter;
    if (t.block >= 0) {
      const auto& comp = model_.components[static_cast<std::size_t>(t.block)];
      if (comp.rank < comp.cols()) {
        add += options_.jitter_relative * block_max[static_cast<std::size_t>(t.block)];
      }
    }
    v[t.pos] += add;
  }
}

bool LgmProblem::factorize_with_jitter(const Eigen::VectorXd& theta, const std::vector<Eigen::VectorXd>& w,
                                       const Eigen::VectorXd* obs_curvature, LgmWorkspace& ws,
                                       const DSet& d) const {
  assemble(theta, w, obs_curvature, 0.0, ws, d);
  if (ws.chol.factorize(ws.q)) {
    return true;
  }
  for (double rel = std::max(options_.jitter_relative, 1e-8); rel <= options_.jitter_max; rel *= 2.0) {
    assemble(theta, w, obs_curvature, rel, ws, d);
    if (ws.chol.factorize(ws.q)) {
      return true;
    }
  }
  throw FactorizationError("posterior precision is not positive definite after jitter at " +
                           describe_theta(*this, theta));
}

double LgmProblem::prior_quadratic(const Eigen::VectorXd& x, const Eigen::VectorXd& theta,
                                   const std::vector<Eigen::VectorXd>& w, const DSet& d) const {
  double out = model_.fixed_effects_precision * x.head(n_fixed_).squaredNorm();
  for (std::size_t c = 0; c < model_.components.size(); ++c) {
    const Eigen::VectorXd dx = d[c] * x.segment(offsets_[c], model_.components[c].cols());
    out += component_precision(c, theta) * (w[c].array() * dx.array().square()).sum();
  }
  return out;
}

double LgmProblem::log_likelihood(const Eigen::VectorXd& eta, const Eigen::VectorXd& theta, Eigen::VectorXd* grad,
                                  Eigen::VectorXd* curvature) const {
  const Eigen::Index n = eta.size();
  if (grad != nullptr) {
    grad->resize(n);
  }
  if (curvature != nullptr) {
    curvature->resize(n);
  }
  double out = 0.0;
  switch (model_.likelihood) {
    case LikelihoodKind::kGaussian: {
      const double tau = observation_precision(theta);
      for (Eigen::Index r = 0; r < n; ++r) {
        const double res = y_obs_[r] - eta[r];
        out += 0.5 * std::log(tau) - 0.5 * kLog2Pi - 0.5 * tau * res * res;
        if (grad != nullptr) (*grad)[r] = tau * res;
        if (curvature != nullptr) (*curvature)[r] = tau;
      }
      break;
    }
    case LikelihoodKind::kPoisson:
      for (Eigen::Index r = 0; r < n; ++r) {
        const double mu = std::exp(eta[r]);
        out += y_obs_[r] * eta[r] - mu - std::lgamma(y_obs_[r] + 1.0);
        if (grad != nullptr) (*grad)[r] = y_obs_[r] - mu;
        if (curvature != nullptr) (*curvature)[r] = mu;
      }
      break;
    case LikelihoodKind::kBernoulli:
      for (Eigen::Index r = 0; r < n; ++r) {
        const double s = sigmoid(eta[r]);
        out += y_obs_[r] * eta[r] - softplus(eta[r]);
        if (grad != nullptr) (*grad)[r] = y_obs_[r] - s;
        if (curvature != nullptr) (*curvature)[r] = std::max(s * (1.0 - s), 1e-300);
      }
      break;
  }
  return out;
}

double LgmProblem::component_log_pdet(std::size_t c, double tau, double rho, const Eigen::VectorXd& w) const {
  const auto& comp = model_.components[c];
  const double rank_term = static_cast<double>(comp.rank) * std::log(tau);
  switch (pdet_mode_[c]) {
    case 0: {
      double log_det = constant_log_det_[c];
      if (rho_index_[c] >= 0) {
        Eigen::SparseLU<SparseMatrix> lu(comp.d_at(rho));
        log_det = 2.0 * lu.logAbsDeterminant();
      }
      return rank_term + w.array().log().sum() + log_det;
    }
    case 1: {
      double log_det = constant_log_det_[c];
      if (rho_index_[c] >= 0) {
        const SparseMatrix d = comp.d_at(rho);
        SparseCholesky chol;
        chol.factorize(SparseMatrix(d * d.transpose()));
        log_det = chol.log_det();
      }
      return rank_term + w.array().log().sum() + log_det;
    }
    default: {
      const Eigen::MatrixXd d(comp.d_at(rho));
      const Eigen::MatrixXd m = d.transpose() * w.asDiagonal() * d;
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
      const Eigen::VectorXd ev = es.eigenvalues();
      double s = 0.0;
      for (Eigen::Index i = ev.size() - comp.rank; i < ev.size(); ++i) {
        s += std::log(ev[i]);
      }
      return rank_term + s;
    }
  }
}

// ---------------------------------------------------------------- Laplace

LaplaceResult LgmProblem::laplace(const Eigen::VectorXd& theta, const std::vector<Eigen::VectorXd>& w,
                                  LgmWorkspace& ws) const {
  if (!theta.allFinite()) {
    throw NumericalFailure("non-finite hyperparameter value");
  }
  LaplaceResult out;
  const DSet d = d_set(theta);
  Eigen::VectorXd x;
  if (model_.likelihood == LikelihoodKind::kGaussian) {
    factorize_with_jitter(theta, w, nullptr, ws, d);
    x = ws.chol.solve(a_obs_.transpose() * (observation_precision(theta) * y_obs_));
  } else {
    x = ws.x_warm.size() == n_latent_ ? ws.x_warm : Eigen::VectorXd::Zero(n_latent_);
    Eigen::VectorXd grad;
    Eigen::VectorXd curv;
    auto objective = [&](const Eigen::VectorXd& z) {
      return log_likelihood(a_obs_ * z, theta, nullptr, nullptr) - 0.5 * prior_quadratic(z, theta, w, d);
    };
    double phi = objective(x);
    bool converged = false;
    for (int it = 0; it < options_.newton_max_iterations; ++it) {
      const Eigen::VectorXd eta = a_obs_ * x;
      log_likelihood(eta, theta, &grad, &curv);
      factorize_with_jitter(theta, w, &curv, ws, d);
      const Eigen::VectorXd target = ws.chol.solve(a_obs_.transpose() * (grad + curv.cwiseProduct(eta)));
      Eigen::VectorXd step = target - x;
      double phi_new = objective(x + step);
      for (int halving = 0; halving < 40 && !(phi_new >= phi - 1e-12 * std::abs(phi)); ++halving) {
        step *= 0.5;
        phi_new = objective(x + step);
      }
      x += step;
      phi = phi_new;
      if (step.cwiseAbs().maxCoeff() <= options_.newton_tolerance * (1.0 + x.cwiseAbs().maxCoeff())) {
        converged = true;
        break;
      }
    }
    if (!converged) {
      throw NumericalFailure("Newton iteration for the latent mode did not converge within " +
                             std::to_string(options_.newton_max_iterations) + " iterations at " +
                             describe_theta(*this, theta));
    }
    log_likelihood(a_obs_ * x, theta, &grad, &curv);
    factorize_with_jitter(theta, w, &curv, ws, d);
    ws.x_warm = x;
  }
  out.jitter = ws.jitter;
  out.loglik = log_likelihood(a_obs_ * x, theta, nullptr, nullptr);
  out.log_pdet_prior = static_cast<double>(n_fixed_) * std::log(model_.fixed_effects_precision);
  for (std::size_t c = 0; c < model_.components.size(); ++c) {
    out.log_pdet_prior += component_log_pdet(c, component_precision(c, theta), component_rho(c, theta), w[c]);
  }
  out.log_det_post = ws.chol.log_det();
  const double quad = prior_quadratic(x, theta, w, d);
  out.log_laplace = log_prior(theta) - 0.5 * static_cast<double>(total_rank_) * kLog2Pi + 0.5 * out.log_pdet_prior -
                    0.5 * quad + out.loglik + 0.5 * static_cast<double>(n_latent_) * kLog2Pi - 0.5 * out.log_det_post;
  out.mode = std::move(x);
  return out;
}

// ---------------------------------------------------------------- constraints

namespace {

struct Kriging {
  Eigen::MatrixXd u;      // Q^{-1} A_c^T
  Eigen::MatrixXd s_inv;  // (A_c Q^{-1} A_c^T)^{-1}
};

Kriging kriging(const SparseMatrix& constraints, const SparseCholesky& chol) {
  Kriging k;
  const Eigen::MatrixXd at = Eigen::MatrixXd(constraints.transpose());
  k.u.resize(at.rows(), at.cols());
  for (Eigen::Index j = 0; j < at.cols(); ++j) {
    k.u.col(j) = chol.solve(at.col(j));
  }
  const Eigen::MatrixXd s = constraints * k.u;
  k.s_inv = s.inverse();
  return k;
}

}  // namespace

Eigen::VectorXd LgmProblem::draw(const Eigen::VectorXd& mean, const SparseCholesky& chol,
                                                  Rng& rng) const {
  Eigen::VectorXd x = chol.sample_zero_mean(rng);
  if (constraints_.rows() > 0) {
    const Kriging k = kriging(constraints_, chol);
    x -= k.u * (k.s_inv * (constraints_ * x));
  }
  return mean + x;
}

void LgmProblem::complete_point(GridPoint& point, const std::vector<Eigen::VectorXd>& /*w*/, LgmWorkspace& ws) const {
  const std::size_t nc = model_.components.size();
  const DSet d = d_set(point.theta);
  std::optional<Kriging> krig;
  if (constraints_.rows() > 0) {
    krig = kriging(constraints_, ws.chol);
    point.mean -= krig->u * (krig->s_inv * (constraints_ * point.mean));
  }
  const Eigen::VectorXd& mu = point.mean;
  if (options_.second_moments) {
    const SelectedInverse sel = ws.chol.selected_inverse();
    point.variance = sel.diagonal();
    Eigen::MatrixXd us;  // U S^{-1/2} style factor for corrections
    if (krig) {
      Eigen::LLT<Eigen::MatrixXd> llt(krig->s_inv);
      us = krig->u * Eigen::MatrixXd(llt.matrixL());
      point.variance -= us.rowwise().squaredNorm();
    }
    point.dx_second.resize(nc);
    for (std::size_t c = 0; c < nc; ++c) {
      const auto off = offsets_[c];
      const Eigen::VectorXd dmu = d[c] * mu.segment(off, model_.components[c].cols());
      Eigen::VectorXd out = dmu.cwiseAbs2();
      const double* dv = d[c].valuePtr();
      for (std::size_t i = 0; i + 1 < d_row_start_[c].size(); ++i) {
        double s = 0.0;
        for (int p = d_row_start_[c][i]; p < d_row_start_[c][i + 1]; ++p) {
          for (int q = d_row_start_[c][i]; q < d_row_start_[c][i + 1]; ++q) {
            s += dv[d_rows_[c][p].second] * dv[d_rows_[c][q].second] *
                 sel(off + d_rows_[c][p].first, off + d_rows_[c][q].first);
          }
        }
        out[static_cast<Eigen::Index>(i)] += s;
      }
      if (krig) {
        const Eigen::MatrixXd dus = d[c] * us.middleRows(off, model_.components[c].cols());
        out -= dus.rowwise().squaredNorm();
      }
      point.dx_second[c] = out.cwiseMax(0.0);
    }
    if (model_.likelihood == LikelihoodKind::kGaussian) {
      const Eigen::VectorXd res = y_obs_ - a_obs_ * mu;
      const RowMajorSparse a_rows = a_obs_;
      Eigen::VectorXd pv = Eigen::VectorXd::Zero(a_rows.rows());
      for (Eigen::Index r = 0; r < a_rows.rows(); ++r) {
        for (RowMajorSparse::InnerIterator p(a_rows, r); p; ++p) {
          for (RowMajorSparse::InnerIterator q(a_rows, r); q; ++q) {
            pv[r] += p.value() * q.value() * sel(p.col(), q.col());
          }
        }
      }
      if (krig) {
        pv -= (a_obs_ * us).rowwise().squaredNorm();
      }
      point.predictor_variance = pv.cwiseMax(0.0);
      point.residual_second = res.squaredNorm() + pv.sum();
    }
  }
  if (options_.keep_factors) {
    point.factor = std::make_shared<SparseCholesky>(std::move(ws.chol));
    ws.chol = analyzed_;
  }
}

// ---------------------------------------------------------------- mode and grid

std::pair<Eigen::VectorXd, Eigen::MatrixXd> LgmProblem::find_mode(const std::vector<Eigen::VectorXd>& w,
                                                                  const Eigen::VectorXd& start,
                                                                  LgmWorkspace& ws) const {
  const auto dim = static_cast<Eigen::Index>(hypers_.size());
  const GridOptions& g = options_.grid;
  const double h = g.fd_step;
  auto f = [&](const Eigen::VectorXd& t) {
    try {
      const double v = laplace(t, w, ws).log_laplace;
      return std::isfinite(v) ? v : -kInf;
    } catch (const NumericalFailure&) {
      return -kInf;
    }
  };
  auto derivatives = [&](const Eigen::VectorXd& t, double f0, Eigen::VectorXd& grad, Eigen::MatrixXd& hess) {
    grad.resize(dim);
    hess.resize(dim, dim);
    Eigen::VectorXd fp(dim), fm(dim);
    for (Eigen::Index i = 0; i < dim; ++i) {
      Eigen::VectorXd e = Eigen::VectorXd::Zero(dim);
      e[i] = h;
      fp[i] = f(t + e);
      fm[i] = f(t - e);
      grad[i] = (fp[i] - fm[i]) / (2.0 * h);
      hess(i, i) = (fp[i] - 2.0 * f0 + fm[i]) / (h * h);
    }
    for (Eigen::Index i = 0; i < dim; ++i) {
      for (Eigen::Index j = 0; j < i; ++j) {
        Eigen::VectorXd ei = Eigen::VectorXd::Zero(dim);
        Eigen::VectorXd ej = Eigen::VectorXd::Zero(dim);
        ei[i] = h;
        ej[j] = h;
        const double v = (f(t + ei + ej) - f(t + ei - ej) - f(t - ei + ej) + f(t - ei - ej)) / (4.0 * h * h);
        hess(i, j) = hess(j, i) = v;
      }
    }
    return grad.allFinite() && hess.allFinite();
  };

  Eigen::VectorXd theta = start;
  double f0 = f(theta);
  if (!std::isfinite(f0)) {
    theta = default_start();
    f0 = f(theta);
    if (!std::isfinite(f0)) {
      // Re-raise the underlying failure with its message.
      laplace(theta, w, ws);
      throw NumericalFailure("Laplace marginal is not finite at the starting hyperparameters " +
                             describe_theta(*this, theta));
    }
  }
  Eigen::VectorXd grad;
  Eigen::MatrixXd hess;
  bool hess_current = false;
  for (int it = 0; it < g.max_mode_iterations; ++it) {
    if (!derivatives(theta, f0, grad, hess)) {
      throw NumericalFailure("finite-difference derivatives of the Laplace marginal are not finite at " +
                             describe_theta(*this, theta));
    }
    hess_current = true;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(-hess);
    const Eigen::VectorXd lambda = es.eigenvalues().cwiseMax(g.min_curvature);
    Eigen::VectorXd step = es.eigenvectors() * (es.eigenvectors().transpose() * grad).cwiseQuotient(lambda);
    const double decrement = grad.dot(step);
    if (decrement < g.mode_tolerance) {
      break;
    }
    const double max_step = 3.0;
    if (step.norm() > max_step) {
      step *= max_step / step.norm();
    }
    double scale = 1.0;
    double f_new = f(theta + step);
    while (!(f_new >= f0) && scale > 1e-6) {
      scale *= 0.5;
      f_new = f(theta + scale * step);
    }
    if (!(f_new >= f0)) {
      break;
    }
    theta += scale * step;
    f0 = f_new;
    hess_current = false;
  }
  if (!hess_current && g.max_mode_iterations > 5) {
    derivatives(theta, f0, grad, hess);
  }
  return {theta, hess};
}

LgmPosterior LgmProblem::assemble_posterior(std::vector<GridPoint> points, const std::vector<Eigen::VectorXd>& w,
                                            const Eigen::VectorXd& mode, const Eigen::MatrixXd& mode_cov,
                                            double log_delta, LgmWorkspace& /*ws*/) const {
  std::vector<double> logs;
  logs.reserve(points.size());
  for (const auto& p : points) {
    logs.push_back(p.log_laplace);
  }
  const double total = log_sum_exp(logs);
  if (!std::isfinite(total)) {
    throw NumericalFailure("all hyperparameter grid weights underflow");
  }
  for (auto& p : points) {
    p.log_weight = p.log_laplace - total;
    p.weight = std::exp(p.log_weight);
  }
  LgmPosterior post;
  post.problem_ = shared_from_this();
  post.w_ = w;
  post.points_ = std::move(points);
  post.mode_ = mode;
  post.mode_cov_ = mode_cov;
  post.log_delta_ = log_delta;
  post.log_evidence_ = total + log_delta;
  return post;
}

LgmPosterior LgmProblem::fit(const std::vector<Eigen::VectorXd>& w, const std::optional<Eigen::VectorXd>& warm_start,
                             LgmWorkspace* ws_in) const {
  check_weights(w);
  LgmWorkspace local;
  if (ws_in == nullptr) {
    local = make_workspace();
  }
  LgmWorkspace& ws = ws_in != nullptr ? *ws_in : local;
  const auto dim = static_cast<Eigen::Index>(hypers_.size());
  auto evaluate = [&](const Eigen::VectorXd& theta) {
    GridPoint p;
    const LaplaceResult lr = laplace(theta, w, ws);
    p.theta = theta;
    p.natural = natural(theta);
    p.log_laplace = lr.log_laplace;
    p.mean = lr.mode;
    p.log_det_post = lr.log_det_post;
    p.log_pdet_prior = lr.log_pdet_prior;
    p.jitter = lr.jitter;
    complete_point(p, w, ws);
    return p;
  };
  if (dim == 0) {
    std::vector<GridPoint> pts;
    pts.push_back(evaluate(Eigen::VectorXd()));
    return assemble_posterior(std::move(pts), w, Eigen::VectorXd(), Eigen::MatrixXd(), 0.0, ws);
  }
  Eigen::VectorXd start = warm_start && warm_start->size() == dim ? *warm_start : default_start();
  auto [mode, hess] = find_mode(w, start, ws);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(-hess);
  const Eigen::VectorXd lambda = es.eigenvalues().cwiseMax(options_.grid.min_curvature);
  const Eigen::MatrixXd scale = es.eigenvectors() * lambda.cwiseInverse().cwiseSqrt().asDiagonal();
  const Eigen::MatrixXd cov = scale * scale.transpose();

  const GridOptions& g = options_.grid;
  const int k = std::max(g.points_per_dim, 1);
  const double step = k > 1 ? 2.0 * g.half_width_sd / (k - 1) : 1.0;
  const double log_delta = static_cast<double>(dim) * std::log(step) - 0.5 * lambda.array().log().sum();

  std::vector<GridPoint> pts;
  std::vector<int> idx(static_cast<std::size_t>(dim), 0);
  while (true) {
    Eigen::VectorXd z(dim);
    for (Eigen::Index j = 0; j < dim; ++j) {
      z[j] = k > 1 ? -g.half_width_sd + step * idx[static_cast<std::size_t>(j)] : 0.0;
    }
    if (0.5 * z.squaredNorm() <= g.ball_limit) {
      pts.push_back(evaluate(mode + scale * z));
    }
    Eigen::Index j = 0;
    while (j < dim && ++idx[static_cast<std::size_t>(j)] == k) {
      idx[static_cast<std::size_t>(j)] = 0;
      ++j;
    }
    if (j == dim) {
      break;
    }
  }
  double best = -INFINITY;
  for (const auto& p : pts) {
    best = std::max(best, p.log_laplace);
  }
  const double cut = best + std::log(g.weight_prune);
  std::erase_if(pts, [&](const GridPoint& p) { return !(p.log_laplace >= cut); });
  return assemble_posterior(std::move(pts), w, mode, cov, log_delta, ws);
}

LgmPosterior LgmProblem::fit_on_grid(const std::vector<Eigen::VectorXd>& w, const std::vector<Eigen::VectorXd>& grid,
                                     double log_delta, LgmWorkspace* ws_in) const {
  check_weights(w);
  LgmWorkspace local;
  if (ws_in == nullptr) {
    local = make_workspace();
  }
  LgmWorkspace& ws = ws_in != nullptr ? *ws_in : local;
  std::vector<GridPoint> pts;
  for (const auto& theta : grid) {
    if (theta.size() != static_cast<Eigen::Index>(hypers_.size())) {
      throw ValidationError("grid point dimension does not match the hyperparameter count");
    }
    GridPoint p;
    const LaplaceResult lr = laplace(theta, w, ws);
    p.theta = theta;
    p.natural = natural(theta);
    p.log_laplace = lr.log_laplace;
    p.mean = lr.mode;
    p.log_det_post = lr.log_det_post;
    p.log_pdet_prior = lr.log_pdet_prior;
    p.jitter = lr.jitter;
    complete_point(p, w, ws);
    pts.push_back(std::move(p));
  }
  Eigen::VectorXd mode = pts.empty() ? Eigen::VectorXd() : pts.front().theta;
  return assemble_posterior(std::move(pts), w, mode, Eigen::MatrixXd(), log_delta, ws);
}

}  // namespace lnvb
