#include "lnvb/model_library.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <numeric>
#include <sstream>

#include "lnvb/error.hpp"

namespace lnvb {
namespace {

using Triplet = Eigen::Triplet<double>;

SparseMatrix from_triplets(Eigen::Index rows, Eigen::Index cols, const std::vector<Triplet>& t) {
  SparseMatrix m(rows, cols);
  m.setFromTriplets(t.begin(), t.end());
  m.makeCompressed();
  return m;
}

void check_rho(double rho, const char* who) {
  if (!(std::abs(rho) < 1.0)) {
    std::ostringstream msg;
    msg << who << ": |rho| must be < 1 (rho=" << rho << ")";
    throw DomainError(msg.str());
  }
}

LatentComponent make(ComponentType type, SparseMatrix d, Eigen::Index rank) {
  LatentComponent c;
  c.name = to_string(type);
  c.type = type;
  c.h.assign(static_cast<std::size_t>(d.rows()), 1.0);
  c.d_matrix = std::move(d);
  c.rank = rank;
  return c;
}

Eigen::Index connected_components(const std::vector<std::pair<Eigen::Index, Eigen::Index>>& edges, Eigen::Index n) {
  std::vector<Eigen::Index> parent(static_cast<std::size_t>(n));
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](Eigen::Index v) {
    while (parent[v] != v) {
      parent[v] = parent[parent[v]];
      v = parent[v];
    }
    return v;
  };
  Eigen::Index count = n;
  for (const auto& [i, j] : edges) {
    const auto ri = find(i);
    const auto rj = find(j);
    if (ri != rj) {
      parent[ri] = rj;
      --count;
    }
  }
  return count;
}

}  // namespace

std::string to_string(ComponentType type) {
  switch (type) {
    case ComponentType::kAr1: return "ar1";
    case ComponentType::kRw1: return "rw1";
    case ComponentType::kRw2: return "rw2";
    case ComponentType::kIid: return "iid";
    case ComponentType::kSar: return "sar";
    case ComponentType::kIcar: return "icar";
    case ComponentType::kArP: return "ar_p";
    case ComponentType::kCustom: return "custom";
  }
  return "unknown";
}

ComponentType parse_component_type(const std::string& name) {
  for (auto t : {ComponentType::kAr1, ComponentType::kRw1, ComponentType::kRw2, ComponentType::kIid,
                 ComponentType::kSar, ComponentType::kIcar, ComponentType::kArP, ComponentType::kCustom}) {
    if (to_string(t) == name) {
      return t;
    }
  }
  throw ValidationError("unknown component type '" + name + "'");
}

std::string to_string(LikelihoodKind kind) {
  switch (kind) {
    case LikelihoodKind::kGaussian: return "gaussian";
    case LikelihoodKind::kPoisson: return "poisson";
    case LikelihoodKind::kBernoulli: return "bernoulli";
  }
  return "unknown";
}

LikelihoodKind parse_likelihood(const std::string& name) {
  if (name == "gaussian") return LikelihoodKind::kGaussian;
  if (name == "poisson") return LikelihoodKind::kPoisson;
  if (name == "bernoulli" || name == "binomial") return LikelihoodKind::kBernoulli;
  throw ValidationError("unknown likelihood family '" + name + "'");
}

LatentComponent build_ar1(Eigen::Index n, double rho) {
  if (n < 2) {
    throw DomainError("build_ar1: need n >= 2");
  }
  check_rho(rho, "build_ar1");
  auto builder = [n](double r) {
    check_rho(r, "build_ar1");
    std::vector<Triplet> t;
    t.reserve(static_cast<std::size_t>(2 * n));
    t.emplace_back(0, 0, std::sqrt(1.0 - r * r));
    for (Eigen::Index i = 1; i < n; ++i) {
      t.emplace_back(i, i - 1, -r);  // kept even when rho = 0 so the pattern is fixed
      t.emplace_back(i, i, 1.0);
    }
    return from_triplets(n, n, t);
  };
  LatentComponent c = make(ComponentType::kAr1, builder(rho), n);
  c.d_builder = builder;
  c.rho.value = rho;
  return c;
}

LatentComponent build_rw1(Eigen::Index n) {
  if (n < 2) {
    throw DomainError("build_rw1: need n >= 2");
  }
  std::vector<Triplet> t;
  for (Eigen::Index i = 0; i + 1 < n; ++i) {
    t.emplace_back(i, i, -1.0);
    t.emplace_back(i, i + 1, 1.0);
  }
  return make(ComponentType::kRw1, from_triplets(n - 1, n, t), n - 1);
}

LatentComponent build_rw2(Eigen::Index n) {
  if (n < 3) {
    throw DomainError("build_rw2: need n >= 3");
  }
  std::vector<Triplet> t;
  for (Eigen::Index i = 0; i + 2 < n; ++i) {
    t.emplace_back(i, i, 1.0);
    t.emplace_back(i, i + 1, -2.0);
    t.emplace_back(i, i + 2, 1.0);
  }
  return make(ComponentType::kRw2, from_triplets(n - 2, n, t), n - 2);
}

LatentComponent build_iid(Eigen::Index n) {
  if (n < 1) {
    throw DomainError("build_iid: need n >= 1");
  }
  SparseMatrix d(n, n);
  d.setIdentity();
  d.makeCompressed();
  return make(ComponentType::kIid, std::move(d), n);
}

SparseMatrix adjacency_from_edges(const std::vector<std::pair<Eigen::Index, Eigen::Index>>& edges, Eigen::Index n) {
  std::vector<Triplet> t;
  for (const auto& [i, j] : edges) {
    if (i < 0 || j < 0 || i >= n || j >= n) {
      throw ModelError("edge index out of range");
    }
    if (i == j) {
      throw ModelError("self-loop in edge list");
    }
    t.emplace_back(i, j, 1.0);
    t.emplace_back(j, i, 1.0);
  }
  SparseMatrix a = from_triplets(n, n, t);
  for (Eigen::Index k = 0; k < a.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(a, k); it; ++it) {
      it.valueRef() = 1.0;  // duplicate edges collapse to a single neighbour
    }
  }
  return a;
}

LatentComponent build_sar(const SparseMatrix& adjacency, double rho) {
  const Eigen::Index n = adjacency.rows();
  if (adjacency.cols() != n) {
    throw ModelError("build_sar: adjacency must be square");
  }
  check_rho(rho, "build_sar");
  Eigen::VectorXd degree = Eigen::VectorXd::Zero(n);
  std::vector<Triplet> w;
  for (Eigen::Index k = 0; k < adjacency.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(adjacency, k); it; ++it) {
      if (it.row() == it.col() && it.value() != 0.0) {
        throw ModelError("build_sar: adjacency has a self-loop");
      }
      if (it.value() != 0.0) {
        degree[it.row()] += it.value();
        w.emplace_back(it.row(), it.col(), it.value());
      }
    }
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (degree[i] <= 0.0) {
      std::ostringstream msg;
      msg << "build_sar: node " << i << " has no neighbours; row standardization is undefined";
      throw ModelError(msg.str());
    }
  }
  for (auto& t : w) {
    t = Triplet(t.row(), t.col(), t.value() / degree[t.row()]);
  }
  auto builder = [n, w](double r) {
    check_rho(r, "build_sar");
    std::vector<Triplet> t;
    t.reserve(w.size() + static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
      t.emplace_back(i, i, 1.0);
    }
    for (const auto& e : w) {
      t.emplace_back(e.row(), e.col(), -r * e.value());
    }
    return from_triplets(n, n, t);
  };
  LatentComponent c = make(ComponentType::kSar, builder(rho), n);
  c.d_builder = builder;
  c.rho.value = rho;
  return c;
}

LatentComponent build_icar(const std::vector<std::pair<Eigen::Index, Eigen::Index>>& edges, Eigen::Index n) {
  if (edges.empty()) {
    throw ModelError("build_icar: empty edge list");
  }
  std::vector<Triplet> t;
  Eigen::Index row = 0;
  for (const auto& [i, j] : edges) {
    if (i < 0 || j < 0 || i >= n || j >= n || i == j) {
      throw ModelError("build_icar: invalid edge");
    }
    t.emplace_back(row, std::min(i, j), 1.0);
    t.emplace_back(row, std::max(i, j), -1.0);
    ++row;
  }
  const Eigen::Index rank = n - connected_components(edges, n);
  return make(ComponentType::kIcar, from_triplets(row, n, t), rank);
}

LatentComponent build_ar_p(Eigen::Index n, const std::vector<double>& phi) {
  const auto p = static_cast<Eigen::Index>(phi.size());
  if (p < 1 || n <= p) {
    throw DomainError("build_ar_p: need 1 <= p < n");
  }
  std::vector<Triplet> t;
  for (Eigen::Index i = 0; i < n; ++i) {
    t.emplace_back(i, i, 1.0);
    if (i >= p) {
      for (Eigen::Index k = 1; k <= p; ++k) {
        t.emplace_back(i, i - k, -phi[static_cast<std::size_t>(k - 1)]);
      }
    }
  }
  return make(ComponentType::kArP, from_triplets(n, n, t), n);
}

Eigen::Index numerical_rank(const SparseMatrix& m) {
  const Eigen::MatrixXd dense(m);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(dense);
  qr.setThreshold(1e-10);
  return qr.rank();
}

LatentComponent build_custom(const SparseMatrix& d_matrix, std::vector<double> h) {
  if (static_cast<Eigen::Index>(h.size()) != d_matrix.rows()) {
    std::ostringstream msg;
    msg << "build_custom: h has length " << h.size() << " but D has " << d_matrix.rows() << " rows";
    throw ModelError(msg.str());
  }
  for (double v : h) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw ModelError("build_custom: every h_i must be positive and finite");
    }
  }
  SparseMatrix d = d_matrix;
  d.makeCompressed();
  LatentComponent c = make(ComponentType::kCustom, d, 0);
  c.h = std::move(h);
  c.rank = d.cols() <= 4000 ? numerical_rank(d) : std::min(d.rows(), d.cols());
  return c;
}

std::vector<Eigen::Index> Observations::observed_rows() const {
  std::vector<Eigen::Index> rows_out;
  for (Eigen::Index r = 0; r < y.size(); ++r) {
    if (!std::isnan(y[r])) {
      rows_out.push_back(r);
    }
  }
  return rows_out;
}

Observations identity_observations(const Eigen::VectorXd& y, std::size_t components) {
  Observations obs;
  obs.y = y;
  obs.covariates.resize(y.size(), 0);
  obs.index.assign(components, std::vector<Eigen::Index>(static_cast<std::size_t>(y.size()), -1));
  for (Eigen::Index r = 0; r < y.size(); ++r) {
    obs.index[0][static_cast<std::size_t>(r)] = r;
  }
  return obs;
}

void validate(const ModelSpec& model, const Observations& obs) {
  if (model.components.empty() && obs.covariates.cols() == 0) {
    throw ModelError("model has neither latent components nor fixed effects");
  }
  if (obs.covariates.rows() != obs.rows()) {
    throw ValidationError("covariate matrix row count does not match the response");
  }
  if (static_cast<std::size_t>(obs.covariates.cols()) != model.fixed_effect_names.size() &&
      !model.fixed_effect_names.empty()) {
    throw ValidationError("number of fixed-effect names does not match covariate columns");
  }
  if (obs.index.size() != model.components.size()) {
    throw ValidationError("observation map must have one index column per component");
  }
  for (std::size_t c = 0; c < model.components.size(); ++c) {
    const LatentComponent& comp = model.components[c];
    if (comp.d_matrix.rows() == 0 || comp.d_matrix.cols() == 0) {
      throw ModelError("component '" + comp.name + "' has an empty dependency matrix");
    }
    if (static_cast<Eigen::Index>(comp.h.size()) != comp.rows()) {
      throw ModelError("component '" + comp.name + "': h length must equal rows(D)");
    }
    for (double v : comp.h) {
      if (!(v > 0.0)) {
        throw ModelError("component '" + comp.name + "': h must be positive");
      }
    }
    if (comp.noise.kind == NoiseKind::kTStudent) {
      for (double v : comp.h) {
        if (v != 1.0) {
          throw ModelError("component '" + comp.name + "': t-Student noise requires every h_i = 1");
        }
      }
    }
    if (!comp.noise.is_gaussian() && !(comp.noise.alpha_eta > 0.0)) {
      throw ModelError("component '" + comp.name + "': alpha_eta must be positive");
    }
    if (!comp.precision.fixed && !(comp.precision.shape > 0.0 && comp.precision.rate > 0.0)) {
      throw ModelError("component '" + comp.name + "': precision prior needs positive shape and rate");
    }
    if (comp.precision.fixed && !(comp.precision.value > 0.0)) {
      throw ModelError("component '" + comp.name + "': fixed precision must be positive");
    }
    if (comp.has_rho()) {
      check_rho(comp.rho.value, comp.name.c_str());
    }
    const auto& idx = obs.index[c];
    if (static_cast<Eigen::Index>(idx.size()) != obs.rows()) {
      throw ValidationError("component '" + comp.name + "': index column length does not match the response");
    }
    for (std::size_t r = 0; r < idx.size(); ++r) {
      if (idx[r] < -1 || idx[r] >= comp.cols()) {
        std::ostringstream msg;
        msg << "component '" << comp.name << "': row " << r + 1 << " index " << idx[r] + 1 << " out of range 1.."
            << comp.cols();
        throw ValidationError(msg.str());
      }
    }
    if (obs.weight.size() > c && !obs.weight[c].empty() &&
        static_cast<Eigen::Index>(obs.weight[c].size()) != obs.rows()) {
      throw ValidationError("component '" + comp.name + "': weight column length does not match the response");
    }
  }
  if (model.likelihood == LikelihoodKind::kGaussian && !model.obs_precision.fixed &&
      !(model.obs_precision.shape > 0.0 && model.obs_precision.rate > 0.0)) {
    throw ModelError("observation precision prior needs positive shape and rate");
  }
  for (Eigen::Index r = 0; r < obs.rows(); ++r) {
    const double y = obs.y[r];
    if (std::isnan(y)) {
      continue;
    }
    if (!std::isfinite(y)) {
      throw ValidationError("response contains a non-finite value");
    }
    if (model.likelihood == LikelihoodKind::kPoisson && (y < 0.0 || y != std::floor(y))) {
      throw ValidationError("Poisson responses must be nonnegative integers");
    }
    if (model.likelihood == LikelihoodKind::kBernoulli && y != 0.0 && y != 1.0) {
      throw ValidationError("Bernoulli responses must be 0 or 1");
    }
  }
  if (model.fixed_effects_precision <= 0.0) {
    throw ModelError("fixed-effects precision must be positive");
  }
}

}  // namespace lnvb
