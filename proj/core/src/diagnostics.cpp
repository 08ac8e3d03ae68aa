#include "lnvb/diagnostics.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>

#include "lnvb/error.hpp"
#include "lnvb/gig.hpp"
#include "lnvb/parallel.hpp"
#include "lnvb/special_functions.hpp"

namespace lnvb {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

template <typename DrawFn>
Eigen::MatrixXd blocked_draws(std::size_t count, Eigen::Index dim, Rng& rng, const SamplingOptions& options,
                              DrawFn&& make_block_drawer) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(count), dim);
  const std::size_t block = std::max<std::size_t>(1, options.block);
  const std::size_t blocks = (count + block - 1) / block;
  const std::uint64_t base = rng();
  parallel_for(blocks, resolve_workers(options.workers), [&](std::size_t b) {
    Rng stream = derive_stream(base, b);
    auto draw = make_block_drawer();
    const std::size_t end = std::min(count, (b + 1) * block);
    for (std::size_t i = b * block; i < end; ++i) {
      out.row(static_cast<Eigen::Index>(i)) = draw(stream).transpose();
    }
  });
  return out;
}

// Type-7 sample quantile of sorted values.
double sorted_quantile(const std::vector<double>& sorted, double prob) {
  const double pos = prob * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

void hash_bytes(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
}

void hash_double(std::uint64_t& h, double v) {
  const std::uint64_t bits = std::isnan(v) ? 0x7ff8000000000000ULL : std::bit_cast<std::uint64_t>(v == 0.0 ? 0.0 : v);
  hash_bytes(h, &bits, sizeof bits);
}

}  // namespace

Eigen::MatrixXd improved_tail_sample(const VbResult& result, std::size_t count, Rng& rng,
                                     const SamplingOptions& options) {
  const LgmPosterior& post = result.posterior;
  const LgmProblem& source = post.problem();
  LgmOptions light = source.options();
  light.second_moments = false;
  light.keep_factors = false;
  const auto problem = LgmProblem::create(source.model(), source.observations(), light);
  const std::size_t nc = result.state.size();
  return blocked_draws(count, problem->latent_size(), rng, options, [&] {
    return [&, ws = problem->make_workspace()](Rng& r) mutable {
      std::vector<Eigen::VectorXd> w(nc);
      for (std::size_t c = 0; c < nc; ++c) {
        w[c] = result.sample_v(c, r).cwiseInverse();
      }
      const std::size_t k = post.sample_point(r);
      const LgmPosterior cond = problem->fit_on_grid(w, {post.points()[k].theta}, 0.0, &ws);
      return problem->draw(cond.points().front().mean, ws.chol, r);
    };
  });
}

Eigen::MatrixXd posterior_sample(const LgmPosterior& posterior, std::size_t count, Rng& rng,
                                 const SamplingOptions& options) {
  const LgmProblem& problem = posterior.problem();
  return blocked_draws(count, problem.latent_size(), rng, options, [&] {
    return [&, ws = problem.make_workspace()](Rng& r) mutable {
      const std::size_t k = posterior.sample_point(r);
      return posterior.sample_at(k, r, &ws);
    };
  });
}

double excess_kurtosis(std::span<const double> values) {
  const auto n = static_cast<double>(values.size());
  if (values.size() < 4) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  double mean = 0.0;
  for (double v : values) {
    mean += v;
  }
  mean /= n;
  double m2 = 0.0;
  double m4 = 0.0;
  for (double v : values) {
    const double e = (v - mean) * (v - mean);
    m2 += e;
    m4 += e * e;
  }
  m2 /= n;
  m4 /= n;
  return m2 > 0.0 ? m4 / (m2 * m2) - 3.0 : std::numeric_limits<double>::quiet_NaN();
}

double mean_increment_excess_kurtosis(const Eigen::MatrixXd& draws, const SparseMatrix& d, Eigen::Index offset) {
  const Eigen::MatrixXd inc = draws.middleCols(offset, d.cols()) * SparseMatrix(d.transpose());
  double total = 0.0;
  Eigen::Index used = 0;
  for (Eigen::Index j = 0; j < inc.cols(); ++j) {
    const Eigen::VectorXd col = inc.col(j);
    const double k = excess_kurtosis({col.data(), static_cast<std::size_t>(col.size())});
    if (std::isfinite(k)) {
      total += k;
      ++used;
    }
  }
  return used > 0 ? total / static_cast<double>(used) : std::numeric_limits<double>::quiet_NaN();
}

std::vector<VDiagnosticRow> VDiagnostics::flagged() const {
  std::vector<VDiagnosticRow> out;
  std::copy_if(rows.begin(), rows.end(), std::back_inserter(out), [](const auto& r) { return r.flagged; });
  return out;
}

VDiagnostics v_diagnostics(const VbResult& result, const VDiagnosticsOptions& options) {
  VDiagnostics out;
  out.probabilities = options.probabilities;
  const bool exact = result.config.method == VbMethod::kSvi;
  out.quantile_method = exact ? "exact" : "monte-carlo";
  const ModelSpec& model = result.posterior.problem().model();
  for (std::size_t c = 0; c < result.state.size(); ++c) {
    const VbComponentState& s = result.state[c];
    if (s.gaussian) {
      continue;
    }
    const Eigen::Index m = s.h.size();
    std::vector<std::vector<double>> mc;
    if (!exact) {
      Rng rng = derive_stream(options.seed, c);
      const auto draws = static_cast<std::size_t>(std::max(options.mc_draws, 2));
      mc.assign(static_cast<std::size_t>(m), std::vector<double>(draws));
      for (std::size_t j = 0; j < draws; ++j) {
        const double eta = s.eta_sampler->sample(rng);
        for (Eigen::Index i = 0; i < m; ++i) {
          mc[static_cast<std::size_t>(i)][j] =
              gig_sample(v_conditional(model.components[c].noise, eta, s.h[i], s.d[i]), rng);
        }
      }
      for (auto& col : mc) {
        std::sort(col.begin(), col.end());
      }
    }
    for (Eigen::Index i = 0; i < m; ++i) {
      VDiagnosticRow row;
      row.component = c;
      row.index = i;
      row.h = s.h[i];
      row.mean = s.v_plus[i];
      if (exact) {
        row.quantiles = gig_quantiles(s.q_v[static_cast<std::size_t>(i)], options.probabilities);
      } else {
        for (double p : options.probabilities) {
          row.quantiles.push_back(sorted_quantile(mc[static_cast<std::size_t>(i)], p));
        }
      }
      row.flagged = row.mean > options.flag_multiple * row.h;
      out.rows.push_back(std::move(row));
    }
  }
  return out;
}

std::uint64_t data_signature(const Observations& obs) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto rows = static_cast<std::uint64_t>(obs.y.size());
  const auto cols = static_cast<std::uint64_t>(obs.covariates.cols());
  hash_bytes(h, &rows, sizeof rows);
  hash_bytes(h, &cols, sizeof cols);
  for (Eigen::Index r = 0; r < obs.y.size(); ++r) {
    hash_double(h, obs.y[r]);
  }
  for (Eigen::Index j = 0; j < obs.covariates.cols(); ++j) {
    for (Eigen::Index r = 0; r < obs.covariates.rows(); ++r) {
      hash_double(h, obs.covariates(r, j));
    }
  }
  return h;
}

EvidenceEstimate evidence_of(const VbResult& result) {
  EvidenceEstimate e;
  e.kind = std::isfinite(result.elbo) ? "elbo" : "laplace";
  e.log_evidence = result.log_evidence();
  e.data_signature = data_signature(result.posterior.problem().observations());
  return e;
}

EvidenceEstimate evidence_of(const LgmPosterior& posterior) {
  EvidenceEstimate e;
  e.kind = "laplace";
  e.log_evidence = posterior.log_evidence();
  e.data_signature = data_signature(posterior.problem().observations());
  return e;
}

EvidenceRatio evidence_ratio(const EvidenceEstimate& a, const EvidenceEstimate& b) {
  if (a.data_signature != b.data_signature) {
    throw ValidationError("evidence ratio requested for fits to different data");
  }
  EvidenceRatio r;
  r.log_ratio = a.log_evidence - b.log_evidence;
  r.ratio = std::exp(r.log_ratio);
  r.kind_a = a.kind;
  r.kind_b = b.kind;
  return r;
}

PredictiveScores gaussian_predictive_scores(const LgmPosterior& posterior) {
  const LgmProblem& problem = posterior.problem();
  if (problem.model().likelihood != LikelihoodKind::kGaussian) {
    throw ModelError("predictive scores are available for the Gaussian likelihood only");
  }
  const auto& pts = posterior.points();
  const Eigen::VectorXd& y = problem.observed_y();
  const Eigen::Index n = y.size();
  const std::size_t np = pts.size();
  // Per row and grid point: log LOO density, E and E[.^2] of the log likelihood, log predictive density.
  Eigen::MatrixXd loo_k(n, static_cast<Eigen::Index>(np));
  Eigen::MatrixXd pred_k(n, static_cast<Eigen::Index>(np));
  Eigen::VectorXd mean_l = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd second_l = Eigen::VectorXd::Zero(n);
  for (std::size_t k = 0; k < np; ++k) {
    const GridPoint& p = pts[k];
    if (p.predictor_variance.size() != n) {
      throw ValidationError("predictive scores need a fit with second moments");
    }
    const double tau = problem.observation_precision(p.theta);
    const Eigen::VectorXd m = problem.observation_matrix() * p.mean;
    const auto kk = static_cast<Eigen::Index>(k);
    for (Eigen::Index r = 0; r < n; ++r) {
      const double s2 = std::max(p.predictor_variance[r], std::numeric_limits<double>::min());
      const double e = y[r] - m[r];
      const double prec = std::max(1.0 / s2 - tau, std::numeric_limits<double>::min());
      const double mu = (m[r] / s2 - tau * y[r]) / prec;
      const double var = 1.0 / prec + 1.0 / tau;
      loo_k(r, kk) = -0.5 * (kLog2Pi + std::log(var) + (y[r] - mu) * (y[r] - mu) / var);
      const double pv = s2 + 1.0 / tau;
      pred_k(r, kk) = -0.5 * (kLog2Pi + std::log(pv) + e * e / pv);
      const double el = 0.5 * std::log(tau) - 0.5 * kLog2Pi - 0.5 * tau * (e * e + s2);
      const double vl = 0.25 * tau * tau * (2.0 * s2 * s2 + 4.0 * e * e * s2);
      mean_l[r] += p.weight * el;
      second_l[r] += p.weight * (vl + el * el);
    }
  }
  PredictiveScores out;
  out.loo_pointwise.resize(n);
  std::vector<double> terms(np);
  for (Eigen::Index r = 0; r < n; ++r) {
    for (std::size_t k = 0; k < np; ++k) {
      terms[k] = pts[k].log_weight - loo_k(r, static_cast<Eigen::Index>(k));
    }
    out.loo_pointwise[r] = -log_sum_exp(terms);
    for (std::size_t k = 0; k < np; ++k) {
      terms[k] = pts[k].log_weight + pred_k(r, static_cast<Eigen::Index>(k));
    }
    out.lppd += log_sum_exp(terms);
    out.p_waic += std::max(0.0, second_l[r] - mean_l[r] * mean_l[r]);
  }
  out.loo = out.loo_pointwise.sum();
  out.waic = -2.0 * (out.lppd - out.p_waic);
  return out;
}

}  // namespace lnvb
