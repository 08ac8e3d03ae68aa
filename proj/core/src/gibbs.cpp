#include "lnvb/gibbs.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "lnvb/error.hpp"
#include "lnvb/gig.hpp"
#include "lnvb/tabulated_sampler.hpp"
#include "lnvb/vb_core.hpp"

namespace lnvb {

namespace {

double sample_variance(std::span<const double> v, double mean) {
  if (v.size() < 2) {
    return 0.0;
  }
  double s = 0.0;
  for (double x : v) {
    s += (x - mean) * (x - mean);
  }
  return s / static_cast<double>(v.size() - 1);
}

double plain_mean(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) {
    s += x;
  }
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

ChainSummary column_summary(const Eigen::MatrixXd& m, Eigen::Index j) {
  const Eigen::VectorXd col = m.col(j);
  return summarize_chain({col.data(), static_cast<std::size_t>(col.size())});
}

}  // namespace

void GibbsConfig::validate() const {
  if (iterations < 1 || burn_in < 0 || burn_in >= iterations) {
    throw ValidationError("Gibbs sampler needs iterations > burn-in >= 0");
  }
  if (mode_iterations < 1) {
    throw ValidationError("mode iterations per sweep must be at least 1");
  }
  if (!sample_eta && !(fixed_eta > 0.0)) {
    throw ValidationError("fixed eta must be positive");
  }
}

ChainSummary summarize_chain(std::span<const double> draws) {
  ChainSummary out;
  const std::size_t n = draws.size();
  if (n == 0) {
    return out;
  }
  out.mean = plain_mean(draws);
  const double var = sample_variance(draws, out.mean);
  out.sd = std::sqrt(var);
  if (n < 4 || var == 0.0) {
    out.mcse = 0.0;
    out.ess = static_cast<double>(n);
    return out;
  }
  const std::size_t batches = std::max<std::size_t>(2, static_cast<std::size_t>(std::sqrt(static_cast<double>(n))));
  const std::size_t size = n / batches;
  const std::size_t start = n - batches * size;
  std::vector<double> means(batches);
  for (std::size_t b = 0; b < batches; ++b) {
    means[b] = plain_mean(draws.subspan(start + b * size, size));
  }
  const double batch_var = sample_variance(means, plain_mean(means));
  out.mcse = std::sqrt(batch_var / static_cast<double>(batches));
  out.ess = out.mcse > 0.0 ? std::min(static_cast<double>(n), var / (out.mcse * out.mcse)) : static_cast<double>(n);

  const std::size_t half = n / 2;
  const auto a = draws.subspan(n - 2 * half, half);
  const auto b = draws.subspan(n - half, half);
  const double ma = plain_mean(a);
  const double mb = plain_mean(b);
  const double w = 0.5 * (sample_variance(a, ma) + sample_variance(b, mb));
  const double grand = 0.5 * (ma + mb);
  const double hn = static_cast<double>(half);
  const double between = hn * ((ma - grand) * (ma - grand) + (mb - grand) * (mb - grand));
  if (w > 0.0) {
    const double var_plus = (hn - 1.0) / hn * w + between / hn;
    out.rhat = std::sqrt(var_plus / w);
  }
  return out;
}

GibbsSampler::GibbsSampler(const ModelSpec& model, const Observations& obs, const GibbsConfig& config,
                           const LgmOptions& options)
    : config_(config) {
  config_.validate();
  LgmOptions light = options;
  light.second_moments = false;
  light.keep_factors = false;
  light.grid.max_mode_iterations = config.mode_iterations;
  problem_ = LgmProblem::create(model, obs, light);
  ws_ = problem_->make_workspace();
  const std::size_t nc = model.components.size();
  state_.v.resize(nc);
  state_.eta.assign(nc, config.sample_eta ? 1.0 : config.fixed_eta);
  for (std::size_t c = 0; c < nc; ++c) {
    const auto& h = model.components[c].h;
    state_.v[c] = Eigen::Map<const Eigen::VectorXd>(h.data(), static_cast<Eigen::Index>(h.size()));
  }
  // Start from the Gaussian-model fit.
  std::vector<Eigen::VectorXd> w(nc);
  for (std::size_t c = 0; c < nc; ++c) {
    w[c] = state_.v[c].cwiseInverse();
  }
  LgmProblem& p = *problem_;
  LgmOptions start_options = light;
  start_options.grid.max_mode_iterations = 50;
  p.set_options(start_options);
  const LgmPosterior post = p.fit(w, {}, &ws_);
  p.set_options(light);
  state_.theta = post.mode();
  state_.x = post.mean();
  warm_ = post.mode();
}

void GibbsSampler::draw_latent(Rng& rng) {
  const std::size_t nc = state_.v.size();
  std::vector<Eigen::VectorXd> w(nc);
  for (std::size_t c = 0; c < nc; ++c) {
    w[c] = state_.v[c].cwiseInverse();
  }
  const LgmPosterior post = problem_->fit(w, warm_, &ws_);
  warm_ = post.mode();
  const std::size_t k = post.sample_point(rng);
  state_.x = post.sample_at(k, rng, &ws_);
  state_.theta = post.points()[k].theta;
}

void GibbsSampler::draw_mixing(Rng& rng) {
  const ModelSpec& model = problem_->model();
  for (std::size_t c = 0; c < model.components.size(); ++c) {
    const LatentComponent& comp = model.components[c];
    if (config_.fix_v || comp.noise.is_gaussian()) {
      continue;
    }
    const double tau = problem_->component_precision(c, state_.theta);
    const SparseMatrix d = comp.d_at(problem_->component_rho(c, state_.theta));
    const Eigen::VectorXd dx = d * state_.x.segment(problem_->component_offset(c), comp.cols());
    Eigen::VectorXd& v = state_.v[c];
    const double eta = state_.eta[c];
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      const double h = comp.h[static_cast<std::size_t>(i)];
      v[i] = gig_sample(v_conditional(comp.noise, eta, h, tau * dx[i] * dx[i]), rng);
    }
    if (!config_.sample_eta) {
      continue;
    }
    const std::size_t m = static_cast<std::size_t>(v.size());
    if (comp.noise.kind == NoiseKind::kNig && !comp.noise.eta_log_prior) {
      const Eigen::VectorXd inv = v.cwiseInverse();
      const GigParams g =
          svi_update_eta({v.data(), m}, {inv.data(), m}, comp.h, comp.noise.alpha_eta);
      state_.eta[c] = gig_sample(g, rng);
    } else {
      std::vector<VMoments> vm(m);
      for (std::size_t i = 0; i < m; ++i) {
        const double vi = v[static_cast<Eigen::Index>(i)];
        vm[i] = {vi, 1.0 / vi, std::log(vi)};
      }
      const TabulatedSampler sampler(svi_eta_log_kernel(comp.noise, std::move(vm), comp.h), eta);
      state_.eta[c] = sampler.sample(rng);
    }
  }
}

void GibbsSampler::sweep(Rng& rng) {
  if (config_.v_first) {
    draw_mixing(rng);
    draw_latent(rng);
  } else {
    draw_latent(rng);
    draw_mixing(rng);
  }
}

GibbsResult run_gibbs(const ModelSpec& model, const Observations& obs, const GibbsConfig& config,
                      const LgmOptions& options) {
  const auto t0 = std::chrono::steady_clock::now();
  GibbsSampler sampler(model, obs, config, options);
  Rng rng = derive_stream(config.seed, 0);
  const std::size_t nc = model.components.size();
  const Eigen::Index kept = config.iterations - config.burn_in;
  const LgmProblem& problem = sampler.problem();
  GibbsResult out;
  out.config = config;
  if (config.keep_x) {
    out.x.resize(kept, problem.latent_size());
  }
  if (config.keep_v) {
    out.v.resize(nc);
    for (std::size_t c = 0; c < nc; ++c) {
      out.v[c].resize(kept, model.components[c].rows());
    }
  }
  out.eta.resize(kept, static_cast<Eigen::Index>(nc));
  out.theta.resize(kept, static_cast<Eigen::Index>(problem.hyper_count()));
  for (int it = 0; it < config.iterations; ++it) {
    sampler.sweep(rng);
    if (it < config.burn_in) {
      continue;
    }
    const Eigen::Index r = it - config.burn_in;
    const GibbsState& s = sampler.state();
    if (config.keep_x) {
      out.x.row(r) = s.x.transpose();
    }
    if (config.keep_v) {
      for (std::size_t c = 0; c < nc; ++c) {
        out.v[c].row(r) = s.v[c].transpose();
      }
    }
    for (std::size_t c = 0; c < nc; ++c) {
      out.eta(r, static_cast<Eigen::Index>(c)) = s.eta[c];
    }
    if (problem.hyper_count() > 0) {
      out.theta.row(r) = problem.natural(s.theta).transpose();
    }
  }
  out.last = sampler.state();
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

Eigen::VectorXd GibbsResult::x_mean() const { return x.colwise().mean().transpose(); }

Eigen::VectorXd GibbsResult::x_sd() const {
  const Eigen::RowVectorXd mu = x.colwise().mean();
  const double denom = std::max<double>(1.0, static_cast<double>(x.rows() - 1));
  return ((x.rowwise() - mu).array().square().colwise().sum() / denom).sqrt().transpose();
}

Eigen::VectorXd GibbsResult::v_mean(std::size_t c) const { return v.at(c).colwise().mean().transpose(); }

ChainSummary GibbsResult::eta_summary(std::size_t c) const {
  return column_summary(eta, static_cast<Eigen::Index>(c));
}

ChainSummary GibbsResult::x_summary(Eigen::Index i) const { return column_summary(x, i); }

ChainSummary GibbsResult::theta_summary(Eigen::Index j) const { return column_summary(theta, j); }

}  // namespace lnvb
