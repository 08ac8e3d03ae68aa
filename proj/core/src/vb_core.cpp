#include "lnvb/vb_core.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>

#include "lnvb/error.hpp"
#include "lnvb/special_functions.hpp"

namespace lnvb {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kInf = std::numeric_limits<double>::infinity();

bool closed_form_eta(const NoiseFamily& family) {
  return family.kind == NoiseKind::kNig && !family.eta_log_prior;
}

// log C(prior) - log C(post) for NIG with V integrated out.
double nig_collapsed_term(double eta, double h, double d) {
  const double s = h * h + d * eta;
  const double root = std::sqrt(s);
  const double omega = std::exp(0.5 * std::log(s) - std::log(eta));
  return -0.5 * std::log(s) + log_bessel_k_scaled(1.0, omega) - d / (h + root) + std::log(h) -
         0.5 * std::log(0.5 * std::numbers::pi * eta);
}

double safe_moment(double order, const GigParams& g) {
  return gig_moment_exists(order, g) ? gig_moment(order, g) : kInf;
}

void fill_eta_from_sampler(VbComponentState& s, const TabulatedSampler& sampler) {
  s.eta.mean = sampler.mean();
  s.eta.inv_mean = sampler.moment(-1.0);
  s.eta_sd = std::sqrt(std::max(0.0, sampler.variance()));
}

}  // namespace

std::string to_string(VbMethod method) {
  return method == VbMethod::kSvi ? "svi" : "scvi";
}

VbMethod parse_vb_method(const std::string& name) {
  std::string lower = name;
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char ch) { return std::tolower(ch); });
  if (lower == "svi") {
    return VbMethod::kSvi;
  }
  if (lower == "scvi") {
    return VbMethod::kScvi;
  }
  throw ValidationError("unknown method '" + name + "' (expected svi or scvi)");
}

GigParams svi_update_v(double d, double h, const EtaMoments& eta, const NoiseFamily& family) {
  if (!(d >= 0.0) || !std::isfinite(d)) {
    throw DomainError("d message must be finite and non-negative");
  }
  const GigParams e = expected_mixing_prior(family, h, eta);
  GigParams out{e.p - 0.5, e.a, e.b + d};
  gig_classify(out);
  return out;
}

GigParams svi_update_eta(std::span<const double> v_plus, std::span<const double> v_minus, std::span<const double> h,
                         double alpha, bool* clamped) {
  if (v_plus.size() != v_minus.size() || v_plus.size() != h.size() || v_plus.empty()) {
    throw DomainError("svi_update_eta: moment vectors must be non-empty and of equal length");
  }
  if (!(alpha > 0.0)) {
    throw DomainError("svi_update_eta: alpha must be positive");
  }
  double b = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    b += v_plus[i] - 2.0 * h[i] + h[i] * h[i] * v_minus[i];
  }
  const bool clamp = !(b > 1e-12);
  if (clamp) {
    b = 1e-12;
  }
  if (clamped != nullptr) {
    *clamped = clamp;
  }
  const double m = static_cast<double>(h.size());
  return {-0.5 * m + 1.0, 2.0 * alpha, b};
}

std::function<double(double)> svi_eta_log_kernel(const NoiseFamily& family, std::vector<VMoments> v,
                                                  std::vector<double> h) {
  if (v.size() != h.size()) {
    throw DomainError("svi_eta_log_kernel: size mismatch");
  }
  return [family, v = std::move(v), h = std::move(h)](double eta) {
    if (!(eta > 0.0) || !std::isfinite(eta)) {
      return -kInf;
    }
    double out = family.log_prior(eta);
    for (std::size_t i = 0; i < h.size(); ++i) {
      out += expected_mixing_log_prior(family, eta, h[i], v[i]);
    }
    return std::isnan(out) ? -kInf : out;
  };
}

std::function<double(double)> scvi_eta_log_kernel(const NoiseFamily& family, std::vector<double> d,
                                                  std::vector<double> h) {
  if (d.size() != h.size()) {
    throw DomainError("scvi_eta_log_kernel: size mismatch");
  }
  if (family.is_gaussian()) {
    throw DomainError("scvi_eta_log_kernel: Gaussian noise has no eta");
  }
  return [family, d = std::move(d), h = std::move(h)](double eta) {
    if (!(eta > 0.0) || !std::isfinite(eta)) {
      return -kInf;
    }
    double out = family.log_prior(eta);
    if (family.kind == NoiseKind::kNig) {
      for (std::size_t i = 0; i < h.size(); ++i) {
        out += nig_collapsed_term(eta, h[i], d[i]);
      }
    } else {
      for (std::size_t i = 0; i < h.size(); ++i) {
        const GigParams prior = mixing_prior(family, eta, h[i]);
        const GigParams post{prior.p - 0.5, prior.a, prior.b + d[i]};
        if (!gig_is_valid(prior) || !gig_is_valid(post)) {
          return -kInf;
        }
        out += gig_log_normalizer(prior) - gig_log_normalizer(post);
      }
    }
    return std::isnan(out) ? -kInf : out;
  };
}

GigParams v_conditional(const NoiseFamily& family, double eta, double h, double d) {
  const GigParams prior = mixing_prior(family, eta, h);
  return {prior.p - 0.5, prior.a, prior.b + d};
}

ScviVUpdate scvi_update_v(const NoiseFamily& family, std::span<const double> d, std::span<const double> h,
                          const TabulatedSampler& eta, int m, Rng& rng, bool with_log) {
  if (d.size() != h.size()) {
    throw DomainError("scvi_update_v: size mismatch");
  }
  if (m < 1) {
    throw DomainError("scvi_update_v: need at least one draw");
  }
  const auto n = static_cast<Eigen::Index>(h.size());
  ScviVUpdate out;
  out.v_minus = Eigen::VectorXd::Zero(n);
  out.v_plus = Eigen::VectorXd::Zero(n);
  out.v_log = with_log ? Eigen::VectorXd::Zero(n) : Eigen::VectorXd();
  std::vector<double> draws(static_cast<std::size_t>(m));
  eta.sample_stratified(rng, draws);
  double eta_sum = 0.0;
  for (double e : draws) {
    eta_sum += e;
    for (Eigen::Index i = 0; i < n; ++i) {
      const GigParams g = v_conditional(family, e, h[i], d[i]);
      out.v_minus[i] += gig_moment(-1.0, g);
      out.v_plus[i] += safe_moment(1.0, g);
      if (with_log) {
        out.v_log[i] += gig_mean_log(g);
      }
    }
  }
  const double inv_m = 1.0 / static_cast<double>(m);
  out.v_minus *= inv_m;
  out.v_plus *= inv_m;
  if (with_log) {
    out.v_log *= inv_m;
  }
  out.eta_sample_mean = eta_sum * inv_m;
  return out;
}

void VbConfig::validate() const {
  if (!(threshold > 0.0)) {
    throw ValidationError("threshold must be positive");
  }
  if (mc_samples < 100) {
    throw ValidationError("mc-samples must be at least 100");
  }
  if (!(eta_inv_init > 0.0) || !std::isfinite(eta_inv_init)) {
    throw ValidationError("initial E[1/eta] must be positive and finite");
  }
}

double VbResult::log_evidence() const {
  return std::isfinite(elbo) ? elbo : posterior.log_evidence();
}

Eigen::VectorXd VbResult::sample_v(std::size_t c, Rng& rng) const {
  const VbComponentState& s = state.at(c);
  const Eigen::Index n = s.h.size();
  Eigen::VectorXd v(n);
  if (s.gaussian) {
    return s.h;
  }
  if (config.method == VbMethod::kSvi) {
    for (Eigen::Index i = 0; i < n; ++i) {
      v[i] = gig_sample(s.q_v[static_cast<std::size_t>(i)], rng);
    }
    return v;
  }
  const double eta = s.eta_sampler->sample(rng);
  const NoiseFamily& family = posterior.problem().model().components[c].noise;
  for (Eigen::Index i = 0; i < n; ++i) {
    v[i] = gig_sample(v_conditional(family, eta, s.h[i], s.d[i]), rng);
  }
  return v;
}

double compute_elbo(const LgmPosterior& post, const std::vector<VbComponentState>& state, const ModelSpec& model,
                    VbMethod method) {
  if (model.likelihood != LikelihoodKind::kGaussian) {
    return kNaN;
  }
  double out = post.log_evidence();
  const auto& w = post.weights_w();
  for (std::size_t c = 0; c < state.size(); ++c) {
    const LatentComponent& comp = model.components[c];
    const VbComponentState& s = state[c];
    if (s.gaussian) {
      // V = 1/W exactly; no correction.
      continue;
    }
    if (!comp.full_row_rank() || comp.sum_to_zero || comp.noise.eta_log_prior) {
      return kNaN;
    }
    const Eigen::VectorXd& wc = w[c];
    const Eigen::Index n = s.h.size();
    // Remove the V-dependent part of log pi(x | W) contained in the evidence.
    for (Eigen::Index i = 0; i < n; ++i) {
      out += -0.5 * std::log(wc[i]) + 0.5 * wc[i] * s.d[i];
    }
    if (method == VbMethod::kScvi) {
      // q(V, eta) is the exact conditional optimum: its ELBO terms collapse to
      // the log normalizer of the eta kernel.
      if (!s.eta_sampler) {
        return kNaN;
      }
      out += s.eta_sampler->log_normalizer();
      continue;
    }
    if (!closed_form_eta(comp.noise) || !s.q_eta) {
      return kNaN;
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      out += -0.5 * s.v_log[i] - 0.5 * s.v_minus[i] * s.d[i];
    }
    const GigParams& qe = *s.q_eta;
    const double e_eta = gig_moment(1.0, qe);
    const double e_inv_eta = gig_moment(-1.0, qe);
    const double e_log_eta = gig_mean_log(qe);
    const double alpha = comp.noise.alpha_eta;
    // E log pi(V | eta) for the NIG mixing law, plus entropies.
    for (Eigen::Index i = 0; i < n; ++i) {
      const double h = s.h[i];
      out += std::log(h) - 0.5 * std::log(2.0 * std::numbers::pi) - 0.5 * e_log_eta + h * e_inv_eta -
             1.5 * s.v_log[i] - 0.5 * e_inv_eta * (s.v_plus[i] + h * h * s.v_minus[i]);
      out += gig_entropy(s.q_v[static_cast<std::size_t>(i)]);
    }
    out += std::log(alpha) - alpha * e_eta + gig_entropy(qe);
  }
  return out;
}

VbResult run_vb(const ModelSpec& model, const Observations& obs, const VbConfig& config) {
  config.validate();
  return run_vb(LgmProblem::create(model, obs, config.lgm), config);
}

VbResult run_vb(const std::shared_ptr<LgmProblem>& problem, const VbConfig& config) {
  using Clock = std::chrono::steady_clock;
  config.validate();
  if (!problem->options().second_moments) {
    throw ValidationError("variational fits need second moments from the Gaussian engine");
  }
  const ModelSpec& model = problem->model();
  const std::size_t nc = model.components.size();
  VbResult result;
  result.config = config;
  result.elbo = kNaN;
  result.state.resize(nc);
  std::vector<Eigen::VectorXd> w(nc);
  bool all_gaussian = true;
  for (std::size_t c = 0; c < nc; ++c) {
    const LatentComponent& comp = model.components[c];
    VbComponentState& s = result.state[c];
    s.h = Eigen::Map<const Eigen::VectorXd>(comp.h.data(), static_cast<Eigen::Index>(comp.h.size()));
    s.gaussian = config.fix_v || comp.noise.is_gaussian();
    all_gaussian = all_gaussian && s.gaussian;
    s.v_plus = s.h;
    s.v_minus = s.h.cwiseInverse();
    s.v_log = s.h.array().log().matrix();
    s.d = Eigen::VectorXd::Zero(s.h.size());
    s.eta.inv_mean = config.eta_inv_init;
    s.eta.mean = 1.0 / config.eta_inv_init;
    w[c] = s.v_minus;
  }

  Rng rng = derive_stream(config.seed, 0);
  LgmWorkspace ws = problem->make_workspace();
  const bool frozen = config.freeze_grid || config.debug_elbo;
  std::vector<Eigen::VectorXd> grid;
  double log_delta = 0.0;
  std::optional<Eigen::VectorXd> warm;
  const int max_it = config.resolved_max_iterations();

  for (int it = 1; it <= max_it; ++it) {
    const auto t0 = Clock::now();
    if (frozen && it > 1) {
      result.posterior = problem->fit_on_grid(w, grid, log_delta, &ws);
    } else {
      result.posterior = problem->fit(w, warm, &ws);
    }
    if (frozen && it == 1) {
      for (const auto& p : result.posterior.points()) {
        grid.push_back(p.theta);
      }
      log_delta = result.posterior.log_delta();
    }
    if (result.posterior.mode().size() > 0) {
      warm = result.posterior.mode();
    }

    VbIteration rec;
    rec.iteration = it;
    rec.elbo = kNaN;
    double change = 0.0;
    for (std::size_t c = 0; c < nc; ++c) {
      const LatentComponent& comp = model.components[c];
      VbComponentState& s = result.state[c];
      if (s.gaussian) {
        rec.eta_mean.push_back(0.0);
        rec.v_mean.push_back(s.v_plus);
        continue;
      }
      s.d = result.posterior.dx_messages(c);
      const double previous = s.eta.mean;
      const auto n = s.h.size();
      std::span<const double> hs(s.h.data(), static_cast<std::size_t>(n));
      std::span<const double> ds(s.d.data(), static_cast<std::size_t>(n));
      if (config.method == VbMethod::kSvi) {
        s.q_v.resize(static_cast<std::size_t>(n));
        for (Eigen::Index i = 0; i < n; ++i) {
          const GigParams g = svi_update_v(s.d[i], s.h[i], s.eta, comp.noise);
          s.q_v[static_cast<std::size_t>(i)] = g;
          s.v_minus[i] = gig_moment(-1.0, g);
          s.v_plus[i] = safe_moment(1.0, g);
          s.v_log[i] = gig_mean_log(g);
        }
        if (closed_form_eta(comp.noise)) {
          bool clamped = false;
          const GigParams qe = svi_update_eta({s.v_plus.data(), static_cast<std::size_t>(n)},
                                              {s.v_minus.data(), static_cast<std::size_t>(n)}, hs,
                                              comp.noise.alpha_eta, &clamped);
          if (clamped) {
            result.warnings.push_back("q(eta) rate for component '" + comp.name + "' clamped to 1e-12 at iteration " +
                                      std::to_string(it));
          }
          s.q_eta = qe;
          s.eta.mean = gig_moment(1.0, qe);
          s.eta.inv_mean = gig_moment(-1.0, qe);
          s.eta_sd = std::sqrt(std::max(0.0, gig_moment(2.0, qe) - s.eta.mean * s.eta.mean));
        } else {
          std::vector<VMoments> vm(static_cast<std::size_t>(n));
          for (Eigen::Index i = 0; i < n; ++i) {
            vm[static_cast<std::size_t>(i)] = {s.v_plus[i], s.v_minus[i], s.v_log[i]};
          }
          auto sampler = std::make_shared<TabulatedSampler>(
              svi_eta_log_kernel(comp.noise, std::move(vm), std::vector<double>(hs.begin(), hs.end())), s.eta.mean);
          fill_eta_from_sampler(s, *sampler);
          s.eta_sampler = std::move(sampler);
        }
      } else {
        auto sampler = std::make_shared<TabulatedSampler>(
            scvi_eta_log_kernel(comp.noise, std::vector<double>(ds.begin(), ds.end()),
                                std::vector<double>(hs.begin(), hs.end())),
            s.eta.mean);
        ScviVUpdate upd = scvi_update_v(comp.noise, ds, hs, *sampler, config.mc_samples, rng);
        s.v_minus = std::move(upd.v_minus);
        s.v_plus = std::move(upd.v_plus);
        fill_eta_from_sampler(s, *sampler);
        s.eta_sampler = std::move(sampler);
      }
      change = std::max(change, std::abs(s.eta.mean - previous) / previous);
      rec.eta_mean.push_back(s.eta.mean);
      rec.v_mean.push_back(s.v_plus);
    }
    rec.max_relative_change = all_gaussian ? 0.0 : change;
    const bool last = it == max_it || all_gaussian || std::isinf(config.threshold) ||
                      (it >= 2 && change < config.threshold);
    if (config.debug_elbo || last) {
      rec.elbo = compute_elbo(result.posterior, result.state, model, config.method);
      result.elbo = rec.elbo;
    }
    rec.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    result.trace.push_back(std::move(rec));
    result.iterations = it;

    if (last) {
      result.converged = all_gaussian || std::isinf(config.threshold) || (it >= 2 && change < config.threshold);
      break;
    }
    for (std::size_t c = 0; c < nc; ++c) {
      w[c] = result.state[c].v_minus;
    }
  }
  return result;
}

}  // namespace lnvb
