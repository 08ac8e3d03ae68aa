#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <random>

#include "gig_oracle.hpp"
#include "oracles.hpp"
#include "lnvb/error.hpp"
#include "lnvb/vb_core.hpp"

namespace {

using Eigen::VectorXd;
using lnvb::GigParams;
using lnvb::NoiseFamily;
using lnvb::NoiseKind;

constexpr double kLog2Pi = 1.8378770664093454836;

// AR1 path driven by NIG noise with h = 1, observed with Gaussian error.
struct Ar1Data {
  lnvb::ModelSpec model;
  lnvb::Observations obs;
  VectorXd x;
};

Ar1Data nig_ar1(int n, double rho, double eta, double tau_x, double tau_y, std::uint64_t seed,
                bool learn_tau_x = true) {
  lnvb::Rng rng = lnvb::derive_stream(seed, 7);
  NoiseFamily fam{NoiseKind::kNig, 5.0, {}};
  std::vector<double> h(static_cast<std::size_t>(n), 1.0);
  const auto lambda = lnvb::simulate_noise(fam, eta, h, rng);
  Ar1Data out;
  out.x.resize(n);
  out.x[0] = lambda[0] / std::sqrt(tau_x * (1.0 - rho * rho));
  for (int i = 1; i < n; ++i) {
    out.x[i] = rho * out.x[i - 1] + lambda[static_cast<std::size_t>(i)] / std::sqrt(tau_x);
  }
  VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    y[i] = out.x[i] + lnvb::standard_normal(rng) / std::sqrt(tau_y);
  }
  auto comp = lnvb::build_ar1(n, rho);
  comp.noise = fam;
  comp.precision.fixed = !learn_tau_x;
  comp.precision.value = tau_x;
  comp.precision.shape = 1.0;
  comp.precision.rate = 0.5;
  out.model.components.push_back(std::move(comp));
  out.model.obs_precision.fixed = true;
  out.model.obs_precision.value = tau_y;
  out.obs = lnvb::identity_observations(y);
  return out;
}

// NIG mixing density written out directly.
double nig_log_mixing(double v, double eta, double h) {
  return std::log(h) - 0.5 * kLog2Pi - 0.5 * std::log(eta) + h / eta - 1.5 * std::log(v) -
         (v + h * h / v) / (2.0 * eta);
}

TEST(SviUpdate, VMatchesClosedForms) {
  NoiseFamily nig{NoiseKind::kNig, 1.0, {}};
  const GigParams g = lnvb::svi_update_v(0.5, 1.0, {0.5, 2.0}, nig);
  EXPECT_EQ(g, (GigParams{-1.0, 2.0, 2.5}));

  NoiseFamily t{NoiseKind::kTStudent, 1.0, {}};
  const GigParams gt = lnvb::svi_update_v(0.5, 1.0, {4.0, 0.25}, t);
  EXPECT_DOUBLE_EQ(gt.p, -2.5);
  EXPECT_DOUBLE_EQ(gt.a, 0.0);
  EXPECT_DOUBLE_EQ(gt.b, 4.5);

  NoiseFamily gal{NoiseKind::kGal, 1.0, {}};
  const GigParams gg = lnvb::svi_update_v(0.5, 1.0, {0.5, 2.0}, gal);
  EXPECT_DOUBLE_EQ(gg.p, 1.5);
  EXPECT_DOUBLE_EQ(gg.a, 4.0);
  EXPECT_DOUBLE_EQ(gg.b, 0.5);

  EXPECT_THROW(lnvb::svi_update_v(-1.0, 1.0, {1.0, 1.0}, nig), lnvb::DomainError);
}

TEST(SviUpdate, EtaMatchesClosedFormAndClamps) {
  const std::vector<double> vp{2.0, 2.0};
  const std::vector<double> vm{1.0, 1.0};
  const std::vector<double> h{1.0, 1.0};
  bool clamped = true;
  const GigParams g = lnvb::svi_update_eta(vp, vm, h, 5.0, &clamped);
  EXPECT_EQ(g, (GigParams{0.0, 10.0, 2.0}));
  EXPECT_FALSE(clamped);

  const std::vector<double> exact{1.0, 1.0};
  const GigParams z = lnvb::svi_update_eta(exact, exact, h, 5.0, &clamped);
  EXPECT_TRUE(clamped);
  EXPECT_DOUBLE_EQ(z.b, 1e-12);
}

TEST(SviUpdate, ClosedFormEtaAgreesWithGeneralKernel) {
  NoiseFamily nig{NoiseKind::kNig, 3.0, {}};
  std::vector<lnvb::VMoments> vm;
  std::vector<double> vp;
  std::vector<double> vinv;
  std::vector<double> h;
  for (int i = 0; i < 7; ++i) {
    const GigParams q{-1.0, 1.3, 0.4 + 0.3 * i};
    vm.push_back({lnvb::gig_moment(1.0, q), lnvb::gig_moment(-1.0, q), lnvb::gig_mean_log(q)});
    vp.push_back(vm.back().mean);
    vinv.push_back(vm.back().inv_mean);
    h.push_back(0.5 + 0.1 * i);
  }
  const GigParams closed = lnvb::svi_update_eta(vp, vinv, h, 3.0);
  const auto kernel = lnvb::svi_eta_log_kernel(nig, vm, h);
  const double ref = lnvb::gig_log_pdf(closed, 1.0) - kernel(1.0);
  for (double eta : {0.05, 0.3, 2.0, 7.5}) {
    EXPECT_NEAR(lnvb::gig_log_pdf(closed, eta) - kernel(eta), ref, 1e-9) << eta;
  }
}

TEST(ScviKernel, NigMatchesQuadrature) {
  NoiseFamily nig{NoiseKind::kNig, 2.0, {}};
  const std::vector<double> d{0.3, 2.5, 0.01};
  const std::vector<double> h{1.0, 0.7, 1.4};
  const auto kernel = lnvb::scvi_eta_log_kernel(nig, d, h);
  auto oracle = [&](double eta) {
    double out = std::log(2.0) - 2.0 * eta;
    for (std::size_t i = 0; i < d.size(); ++i) {
      out += lnvb::testing::log_integral_positive([&](double v) {
        return nig_log_mixing(v, eta, h[i]) - 0.5 * std::log(v) - d[i] / (2.0 * v);
      });
    }
    return out;
  };
  const double ref = 0.0;  // normalized kernel
  for (double eta : {0.02, 0.2, 3.0, 40.0}) {
    EXPECT_NEAR(kernel(eta) - oracle(eta), ref, 1e-8) << eta;
  }
}

TEST(ScviKernel, OtherFamiliesMatchQuadrature) {
  const std::vector<double> d{0.4, 1.7};
  const std::vector<double> h{1.0, 1.0};
  for (NoiseKind kind : {NoiseKind::kTStudent, NoiseKind::kGal}) {
    NoiseFamily fam{kind, 1.5, {}};
    const auto kernel = lnvb::scvi_eta_log_kernel(fam, d, h);
    auto oracle = [&](double eta) {
      double out = std::log(1.5) - 1.5 * eta;
      for (std::size_t i = 0; i < d.size(); ++i) {
        const GigParams prior = lnvb::mixing_prior(fam, eta, h[i]);
        out += lnvb::testing::log_integral_positive([&](double v) {
          return lnvb::testing::gig_oracle_log_pdf(prior, v) - 0.5 * std::log(v) - d[i] / (2.0 * v);
        });
      }
      return out;
    };
    const double ref = 0.0;  // normalized kernel
    for (double eta : {0.3, 2.0, 6.0}) {
      EXPECT_NEAR(kernel(eta) - oracle(eta), ref, 1e-7) << lnvb::to_string(kind) << " " << eta;
    }
  }
}

TEST(ScviUpdate, RaoBlackwellMomentsConvergeToQuadrature) {
  NoiseFamily nig{NoiseKind::kNig, 1.0, {}};
  const std::vector<double> d{0.2, 3.0};
  const std::vector<double> h{1.0, 1.0};
  const auto kernel = lnvb::scvi_eta_log_kernel(nig, d, h);
  lnvb::TabulatedSampler sampler(kernel, 1.0);
  lnvb::Rng rng = lnvb::derive_stream(11, 0);
  const auto upd = lnvb::scvi_update_v(nig, d, h, sampler, 100000, rng);

  const double log_z = lnvb::testing::log_integral_positive(kernel);
  for (std::size_t i = 0; i < d.size(); ++i) {
    // E[V_i] = integral q(eta) E[V_i | eta] d eta; the conditional GIG
    // moments have their own quadrature checks.
    auto conditional_mean = [&](double eta, double order) {
      return lnvb::gig_moment(order, GigParams{-1.0, 1.0 / eta, h[i] * h[i] / eta + d[i]});
    };
    for (double order : {1.0, -1.0}) {
      const double log_e = lnvb::testing::log_integral_positive(
          [&](double eta) { return kernel(eta) + std::log(conditional_mean(eta, order)); });
      const double expected = std::exp(log_e - log_z);
      const double got = order > 0 ? upd.v_plus[static_cast<Eigen::Index>(i)] : upd.v_minus[static_cast<Eigen::Index>(i)];
      EXPECT_NEAR(got / expected, 1.0, 1e-4) << i << " order " << order;
    }
  }
}

TEST(RunVb, InfiniteThresholdIsPlainFit) {
  const auto data = nig_ar1(40, 0.8, 1.0, 1.0, 4.0, 3);
  auto problem = lnvb::LgmProblem::create(data.model, data.obs);
  const auto plain = problem->fit(problem->default_weights());
  lnvb::VbConfig cfg;
  cfg.threshold = std::numeric_limits<double>::infinity();
  const auto res = lnvb::run_vb(problem, cfg);
  EXPECT_EQ(res.iterations, 1);
  EXPECT_TRUE(res.converged);
  EXPECT_LT((res.posterior.mean() - plain.mean()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((res.posterior.sd() - plain.sd()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(RunVb, FixedVReproducesGaussianModel) {
  const auto data = nig_ar1(40, 0.8, 1.0, 1.0, 4.0, 4);
  auto gaussian = data.model;
  gaussian.components[0].noise.kind = NoiseKind::kGaussian;
  auto problem = lnvb::LgmProblem::create(gaussian, data.obs);
  const auto plain = problem->fit(problem->default_weights());
  lnvb::VbConfig cfg;
  cfg.fix_v = true;
  const auto res = lnvb::run_vb(data.model, data.obs, cfg);
  EXPECT_TRUE(res.converged);
  EXPECT_LT((res.posterior.mean() - plain.mean()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((res.posterior.sd() - plain.sd()).cwiseAbs().maxCoeff(), 1e-12);
}

// ELBO from its definition, evaluated point by point on the grid.
double elbo_oracle(const lnvb::VbResult& r) {
  const auto& post = r.posterior;
  const auto& prob = post.problem();
  const auto& s = r.state[0];
  const auto& comp = prob.model().components[0];
  const auto n = s.h.size();
  const double n_obs = static_cast<double>(prob.observed_y().size());
  const double log_det_d = std::log(std::sqrt(1.0 - comp.rho.value * comp.rho.value));
  double elbo = 0.0;
  for (const auto& p : post.points()) {
    const double tau = prob.component_precision(0, p.theta);
    const double tau_y = prob.observation_precision(p.theta);
    double term = prob.log_prior(p.theta) + post.log_delta() - p.log_weight;
    term += 0.5 * n_obs * (std::log(tau_y) - kLog2Pi) - 0.5 * tau_y * p.residual_second;
    term += -0.5 * n * kLog2Pi + 0.5 * (n * std::log(tau) - s.v_log.sum() + 2.0 * log_det_d) -
            0.5 * tau * s.v_minus.dot(p.dx_second[0]);
    term += 0.5 * n * (kLog2Pi + 1.0) - 0.5 * p.log_det_post;
    elbo += p.weight * term;
  }
  const GigParams& qe = *s.q_eta;
  const double alpha = comp.noise.alpha_eta;
  using lnvb::testing::gig_oracle_expectation;
  using lnvb::testing::gig_oracle_log_pdf;
  auto entropy = [](const GigParams& g) {
    return gig_oracle_expectation(g, [&](double x) { return -gig_oracle_log_pdf(g, x); });
  };
  const double e_log_eta = gig_oracle_expectation(qe, [](double x) { return std::log(x); });
  const double e_inv_eta = gig_oracle_expectation(qe, [](double x) { return 1.0 / x; });
  const double e_eta = gig_oracle_expectation(qe, [](double x) { return x; });
  for (Eigen::Index i = 0; i < n; ++i) {
    const double h = s.h[i];
    const GigParams& qv = s.q_v[static_cast<std::size_t>(i)];
    const double e_log_v = gig_oracle_expectation(qv, [](double x) { return std::log(x); });
    const double e_v = gig_oracle_expectation(qv, [](double x) { return x; });
    const double e_inv_v = gig_oracle_expectation(qv, [](double x) { return 1.0 / x; });
    elbo += std::log(h) - 0.5 * kLog2Pi - 0.5 * e_log_eta + h * e_inv_eta - 1.5 * e_log_v -
            0.5 * e_inv_eta * (e_v + h * h * e_inv_v);
    elbo += entropy(qv);
  }
  elbo += std::log(alpha) - alpha * e_eta + entropy(qe);
  return elbo;
}

TEST(Elbo, MatchesDefinitionAndIncreases) {
  const auto data = nig_ar1(60, 0.7, 2.0, 1.0, 4.0, 5);
  lnvb::VbConfig cfg;
  cfg.debug_elbo = true;
  cfg.threshold = 1e-9;
  cfg.max_iterations = 25;
  const auto res = lnvb::run_vb(data.model, data.obs, cfg);
  ASSERT_TRUE(std::isfinite(res.elbo));
  EXPECT_NEAR(res.elbo, elbo_oracle(res), 1e-7 * std::abs(res.elbo));
  for (std::size_t k = 1; k < res.trace.size(); ++k) {
    EXPECT_GE(res.trace[k].elbo - res.trace[k - 1].elbo, -1e-8 * std::abs(res.trace[k].elbo)) << k;
  }
}

TEST(Elbo, CollapsedBoundDominatesFactorizedBound) {
  const auto data = nig_ar1(50, 0.8, 2.0, 1.0, 4.0, 10);
  lnvb::VbConfig cfg;
  cfg.max_iterations = 6;
  const auto svi = lnvb::run_vb(data.model, data.obs, cfg);
  ASSERT_TRUE(std::isfinite(svi.elbo));
  // Same q(x, theta); collapsed q(V, eta) built from the same d messages.
  auto state = svi.state;
  auto& s = state[0];
  const std::vector<double> d(s.d.data(), s.d.data() + s.d.size());
  const std::vector<double> h(s.h.data(), s.h.data() + s.h.size());
  s.eta_sampler = std::make_shared<lnvb::TabulatedSampler>(
      lnvb::scvi_eta_log_kernel(data.model.components[0].noise, d, h), 1.0);
  const double collapsed = lnvb::compute_elbo(svi.posterior, state, data.model, lnvb::VbMethod::kScvi);
  EXPECT_GE(collapsed, svi.elbo - 1e-6);
  EXPECT_LT(collapsed - svi.elbo, 50.0);
}

TEST(RunVb, CollapsedConvergesFasterToSameFit) {
  const auto data = nig_ar1(100, 0.9, 1.0, 0.25, 1.0, 6);
  lnvb::VbConfig svi;
  svi.max_iterations = 400;
  const auto a = lnvb::run_vb(data.model, data.obs, svi);
  lnvb::VbConfig scvi;
  scvi.method = lnvb::VbMethod::kScvi;
  const auto b = lnvb::run_vb(data.model, data.obs, scvi);
  EXPECT_TRUE(a.converged);
  EXPECT_TRUE(b.converged);
  EXPECT_LE(b.iterations, 15);
  EXPECT_LT(b.iterations, a.iterations);
  EXPECT_EQ(a.trace.size(), static_cast<std::size_t>(a.iterations));
  EXPECT_GT(a.state[0].eta.mean, 0.0);
  EXPECT_GT(b.state[0].eta.mean, 0.0);
  const VectorXd sd = a.posterior.sd();
  const VectorXd diff = (a.posterior.mean() - b.posterior.mean()).cwiseQuotient(sd);
  EXPECT_LT(diff.cwiseAbs().maxCoeff(), 0.25);
}

TEST(RunVb, OtherFamiliesRun) {
  for (NoiseKind kind : {NoiseKind::kTStudent, NoiseKind::kGal}) {
    for (lnvb::VbMethod method : {lnvb::VbMethod::kSvi, lnvb::VbMethod::kScvi}) {
      auto data = nig_ar1(60, 0.8, 1.0, 1.0, 4.0, 8);
      data.model.components[0].noise.kind = kind;
      data.model.components[0].noise.alpha_eta = 0.2;
      lnvb::VbConfig cfg;
      cfg.method = method;
      const auto res = lnvb::run_vb(data.model, data.obs, cfg);
      EXPECT_GT(res.iterations, 0);
      EXPECT_TRUE(std::isfinite(res.state[0].eta.mean)) << lnvb::to_string(kind);
      EXPECT_TRUE(res.state[0].v_minus.allFinite());
      EXPECT_TRUE(res.posterior.mean().allFinite());
    }
  }
}

TEST(RunVb, SampleVMatchesMoments) {
  const auto data = nig_ar1(30, 0.5, 1.0, 1.0, 4.0, 9);
  const auto res = lnvb::run_vb(data.model, data.obs, {});
  lnvb::Rng rng = lnvb::derive_stream(1, 1);
  VectorXd acc = VectorXd::Zero(30);
  const int draws = 40000;
  for (int k = 0; k < draws; ++k) {
    acc += res.sample_v(0, rng).cwiseInverse();
  }
  acc /= draws;
  for (Eigen::Index i = 0; i < 30; ++i) {
    EXPECT_NEAR(acc[i] / res.state[0].v_minus[i], 1.0, 0.03);
  }
}

TEST(VbConfig, Validation) {
  lnvb::VbConfig cfg;
  cfg.threshold = 0.0;
  EXPECT_THROW(cfg.validate(), lnvb::ValidationError);
  cfg.threshold = 0.01;
  cfg.mc_samples = 50;
  EXPECT_THROW(cfg.validate(), lnvb::ValidationError);
  EXPECT_EQ(lnvb::VbConfig{}.resolved_max_iterations(), 40);
  lnvb::VbConfig s;
  s.method = lnvb::VbMethod::kScvi;
  EXPECT_EQ(s.resolved_max_iterations(), 50);
  EXPECT_EQ(lnvb::parse_vb_method("SCVI"), lnvb::VbMethod::kScvi);
  EXPECT_THROW(lnvb::parse_vb_method("mcmc"), lnvb::ValidationError);
}

}  // namespace
