#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "mixing_oracle.hpp"
#include "stats.hpp"
#include "lnvb/error.hpp"
#include "lnvb/gibbs.hpp"

namespace {

using Eigen::VectorXd;

std::vector<double> ar1_chain(int n, double phi, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  std::vector<double> out(static_cast<std::size_t>(n));
  double x = z(rng) / std::sqrt(1.0 - phi * phi);
  for (auto& v : out) {
    x = phi * x + z(rng);
    v = x;
  }
  return out;
}

TEST(ChainSummary, IndependentDraws) {
  const auto draws = ar1_chain(40000, 0.0, 1);
  const auto s = lnvb::summarize_chain(draws);
  EXPECT_NEAR(s.mean, 0.0, 0.03);
  EXPECT_NEAR(s.sd, 1.0, 0.02);
  EXPECT_NEAR(s.ess / 40000.0, 1.0, 0.35);
  EXPECT_NEAR(s.rhat, 1.0, 0.01);
}

TEST(ChainSummary, AutocorrelatedDraws) {
  const double phi = 0.9;
  const int n = 200000;
  const auto draws = ar1_chain(n, phi, 2);
  const auto s = lnvb::summarize_chain(draws);
  const double sd = 1.0 / std::sqrt(1.0 - phi * phi);
  const double ess = n * (1.0 - phi) / (1.0 + phi);
  EXPECT_NEAR(s.sd / sd, 1.0, 0.03);
  EXPECT_NEAR(s.ess / ess, 1.0, 0.35);
  EXPECT_NEAR(s.mcse / (sd / std::sqrt(ess)), 1.0, 0.2);
}

TEST(ChainSummary, SplitRhatFlagsDrift) {
  auto draws = ar1_chain(4000, 0.0, 3);
  for (std::size_t i = 2000; i < draws.size(); ++i) {
    draws[i] += 2.0;
  }
  EXPECT_GT(lnvb::summarize_chain(draws).rhat, 1.2);
}

lnvb::ModelSpec fixed_ar1(int n, double rho, double tau_x, double tau_y, double alpha) {
  lnvb::ModelSpec m;
  auto comp = lnvb::build_ar1(n, rho);
  comp.precision.fixed = true;
  comp.precision.value = tau_x;
  comp.noise = {lnvb::NoiseKind::kNig, alpha, {}};
  m.components.push_back(std::move(comp));
  m.obs_precision.fixed = true;
  m.obs_precision.value = tau_y;
  return m;
}

TEST(Gibbs, GaussianModelMatchesExactPosterior) {
  const int n = 20;
  auto model = fixed_ar1(n, 0.7, 1.0, 2.0, 1.0);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> z;
  VectorXd y(n);
  for (auto& v : y) v = 1.5 * z(rng);
  const auto obs = lnvb::identity_observations(y);
  auto problem = lnvb::LgmProblem::create(model, obs);
  const auto exact = problem->fit(problem->default_weights());

  lnvb::GibbsConfig cfg;
  cfg.fix_v = true;
  cfg.iterations = 6000;
  cfg.burn_in = 500;
  const auto res = lnvb::run_gibbs(model, obs, cfg);
  const VectorXd sd = exact.sd();
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto s = res.x_summary(i);
    EXPECT_NEAR(s.mean, exact.mean()[i], 4.0 * s.mcse + 1e-3) << i;
    EXPECT_NEAR(s.sd / sd[i], 1.0, 0.06) << i;
  }
}

TEST(Gibbs, PriorReproduction) {
  const int n = 4;
  const double alpha = 1.0;
  const double tau_y = 4.0;
  auto model = fixed_ar1(n, 0.5, 1.0, tau_y, alpha);
  const auto obs = lnvb::identity_observations(VectorXd::Zero(n));
  lnvb::GibbsConfig cfg;
  lnvb::GibbsSampler sampler(model, obs, cfg);
  lnvb::Rng rng = lnvb::derive_stream(5, 0);
  std::vector<double> eta;
  std::vector<double> v0;
  const int thin = 10;
  for (int it = 0; it < 30000; ++it) {
    VectorXd y(n);
    for (int i = 0; i < n; ++i) {
      y[i] = sampler.state().x[i] + lnvb::standard_normal(rng) / std::sqrt(tau_y);
    }
    sampler.set_observed_response(y);
    sampler.sweep(rng);
    if (it >= 1000 && it % thin == 0) {
      eta.push_back(sampler.state().eta[0]);
      v0.push_back(sampler.state().v[0][0]);
    }
  }
  const double p_eta = lnvb::testing::ks_pvalue(eta, [&](double e) { return 1.0 - std::exp(-alpha * e); });
  const double p_v = lnvb::testing::ks_pvalue(v0, [&](double v) { return lnvb::testing::nig_marginal_v_cdf(v, 1.0, alpha); });
  EXPECT_GT(p_eta, 0.01);
  EXPECT_GT(p_v, 0.01);
}

TEST(Gibbs, MixingOracleIsADistribution) {
  EXPECT_NEAR(lnvb::testing::nig_marginal_v_cdf(1e4, 1.0, 1.0), 1.0, 1e-6);
  EXPECT_LT(lnvb::testing::nig_marginal_v_cdf(1e-4, 1.0, 1.0), 1e-6);
  // Monte Carlo check of the quadrature CDF.
  lnvb::Rng rng = lnvb::derive_stream(6, 0);
  lnvb::NoiseFamily fam{lnvb::NoiseKind::kNig, 1.0, {}};
  std::vector<double> draws;
  for (int k = 0; k < 20000; ++k) {
    const double e = -std::log(lnvb::uniform_open(rng));
    draws.push_back(lnvb::gig_sample(lnvb::mixing_prior(fam, e, 1.0), rng));
  }
  EXPECT_GT(lnvb::testing::ks_pvalue(draws, [](double v) { return lnvb::testing::nig_marginal_v_cdf(v, 1.0, 1.0); }),
            0.01);
}

TEST(Gibbs, OrderAndFixedEtaOptions) {
  auto model = fixed_ar1(10, 0.5, 1.0, 4.0, 1.0);
  std::mt19937_64 rng(7);
  std::normal_distribution<double> z;
  VectorXd y(10);
  for (auto& v : y) v = z(rng);
  lnvb::GibbsConfig cfg;
  cfg.iterations = 300;
  cfg.burn_in = 50;
  cfg.v_first = true;
  cfg.sample_eta = false;
  cfg.fixed_eta = 0.7;
  const auto res = lnvb::run_gibbs(model, lnvb::identity_observations(y), cfg);
  EXPECT_EQ(res.eta.rows(), 250);
  EXPECT_TRUE((res.eta.array() == 0.7).all());
  EXPECT_TRUE(res.v[0].allFinite());
  EXPECT_GT(res.v[0].minCoeff(), 0.0);
}

TEST(Gibbs, ConfigValidation) {
  lnvb::GibbsConfig cfg;
  cfg.burn_in = cfg.iterations;
  EXPECT_THROW(cfg.validate(), lnvb::ValidationError);
  cfg = {};
  cfg.mode_iterations = 0;
  EXPECT_THROW(cfg.validate(), lnvb::ValidationError);
}

}  // namespace
