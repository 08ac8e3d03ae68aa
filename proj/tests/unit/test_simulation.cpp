#include <gtest/gtest.h>

#include <boost/math/distributions/normal.hpp>
#include <cmath>

#include "stats.hpp"
#include "lnvb/error.hpp"
#include "lnvb/simulation.hpp"

namespace {

using lnvb::Ar1ScenarioConfig;

TEST(SimulateAr1, GaussianIncrementsHaveTheStatedLaw) {
  Ar1ScenarioConfig cfg;
  cfg.n = 20000;
  cfg.eta = 0.0;
  lnvb::Rng rng = lnvb::derive_stream(1, 0);
  const auto s = lnvb::simulate_ar1(cfg, rng);
  // Increments x_t - rho x_{t-1} are N(0, sigma_x^2); residuals y - x are N(0, sigma_y^2).
  std::vector<double> inc;
  std::vector<double> res;
  for (Eigen::Index t = 1; t < cfg.n; ++t) {
    inc.push_back(s.x[t] - cfg.rho * s.x[t - 1]);
  }
  for (Eigen::Index t = 0; t < cfg.n; ++t) {
    res.push_back(s.y[t] - s.x[t]);
  }
  const boost::math::normal nx(0.0, cfg.sigma_x);
  const boost::math::normal ny(0.0, cfg.sigma_y);
  EXPECT_GT(lnvb::testing::ks_pvalue(inc, [&](double v) { return boost::math::cdf(nx, v); }), 0.01);
  EXPECT_GT(lnvb::testing::ks_pvalue(res, [&](double v) { return boost::math::cdf(ny, v); }), 0.01);
  EXPECT_TRUE((s.v.array() == 1.0).all());
}

TEST(SimulateAr1, NigIncrementsAreHeavyTailed) {
  Ar1ScenarioConfig cfg;
  cfg.n = 20000;
  cfg.eta = 2.0;
  lnvb::Rng rng = lnvb::derive_stream(2, 0);
  const auto s = lnvb::simulate_ar1(cfg, rng);
  const std::vector<double> noise(s.noise.data(), s.noise.data() + s.noise.size());
  // NIG mixing with E[V] = 1 and Var[V] = eta: kurtosis 3 (1 + eta).
  EXPECT_NEAR(lnvb::testing::variance(noise), 1.0, 0.05);
  EXPECT_GT(lnvb::testing::kurtosis(noise), 6.0);
  EXPECT_NEAR(s.v.mean(), 1.0, 0.05);
}

TEST(SimulateAr1, JumpsShiftTheIncrements) {
  Ar1ScenarioConfig cfg;
  cfg.n = 50;
  cfg.eta = 0.0;
  lnvb::Rng a = lnvb::derive_stream(3, 0);
  lnvb::Rng b = lnvb::derive_stream(3, 0);
  const auto plain = lnvb::simulate_ar1(cfg, a);
  cfg.jumps = {10, 30};
  const auto jumped = lnvb::simulate_ar1(cfg, b);
  const Eigen::VectorXd diff = jumped.noise - plain.noise;
  EXPECT_DOUBLE_EQ(diff[10], 6.0);
  EXPECT_DOUBLE_EQ(diff[30], 6.0);
  EXPECT_DOUBLE_EQ(diff.cwiseAbs().sum(), 12.0);
}

TEST(SimulateAr1, ModelAndDeterminism) {
  Ar1ScenarioConfig cfg;
  lnvb::Rng a = lnvb::derive_stream(4, 0);
  lnvb::Rng b = lnvb::derive_stream(4, 0);
  const auto s1 = lnvb::simulate_ar1(cfg, a);
  const auto s2 = lnvb::simulate_ar1(cfg, b);
  EXPECT_EQ(s1.y, s2.y);
  const auto& m = s1.model;
  ASSERT_EQ(m.components.size(), 1u);
  EXPECT_FALSE(m.components[0].precision.fixed);
  EXPECT_DOUBLE_EQ(m.components[0].precision.rate, 0.5);
  EXPECT_DOUBLE_EQ(m.components[0].noise.alpha_eta, 5.0);
  EXPECT_TRUE(m.components[0].rho.fixed);
  EXPECT_FALSE(m.obs_precision.fixed);
  EXPECT_EQ(s1.obs.rows(), cfg.n);
}

TEST(SimulateAr1, Validation) {
  Ar1ScenarioConfig cfg;
  cfg.rho = 1.0;
  EXPECT_THROW(cfg.validate(), lnvb::ValidationError);
  cfg = {};
  cfg.jumps = {cfg.n};
  EXPECT_THROW(cfg.validate(), lnvb::ValidationError);
  cfg = {};
  cfg.eta = -1.0;
  EXPECT_THROW(cfg.validate(), lnvb::ValidationError);
}

}  // namespace
