#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

#include "gig_oracle.hpp"
#include "lnvb/error.hpp"
#include "lnvb/gig.hpp"
#include "lnvb/rng.hpp"
#include "stats.hpp"

namespace {

using lnvb::GigParams;
using lnvb::gig_log_pdf;
using lnvb::gig_moment;
namespace t = lnvb::testing;

TEST(GigPdf, IntegratesToOne) {
  const GigParams g{-1.0, 2.0, 3.0};
  const double log_mass = t::log_integral_positive([&](double x) { return gig_log_pdf(g, x); });
  EXPECT_NEAR(std::exp(log_mass), 1.0, 1e-8);
}

TEST(GigPdf, InverseGaussianSpecialCase) {
  const double mu = 1.7;
  const double lambda = 2.3;
  const GigParams g{-0.5, lambda / (mu * mu), lambda};
  for (double x : {0.5, 1.0, 2.0}) {
    const double ig = 0.5 * std::log(lambda / (2.0 * std::numbers::pi * x * x * x)) -
                      lambda * (x - mu) * (x - mu) / (2.0 * mu * mu * x);
    EXPECT_NEAR(gig_log_pdf(g, x), ig, 1e-12) << x;
  }
}

TEST(GigPdf, GammaAndInverseGammaBoundaries) {
  const GigParams gamma{2.5, 3.0, 0.0};  // Gamma(2.5, rate 1.5)
  const GigParams inv_gamma{-1.5, 0.0, 4.0};  // InvGamma(1.5, scale 2)
  for (double x : {0.1, 1.0, 4.0}) {
    const double gamma_ref = 2.5 * std::log(1.5) - std::lgamma(2.5) + 1.5 * std::log(x) - 1.5 * x;
    const double inv_ref = 1.5 * std::log(2.0) - std::lgamma(1.5) - 2.5 * std::log(x) - 2.0 / x;
    EXPECT_NEAR(gig_log_pdf(gamma, x), gamma_ref, 1e-13);
    EXPECT_NEAR(gig_log_pdf(inv_gamma, x), inv_ref, 1e-13);
  }
}

TEST(GigPdf, MatchesQuadratureOracle) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> p(-30.0, 30.0);
  std::uniform_real_distribution<double> log_ab(-20.0, 20.0);
  for (int i = 0; i < 60; ++i) {
    const GigParams g{p(rng), std::exp(log_ab(rng)), std::exp(log_ab(rng))};
    const double x = gig_moment(1.0, g);
    const double oracle = t::gig_oracle_log_pdf(g, x);
    EXPECT_NEAR(std::expm1(gig_log_pdf(g, x) - oracle), 0.0, 1e-10) << lnvb::to_string(g);
  }
}

TEST(GigPdf, ProductIdentityIsConstantInX) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> p(-5.0, 5.0);
  std::uniform_real_distribution<double> log_ab(-3.0, 3.0);
  for (int i = 0; i < 50; ++i) {
    const GigParams g1{p(rng), std::exp(log_ab(rng)), std::exp(log_ab(rng))};
    const GigParams g2{p(rng), std::exp(log_ab(rng)), std::exp(log_ab(rng))};
    const GigParams g12{g1.p + g2.p - 1.0, g1.a + g2.a, g1.b + g2.b};
    auto diff = [&](double x) { return gig_log_pdf(g1, x) + gig_log_pdf(g2, x) - gig_log_pdf(g12, x); };
    const double ref = diff(1.0);
    for (double x : {0.2, 0.7, 3.0, 9.0}) {
      EXPECT_NEAR(diff(x), ref, 1e-12 * std::max(1.0, std::abs(ref)));
    }
  }
}

TEST(GigMoment, ZerothMomentIsOne) {
  for (const GigParams& g : {GigParams{-1, 2, 3}, GigParams{4, 1, 0}, GigParams{-2, 0, 5}}) {
    EXPECT_EQ(gig_moment(0.0, g), 1.0);
  }
}

TEST(GigMoment, MatchesQuadrature) {
  const GigParams g{-1.0, 1.0, 1.0};
  EXPECT_NEAR(gig_moment(-1.0, g) / t::gig_oracle_moment(g, -1.0), 1.0, 1e-10);
  // Prior mixing law with h = 1, eta = 2.
  const GigParams prior{-0.5, 0.5, 0.5};
  EXPECT_NEAR(gig_moment(1.0, prior) / t::gig_oracle_moment(prior, 1.0), 1.0, 1e-10);
  EXPECT_NEAR(gig_moment(-1.0, prior) / t::gig_oracle_moment(prior, -1.0), 1.0, 1e-10);
  EXPECT_NEAR(gig_moment(1.0, prior), 1.0, 1e-12);  // IG(h, h^2/eta) has mean h
}

TEST(GigMoment, BoundaryClosedForms) {
  const GigParams gamma{2.5, 3.0, 0.0};
  EXPECT_NEAR(gig_moment(1.0, gamma), 2.5 / 1.5, 1e-13);
  EXPECT_NEAR(gig_moment(-1.0, gamma), 1.5 / 1.5, 1e-13);
  const GigParams inv_gamma{-3.0, 0.0, 4.0};  // InvGamma(3, scale 2)
  EXPECT_NEAR(gig_moment(1.0, inv_gamma), 2.0 / 2.0, 1e-13);
  EXPECT_NEAR(gig_moment(-1.0, inv_gamma), 3.0 / 2.0, 1e-13);
}

TEST(GigMoment, NonexistentMomentThrows) {
  EXPECT_THROW(gig_moment(1.0, GigParams{-1.0, 0.0, 2.0}), lnvb::DomainError);
  EXPECT_THROW(gig_moment(-2.0, GigParams{1.5, 2.0, 0.0}), lnvb::DomainError);
  try {
    gig_moment(2.0, GigParams{-1.5, 0.0, 1.0});
    FAIL();
  } catch (const lnvb::DomainError& e) {
    EXPECT_NE(std::string(e.what()).find("order 2"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("p=-1.5"), std::string::npos);
  }
}

TEST(GigParamsValidation, RejectsInvalidRegion) {
  EXPECT_THROW(gig_log_pdf(GigParams{1.0, 0.0, 1.0}, 1.0), lnvb::DomainError);
  EXPECT_THROW(gig_log_pdf(GigParams{-1.0, 1.0, 0.0}, 1.0), lnvb::DomainError);
  EXPECT_THROW(gig_log_pdf(GigParams{0.0, 0.0, 0.0}, 1.0), lnvb::DomainError);
  EXPECT_THROW(gig_log_pdf(GigParams{1.0, -1.0, 1.0}, 1.0), lnvb::DomainError);
  EXPECT_THROW(gig_log_pdf(GigParams{1.0, 1.0, 1.0}, -1.0), lnvb::DomainError);
}

TEST(GigMoment, TinyRateWithNegativeOrderBehavesAsInverseGamma) {
  const GigParams near{-2.0, 1e-30, 3.0};
  const GigParams exact{-2.0, 0.0, 3.0};
  EXPECT_EQ(lnvb::gig_classify(near), lnvb::GigRegime::kInverseGamma);
  EXPECT_NEAR(gig_moment(-1.0, near), gig_moment(-1.0, exact), 1e-14);
  EXPECT_NEAR(gig_moment(1.0, near), gig_moment(1.0, exact), 1e-14);
  // E[X^2] does not exist at a = 0 but does for any a > 0; small-argument
  // forms give (b/a) K_0(w) / K_2(w) ~ b^2/2 (-log(w/2) - Euler gamma).
  const double w = std::sqrt(near.a * near.b);
  const double expected = 0.5 * near.b * near.b * (-std::log(0.5 * w) - 0.5772156649015329);
  EXPECT_NEAR(gig_moment(2.0, near) / expected, 1.0, 1e-10);
}

TEST(GigMoment, CauchySchwarzAndReciprocalLaw) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> p(-10.0, 10.0);
  std::uniform_real_distribution<double> log_ab(-8.0, 8.0);
  for (int i = 0; i < 300; ++i) {
    const GigParams g{p(rng), std::exp(log_ab(rng)), std::exp(log_ab(rng))};
    for (double k : {1.0, 2.0}) {
      EXPECT_GE(gig_moment(k, g) * gig_moment(-k, g), 1.0 - 1e-12);
    }
    const GigParams reciprocal{-g.p, g.b, g.a};
    EXPECT_NEAR(gig_moment(-1.0, g) / gig_moment(1.0, reciprocal), 1.0, 1e-13);
  }
}

TEST(GigMeanLog, MatchesQuadrature) {
  for (const GigParams& g : {GigParams{-1.0, 2.0, 3.0}, GigParams{0.3, 0.01, 40.0}, GigParams{7.0, 5.0, 0.2},
                             GigParams{2.0, 3.0, 0.0}, GigParams{-2.5, 0.0, 1.5}}) {
    const double oracle = t::gig_oracle_expectation(g, [](double x) { return std::log(x); });
    EXPECT_NEAR(lnvb::gig_mean_log(g), oracle, 1e-8) << lnvb::to_string(g);
  }
}

TEST(GigEntropy, MatchesQuadrature) {
  for (const GigParams& g : {GigParams{-1.0, 2.0, 3.0}, GigParams{4.0, 1.0, 9.0}, GigParams{1.5, 2.0, 0.0},
                             GigParams{-1.0, 0.0, 2.0}}) {
    const double oracle = t::gig_oracle_expectation(g, [&](double x) { return -gig_log_pdf(g, x); });
    EXPECT_NEAR(lnvb::gig_entropy(g), oracle, 1e-8) << lnvb::to_string(g);
  }
}

TEST(GigQuantile, InvertsCdf) {
  for (const GigParams& g : {GigParams{-1.0, 2.0, 3.0}, GigParams{3.0, 0.5, 2.0}, GigParams{2.0, 1.0, 0.0},
                             GigParams{-1.5, 0.0, 2.0}}) {
    for (double prob : {0.05, 0.25, 0.5, 0.9}) {
      const double q = lnvb::gig_quantile(g, prob);
      const double cdf = t::gig_oracle_expectation(g, [&](double x) { return x <= q ? 1.0 : 0.0; });
      EXPECT_NEAR(cdf, prob, 2e-5) << lnvb::to_string(g) << " " << prob;
    }
    EXPECT_LT(lnvb::gig_quantile(g, 0.25), lnvb::gig_quantile(g, 0.5));
    EXPECT_LT(lnvb::gig_quantile(g, 0.5), lnvb::gig_quantile(g, 0.75));
  }
}

double sample_mean_z(const GigParams& g, int n, std::uint64_t seed) {
  lnvb::Rng rng(seed);
  double s = 0.0;
  double s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = lnvb::gig_sample(g, rng);
    s += x;
    s2 += x * x;
  }
  const double m = s / n;
  const double var = s2 / n - m * m;
  return (m - gig_moment(1.0, g)) / std::sqrt(var / n);
}

TEST(GigSample, MeanWithinThreeStandardErrors) {
  EXPECT_LT(std::abs(sample_mean_z(GigParams{-1.0, 2.0, 2.0}, 1000000, 1)), 3.0);
}

TEST(GigSample, EveryAlgorithmBranch) {
  // mode-shift ROU, plain ROU, small-omega hat, negative p, boundaries, extreme scale.
  const std::vector<GigParams> cases = {
      {5.0, 2.0, 2.0},  {0.5, 4.0, 9.0},    {1.5, 0.01, 0.01}, {0.2, 0.01, 0.01}, {0.0, 0.002, 0.03},
      {-0.7, 0.1, 0.2}, {-1.0, 1e-6, 50.0}, {-3.0, 0.0, 2.0},  {2.0, 3.0, 0.0},   {1.0, 1e8, 1e8},
      {-40.0, 3.0, 7.0}, {0.9, 1e-4, 1e-4}};
  std::uint64_t seed = 100;
  for (const auto& g : cases) {
    EXPECT_LT(std::abs(sample_mean_z(g, 200000, seed++)), 4.0) << lnvb::to_string(g);
  }
}

TEST(GigSample, ExponentialSpecialCasePassesKs) {
  const double alpha = 2.5;
  const GigParams g{1.0, 2.0 * alpha, 0.0};
  lnvb::Rng rng(77);
  std::vector<double> draws(20000);
  for (double& d : draws) {
    d = lnvb::gig_sample(g, rng);
  }
  EXPECT_GT(t::ks_pvalue(draws, [&](double x) { return -std::expm1(-alpha * x); }), 0.01);
}

TEST(GigSample, GeneralCasePassesKsAgainstQuadratureCdf) {
  const GigParams g{-1.0, 2.0, 3.0};
  lnvb::Rng rng(5);
  std::vector<double> draws(5000);
  for (double& d : draws) {
    d = lnvb::gig_sample(g, rng);
  }
  // Tabulate the quadrature CDF on a fine grid to keep the test fast.
  std::vector<double> grid;
  std::vector<double> values;
  for (double q = 0.01; q < 30.0; q *= 1.01) {
    grid.push_back(q);
  }
  double acc = 0.0;
  double prev = 0.0;
  for (double q : grid) {
    using GK = boost::math::quadrature::gauss_kronrod<double, 31>;
    acc += GK::integrate([&](double x) { return std::exp(gig_log_pdf(g, x)); }, prev, q);
    values.push_back(acc);
    prev = q;
  }
  auto interp = [&](double x) {
    auto it = std::lower_bound(grid.begin(), grid.end(), x);
    if (it == grid.begin()) return values.front() * x / grid.front();
    if (it == grid.end()) return 1.0;
    const std::size_t j = static_cast<std::size_t>(it - grid.begin());
    const double w = (x - grid[j - 1]) / (grid[j] - grid[j - 1]);
    return values[j - 1] + w * (values[j] - values[j - 1]);
  };
  EXPECT_GT(t::ks_pvalue(draws, interp), 0.01);
}

TEST(GigSample, DeterministicForFixedSeed) {
  const GigParams g{-1.0, 2.0, 2.0};
  lnvb::Rng a(42);
  lnvb::Rng b(42);
  for (int i = 0; i < 100; ++i) {
    EXPECT_EQ(lnvb::gig_sample(g, a), lnvb::gig_sample(g, b));
  }
}

}  // namespace
