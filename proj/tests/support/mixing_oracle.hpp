#pragma once

// Marginal law of V under the NIG mixing prior with eta ~ Exp(alpha).

#include <algorithm>
#include <cmath>
#include <numbers>

#include <boost/math/quadrature/gauss_kronrod.hpp>

namespace lnvb::testing {

/// log Phi(-z), with an asymptotic tail for large z.
inline double log_normal_lower_tail(double z) {
  if (z < 30.0) {
    return std::log(0.5 * std::erfc(z / std::numbers::sqrt2));
  }
  const double z2 = z * z;
  return -0.5 * z2 - std::log(z * std::sqrt(2.0 * std::numbers::pi)) +
         std::log1p(-1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2));
}

/// Inverse-Gaussian CDF with mean mu and shape lambda.
inline double inverse_gaussian_cdf(double v, double mu, double lambda) {
  const double r = std::sqrt(lambda / v);
  const double first = 0.5 * std::erfc(-r * (v / mu - 1.0) / std::numbers::sqrt2);
  const double second = std::exp(2.0 * lambda / mu + log_normal_lower_tail(r * (v / mu + 1.0)));
  return std::min(1.0, first + second);
}

/// P(V <= v) for V | eta ~ IG(h, h^2 / eta) and eta ~ Exp(alpha).
inline double nig_marginal_v_cdf(double v, double h, double alpha) {
  auto f = [&](double eta) {
    if (eta <= 0.0) {
      return (v >= h) ? alpha : 0.0;
    }
    return alpha * std::exp(-alpha * eta) * inverse_gaussian_cdf(v, h, h * h / eta);
  };
  using GK = boost::math::quadrature::gauss_kronrod<double, 61>;
  double err = 0.0;
  const double upper = 60.0 / alpha;
  // Most of the structure sits at small eta; split there.
  const double split = std::min(upper, 0.05 / alpha);
  return GK::integrate(f, 0.0, split, 10, 1e-9, &err) + GK::integrate(f, split, upper, 10, 1e-9, &err);
}

}  // namespace lnvb::testing
