#include "lnvb/special_functions.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "lnvb/error.hpp"

namespace lnvb {
namespace {

constexpr double kEps = 1e-16;
constexpr double kPi = std::numbers::pi;
constexpr int kMaxIter = 10000;

// Orders above this use the uniform asymptotic expansion instead of recurrence.
constexpr double kDebyeOrder = 500.0;
// Arguments above this use the large-x Hankel expansion for K_mu, K_{mu+1}.
constexpr double kLargeArgument = 1000.0;

// Coefficients c_k of 1/Gamma(z) = sum_{k>=1} c_k z^k (Abramowitz & Stegun 6.1.34).
// 1/Gamma(1+z) = sum_{k>=1} c_k z^{k-1}.
constexpr std::array<double, 26> kInvGamma = {
    1.0,
    0.5772156649015329,
    -0.6558780715202538,
    -0.0420026350340952,
    0.1665386113822915,
    -0.0421977345555443,
    -0.0096219715278770,
    0.0072189432466630,
    -0.0011651675918591,
    -0.0002152416741149,
    0.0001280502823882,
    -0.0000201348547807,
    -0.0000012504934821,
    0.0000011330272320,
    -0.0000002056338417,
    0.0000000061160950,
    0.0000000050020075,
    -0.0000000011812746,
    0.0000000001043427,
    0.0000000000077823,
    -0.0000000000036968,
    0.0000000000005100,
    -0.0000000000000206,
    -0.0000000000000054,
    0.0000000000000014,
    0.0000000000000001};

struct TemmeGammas {
  double gam1;   // (1/G(1-mu) - 1/G(1+mu)) / (2 mu)
  double gam2;   // (1/G(1-mu) + 1/G(1+mu)) / 2
  double gampl;  // 1/G(1+mu)
  double gammi;  // 1/G(1-mu)
};

TemmeGammas temme_gammas(double mu) {
  // f(z) = 1/G(1+z) = sum_k c_k z^{k-1}; split into even and odd powers of mu.
  double odd_powers = 0.0;   // sum over odd k of c_k mu^{k-1}
  double even_powers = 0.0;  // sum over even k of c_k mu^{k-2}
  double power = 1.0;
  for (std::size_t idx = 0; idx < kInvGamma.size(); idx += 2) {
    odd_powers += kInvGamma[idx] * power;
    if (idx + 1 < kInvGamma.size()) {
      even_powers += kInvGamma[idx + 1] * power;
    }
    power *= mu * mu;
  }
  TemmeGammas g{};
  g.gam1 = -even_powers;
  g.gam2 = odd_powers;
  g.gampl = odd_powers + mu * even_powers;
  g.gammi = odd_powers - mu * even_powers;
  return g;
}

struct KPair {
  double log_k_mu;   // log K_mu(x)
  double ratio;      // K_{mu+1}(x) / K_mu(x)
};

// Temme's series, |mu| <= 1/2, 0 < x <= 2.
KPair temme_series(double mu, double x) {
  const double x2 = 0.5 * x;
  const double pimu = kPi * mu;
  const double fact = std::abs(pimu) < kEps ? 1.0 : pimu / std::sin(pimu);
  double d = -std::log(x2);
  double e = mu * d;
  const double fact2 = std::abs(e) < kEps ? 1.0 : std::sinh(e) / e;
  const TemmeGammas g = temme_gammas(mu);
  double ff = fact * (g.gam1 * std::cosh(e) + g.gam2 * fact2 * d);
  double sum = ff;
  e = std::exp(e);
  double p = 0.5 * e / g.gampl;
  double q = 0.5 / (e * g.gammi);
  double c = 1.0;
  d = x2 * x2;
  double sum1 = p;
  const double mu2 = mu * mu;
  for (int i = 1; i <= kMaxIter; ++i) {
    ff = (i * ff + p + q) / (i * static_cast<double>(i) - mu2);
    c *= d / i;
    p /= (i - mu);
    q /= (i + mu);
    const double del = c * ff;
    sum += del;
    const double del1 = c * (p - i * ff);
    sum1 += del1;
    if (std::abs(del) < std::abs(sum) * kEps) {
      break;
    }
  }
  const double log_k_mu = std::log(sum);
  const double log_k_mu1 = std::log(sum1) + std::log(2.0 / x);
  return {log_k_mu, std::exp(log_k_mu1 - log_k_mu)};
}

// Steed's continued fraction CF2, |mu| <= 1/2, 2 < x <= kLargeArgument.
// Returns the scaled value log(K_mu(x) e^x).
KPair steed_cf2(double mu, double x) {
  double b = 2.0 * (1.0 + x);
  double d = 1.0 / b;
  double h = d;
  double delh = d;
  double q1 = 0.0;
  double q2 = 1.0;
  const double a1 = 0.25 - mu * mu;
  double q = a1;
  double c = a1;
  double a = -a1;
  double s = 1.0 + q * delh;
  for (int i = 2; i <= kMaxIter; ++i) {
    a -= 2.0 * (i - 1);
    c = -a * c / i;
    const double qnew = (q1 - b * q2) / a;
    q1 = q2;
    q2 = qnew;
    q += c * qnew;
    b += 2.0;
    d = 1.0 / (b + a * d);
    delh = (b * d - 1.0) * delh;
    h += delh;
    const double dels = q * delh;
    s += dels;
    if (std::abs(dels / s) < kEps) {
      break;
    }
  }
  h = a1 * h;
  const double log_k_mu = 0.5 * std::log(kPi / (2.0 * x)) - std::log(s);
  return {log_k_mu, (mu + x + 0.5 - h) / x};
}

// log of the Hankel asymptotic series sum_k a_k(nu) / x^k for large x.
double hankel_log_series(double nu, double x) {
  const double four_nu2 = 4.0 * nu * nu;
  double term = 1.0;
  double sum = 1.0;
  for (int k = 1; k < 60; ++k) {
    const double odd = 2.0 * k - 1.0;
    const double next = term * (four_nu2 - odd * odd) / (k * 8.0 * x);
    if (std::abs(next) > std::abs(term)) {
      break;  // asymptotic series started diverging
    }
    term = next;
    sum += term;
    if (std::abs(term) < kEps * std::abs(sum)) {
      break;
    }
  }
  return std::log(sum);
}

// Scaled, as steed_cf2.
KPair hankel_pair(double mu, double x) {
  const double base = 0.5 * std::log(kPi / (2.0 * x));
  const double log_k_mu = base + hankel_log_series(mu, x);
  const double log_k_mu1 = base + hankel_log_series(mu + 1.0, x);
  return {log_k_mu, std::exp(log_k_mu1 - log_k_mu)};
}

// Debye uniform asymptotic expansion of log(K_nu(x) e^x), nu large.
double debye_log_k_scaled(double nu, double x) {
  const double z = x / nu;
  const double s = std::hypot(1.0, z);
  const double t = 1.0 / s;
  // nu * eta - x with eta = s + log(z / (1 + s)), written without cancellation.
  const double eta_minus_z = 1.0 / (s + z) + std::log(z / (1.0 + s));
  const double t2 = t * t;
  const double u1 = t * (3.0 - 5.0 * t2) / 24.0;
  const double u2 = t2 * (81.0 - 462.0 * t2 + 385.0 * t2 * t2) / 1152.0;
  const double u3 =
      t * t2 * (30375.0 - 369603.0 * t2 + 765765.0 * t2 * t2 - 425425.0 * t2 * t2 * t2) / 414720.0;
  const double t4 = t2 * t2;
  const double u4 = t4 *
                    (4465125.0 - 94121676.0 * t2 + 349922430.0 * t4 - 446185740.0 * t4 * t2 +
                     185910725.0 * t4 * t4) /
                    39813120.0;
  const double inv = 1.0 / nu;
  const double series = 1.0 - u1 * inv + u2 * inv * inv - u3 * inv * inv * inv + u4 * inv * inv * inv * inv;
  return 0.5 * std::log(kPi / (2.0 * nu)) - nu * eta_minus_z - 0.5 * std::log(s) + std::log(series);
}

void check_arguments(double order, double x) {
  if (std::isnan(order) || std::isnan(x) || !std::isfinite(order) || !std::isfinite(x) || x <= 0.0) {
    std::ostringstream msg;
    msg << "log_bessel_k: invalid arguments (order=" << order << ", x=" << x
        << "); need finite order and finite x > 0";
    throw DomainError(msg.str());
  }
}

}  // namespace

double log_bessel_k_scaled(double order, double x) {
  check_arguments(order, x);
  const double nu = std::abs(order);
  if (nu > kDebyeOrder) {
    return debye_log_k_scaled(nu, x);
  }
  const double steps = std::nearbyint(nu);
  const double mu = nu - steps;  // in [-1/2, 1/2]
  KPair pair{};
  if (x <= 2.0) {
    pair = temme_series(mu, x);
    pair.log_k_mu += x;
  } else if (x <= kLargeArgument) {
    pair = steed_cf2(mu, x);
  } else {
    pair = hankel_pair(mu, x);
  }
  double log_k = pair.log_k_mu;
  double ratio = pair.ratio;  // K_{mu+k+1} / K_{mu+k}
  const int n = static_cast<int>(steps);
  for (int k = 0; k < n; ++k) {
    log_k += std::log(ratio);
    ratio = 2.0 * (mu + k + 1.0) / x + 1.0 / ratio;
  }
  return log_k;
}

double log_bessel_k(double order, double x) { return log_bessel_k_scaled(order, x) - x; }

double log_bessel_k_order_derivative(double order, double x) {
  check_arguments(order, x);
  // Richardson table over central differences with h0, h0/2, h0/4, h0/8.
  constexpr int kLevels = 4;
  const double h0 = 0.1;
  std::array<double, kLevels> row{};
  for (int level = 0; level < kLevels; ++level) {
    const double h = h0 / static_cast<double>(1 << level);
    row[level] = (log_bessel_k_scaled(order + h, x) - log_bessel_k_scaled(order - h, x)) / (2.0 * h);
  }
  double factor = 4.0;
  for (int col = 1; col < kLevels; ++col) {
    for (int level = kLevels - 1; level >= col; --level) {
      row[level] = (factor * row[level] - row[level - 1]) / (factor - 1.0);
    }
    factor *= 4.0;
  }
  return row[kLevels - 1];
}

double log_add_exp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) {
    return b;
  }
  if (b == -std::numeric_limits<double>::infinity()) {
    return a;
  }
  const double hi = std::max(a, b);
  const double lo = std::min(a, b);
  return hi + std::log1p(std::exp(lo - hi));
}

double log_sum_exp(std::span<const double> values) {
  if (values.empty()) {
    return -std::numeric_limits<double>::infinity();
  }
  const double hi = *std::max_element(values.begin(), values.end());
  if (!std::isfinite(hi)) {
    return hi;
  }
  double acc = 0.0;
  for (const double v : values) {
    acc += std::exp(v - hi);
  }
  return hi + std::log(acc);
}

}  // namespace lnvb
