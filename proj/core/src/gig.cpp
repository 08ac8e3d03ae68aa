#include "lnvb/gig.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "lnvb/error.hpp"
#include "lnvb/special_functions.hpp"
#include "lnvb/tabulated_sampler.hpp"

namespace lnvb {
namespace {

constexpr double kLn2 = std::numbers::ln2;

// Relative size of the neglected term when K_p(w) is replaced by its
// leading small-argument form, bounded loosely from above (log scale).
bool small_argument_negligible(double p, double omega) {
  if (p == 0.0 || omega <= 0.0) {
    return omega <= 0.0;
  }
  const double r = std::min(std::abs(p), 1.0);
  const double log_half = std::log(0.5 * omega);
  const double bound = 2.0 * r * log_half + std::log1p(std::abs(log_half)) + 1.0;
  return bound < std::log(1e-15);
}

[[noreturn]] void invalid(const GigParams& g, const char* why) {
  std::ostringstream msg;
  msg << "invalid GIG parameters " << to_string(g) << ": " << why;
  throw DomainError(msg.str());
}

double log_omega(const GigParams& g) { return 0.5 * (std::log(g.a) + std::log(g.b)); }

// log sqrt(b/a), the scale of the standardized law.
double log_scale(const GigParams& g) { return 0.5 * (std::log(g.b) - std::log(g.a)); }

// ---- sampling of the standardized law y^{l-1} exp(-w (y + 1/y) / 2), l >= 0 ----

double standard_mode(double lambda, double omega) {
  if (lambda >= 1.0) {
    return (std::sqrt((lambda - 1.0) * (lambda - 1.0) + omega * omega) + (lambda - 1.0)) / omega;
  }
  return omega / (std::sqrt((1.0 - lambda) * (1.0 - lambda) + omega * omega) + (1.0 - lambda));
}

// Half the log kernel relative to the mode m; free of O(omega) cancellation.
double half_log_kernel_rel(double y, double m, double t, double s) {
  return t * (std::log(y) - std::log(m)) - s * (y - m) * (1.0 - 1.0 / (y * m));
}

double sample_rou_shift(double lambda, double omega, Rng& rng) {
  const double t = 0.5 * (lambda - 1.0);
  const double s = 0.25 * omega;
  const double m = standard_mode(lambda, omega);
  // Extremes of (y - m) sqrt(g(y)) are roots of y^3 + a y^2 + b y + c.
  const double a = -(2.0 * (lambda + 1.0) / omega + m);
  const double b = 2.0 * (lambda - 1.0) * m / omega - 1.0;
  const double c = m;
  const double p = b - a * a / 3.0;
  const double q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c;
  const double phi = std::acos(std::clamp(-q / (2.0 * std::sqrt(-(p * p * p) / 27.0)), -1.0, 1.0));
  const double fak = 2.0 * std::sqrt(-p / 3.0);
  const double y1 = fak * std::cos(phi / 3.0) - a / 3.0;
  const double y2 = fak * std::cos(phi / 3.0 + 4.0 / 3.0 * std::numbers::pi) - a / 3.0;
  const double u_plus = (y1 - m) * std::exp(half_log_kernel_rel(y1, m, t, s));
  const double u_minus = (y2 - m) * std::exp(half_log_kernel_rel(y2, m, t, s));
  while (true) {
    const double u = u_minus + uniform_open(rng) * (u_plus - u_minus);
    const double v = uniform_open(rng);
    const double y = u / v + m;
    if (y > 0.0 && std::log(v) <= half_log_kernel_rel(y, m, t, s)) {
      return y;
    }
  }
}

double sample_rou_noshift(double lambda, double omega, Rng& rng) {
  const double t = 0.5 * (lambda - 1.0);
  const double s = 0.25 * omega;
  const double m = standard_mode(lambda, omega);
  // Maximizer of y sqrt(g(y)).
  const double ym = ((lambda + 1.0) + std::sqrt((lambda + 1.0) * (lambda + 1.0) + omega * omega)) / omega;
  const double um = std::exp(half_log_kernel_rel(ym, m, t, s) + std::log(ym));
  while (true) {
    const double u = um * uniform_open(rng);
    const double v = uniform_open(rng);
    const double y = u / v;
    if (std::log(v) <= half_log_kernel_rel(y, m, t, s)) {
      return y;
    }
  }
}

// Three-piece hat (constant, power, exponential) for 0 <= lambda < 1 and small omega.
double sample_small_omega(double lambda, double omega, Rng& rng) {
  const double m = standard_mode(lambda, omega);
  auto log_kernel = [&](double y) { return (lambda - 1.0) * std::log(y) - 0.5 * omega * (y + 1.0 / y); };
  const double x0 = omega / (1.0 - lambda);
  const double k0 = std::exp(log_kernel(m));
  const double a0 = k0 * x0;
  const double two_over_omega = 2.0 / omega;
  double k1 = 0.0;
  double a1 = 0.0;
  double k2 = 0.0;
  double a2 = 0.0;
  // x0^lambda, and log(2 / (omega x0)) for the power piece.
  const double x0_pow = std::pow(x0, lambda);
  const double span_log = std::log(two_over_omega) - std::log(x0);
  if (x0 >= two_over_omega) {
    k2 = std::pow(x0, lambda - 1.0);
    a2 = k2 * two_over_omega * std::exp(-0.5 * omega * x0);
  } else {
    k1 = std::exp(-omega);
    a1 = lambda == 0.0 ? k1 * span_log : k1 * x0_pow * std::expm1(lambda * span_log) / lambda;
    k2 = std::pow(two_over_omega, lambda - 1.0);
    a2 = k2 * two_over_omega * std::exp(-1.0);
  }
  const double total = a0 + a1 + a2;
  while (true) {
    double v = total * uniform_open(rng);
    double y = 0.0;
    double hat = 0.0;
    if (v <= a0) {
      y = x0 * v / a0;
      hat = k0;
    } else if ((v -= a0) <= a1) {
      if (lambda == 0.0) {
        y = x0 * std::exp(v / k1);
        hat = k1 / y;
      } else {
        y = x0 * std::exp(std::log1p(lambda * v / (k1 * x0_pow)) / lambda);
        hat = k1 * std::pow(y, lambda - 1.0);
      }
    } else {
      v -= a1;
      const double start = std::max(x0, two_over_omega);
      y = -two_over_omega * std::log(std::exp(-0.5 * omega * start) - omega / (2.0 * k2) * v);
      hat = k2 * std::exp(-0.5 * omega * y);
    }
    if (!(y > 0.0) || !std::isfinite(y)) {
      continue;
    }
    const double u = uniform_open(rng) * hat;
    if (std::log(u) <= log_kernel(y)) {
      return y;
    }
  }
}

double sample_standard(double lambda, double omega, Rng& rng) {
  if (lambda > 2.0 || omega > 3.0) {
    return sample_rou_shift(lambda, omega, rng);
  }
  if (lambda >= 1.0 - 2.25 * omega * omega || omega > 0.2) {
    return sample_rou_noshift(lambda, omega, rng);
  }
  return sample_small_omega(lambda, omega, rng);
}

}  // namespace

std::string to_string(const GigParams& g) {
  std::ostringstream out;
  out.precision(17);
  out << "GIG(p=" << g.p << ", a=" << g.a << ", b=" << g.b << ")";
  return out.str();
}

GigRegime gig_classify(const GigParams& g) {
  if (!std::isfinite(g.p) || !std::isfinite(g.a) || !std::isfinite(g.b)) {
    invalid(g, "parameters must be finite");
  }
  if (g.a < 0.0 || g.b < 0.0) {
    invalid(g, "a and b must be nonnegative");
  }
  if (g.a == 0.0 && g.b == 0.0) {
    invalid(g, "a and b cannot both be zero");
  }
  if (g.b == 0.0) {
    if (g.p <= 0.0) {
      invalid(g, "b = 0 requires p > 0");
    }
    return GigRegime::kGamma;
  }
  if (g.a == 0.0) {
    if (g.p >= 0.0) {
      invalid(g, "a = 0 requires p < 0");
    }
    return GigRegime::kInverseGamma;
  }
  const double omega = std::exp(log_omega(g));
  if (g.p != 0.0 && small_argument_negligible(g.p, omega)) {
    return g.p > 0.0 ? GigRegime::kGamma : GigRegime::kInverseGamma;
  }
  return GigRegime::kGeneral;
}

bool gig_is_valid(const GigParams& g) {
  try {
    gig_classify(g);
    return true;
  } catch (const DomainError&) {
    return false;
  }
}

double gig_log_normalizer(const GigParams& g) {
  switch (gig_classify(g)) {
    case GigRegime::kGamma:
      return g.p * (std::log(g.a) - kLn2) - std::lgamma(g.p);
    case GigRegime::kInverseGamma:
      return -g.p * (std::log(g.b) - kLn2) - std::lgamma(-g.p);
    case GigRegime::kGeneral:
      break;
  }
  const double omega = std::exp(log_omega(g));
  return 0.5 * g.p * (std::log(g.a) - std::log(g.b)) - kLn2 - log_bessel_k(g.p, omega);
}

double gig_log_pdf(const GigParams& g, double x) {
  const GigRegime regime = gig_classify(g);
  if (!(x > 0.0) || !std::isfinite(x)) {
    std::ostringstream msg;
    msg << "gig_log_pdf: x must be positive and finite (x=" << x << ")";
    throw DomainError(msg.str());
  }
  const double log_x = std::log(x);
  if (regime == GigRegime::kGeneral) {
    // -(ax + b/x)/2 + sqrt(ab) = -(sqrt(ax) - sqrt(b/x))^2 / 2, paired with the scaled Bessel value.
    const double omega = std::exp(log_omega(g));
    const double gap = std::sqrt(g.a * x) - std::sqrt(g.b / x);
    return 0.5 * g.p * (std::log(g.a) - std::log(g.b)) - kLn2 - log_bessel_k_scaled(g.p, omega) +
           (g.p - 1.0) * log_x - 0.5 * gap * gap;
  }
  return gig_log_normalizer(g) + (g.p - 1.0) * log_x - 0.5 * (g.a * x + g.b / x);
}

bool gig_moment_exists(double order, const GigParams& g) {
  if (!std::isfinite(order)) {
    return false;
  }
  if (order == 0.0) {
    return true;
  }
  if (g.a > 0.0 && g.b > 0.0) {
    return true;
  }
  if (g.b == 0.0) {
    return g.p + order > 0.0;
  }
  return -g.p - order > 0.0;
}

double gig_log_moment(double order, const GigParams& g) {
  GigRegime regime = gig_classify(g);
  if (order == 0.0) {
    return 0.0;
  }
  if (!gig_moment_exists(order, g)) {
    std::ostringstream msg;
    msg << "GIG moment of order " << order << " does not exist for p=" << g.p << " ("
        << to_string(g) << ")";
    throw DomainError(msg.str());
  }
  // The boundary form is only used where its moment is finite.
  if (regime == GigRegime::kGamma && !(g.p + order > 0.0)) {
    regime = GigRegime::kGeneral;
  }
  if (regime == GigRegime::kInverseGamma && !(-g.p - order > 0.0)) {
    regime = GigRegime::kGeneral;
  }
  switch (regime) {
    case GigRegime::kGamma:
      return std::lgamma(g.p + order) - std::lgamma(g.p) + order * (kLn2 - std::log(g.a));
    case GigRegime::kInverseGamma:
      return order * (std::log(g.b) - kLn2) + std::lgamma(-g.p - order) - std::lgamma(-g.p);
    case GigRegime::kGeneral:
      break;
  }
  const double omega = std::exp(log_omega(g));
  return order * log_scale(g) + log_bessel_k_scaled(g.p + order, omega) -
         log_bessel_k_scaled(g.p, omega);
}

double gig_moment(double order, const GigParams& g) { return std::exp(gig_log_moment(order, g)); }

double gig_mean_log(const GigParams& g) {
  switch (gig_classify(g)) {
    case GigRegime::kGamma:
      return boost::math::digamma(g.p) - (std::log(g.a) - kLn2);
    case GigRegime::kInverseGamma:
      return (std::log(g.b) - kLn2) - boost::math::digamma(-g.p);
    case GigRegime::kGeneral:
      break;
  }
  const double omega = std::exp(log_omega(g));
  return log_scale(g) + log_bessel_k_order_derivative(g.p, omega);
}

double gig_entropy(const GigParams& g) {
  // E[a X + b / X]; on the boundary the dominant term has a closed form.
  double quad = 0.0;
  switch (gig_classify(g)) {
    case GigRegime::kGamma:
      quad = 2.0 * g.p + (g.b > 0.0 ? g.b * gig_moment(-1.0, g) : 0.0);
      break;
    case GigRegime::kInverseGamma:
      quad = -2.0 * g.p + (g.a > 0.0 ? g.a * gig_moment(1.0, g) : 0.0);
      break;
    case GigRegime::kGeneral:
      quad = g.a * gig_moment(1.0, g) + g.b * gig_moment(-1.0, g);
      break;
  }
  return -gig_log_normalizer(g) - (g.p - 1.0) * gig_mean_log(g) + 0.5 * quad;
}

double gig_quantile(const GigParams& g, double prob) {
  const double probs[] = {prob};
  return gig_quantiles(g, probs).front();
}

std::vector<double> gig_quantiles(const GigParams& g, std::span<const double> probs) {
  const GigRegime regime = gig_classify(g);
  for (double prob : probs) {
    if (!(prob > 0.0 && prob < 1.0)) {
      throw DomainError("gig_quantile: probability must lie in (0, 1)");
    }
  }
  std::vector<double> out;
  out.reserve(probs.size());
  if (regime == GigRegime::kGamma) {
    for (double prob : probs) {
      out.push_back(boost::math::gamma_p_inv(g.p, prob) * 2.0 / g.a);
    }
    return out;
  }
  if (regime == GigRegime::kInverseGamma) {
    for (double prob : probs) {
      out.push_back(0.5 * g.b / boost::math::gamma_q_inv(-g.p, prob));
    }
    return out;
  }
  const double scale = std::exp(log_scale(g));
  const GigParams standard{g.p, std::exp(log_omega(g)), std::exp(log_omega(g))};
  TabulatedSamplerOptions options;
  options.interpolation_tolerance = 1e-7;
  const TabulatedSampler table([&](double y) { return gig_log_pdf(standard, y); }, 1.0, options);
  for (double prob : probs) {
    out.push_back(scale * table.quantile(prob));
  }
  return out;
}

double gig_sample(const GigParams& g, Rng& rng) {
  switch (gig_classify(g)) {
    case GigRegime::kGamma: {
      std::gamma_distribution<double> gamma(g.p, 1.0);
      return gamma(rng) * 2.0 / g.a;
    }
    case GigRegime::kInverseGamma: {
      std::gamma_distribution<double> gamma(-g.p, 1.0);
      return 0.5 * g.b / gamma(rng);
    }
    case GigRegime::kGeneral:
      break;
  }
  const double omega = std::exp(log_omega(g));
  const double scale = std::exp(log_scale(g));
  if (g.p < 0.0) {
    return scale / sample_standard(-g.p, omega, rng);
  }
  return scale * sample_standard(g.p, omega, rng);
}

}  // namespace lnvb
