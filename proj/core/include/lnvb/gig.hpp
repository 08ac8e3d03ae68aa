#pragma once

#include <span>
#include <string>
#include <vector>

#include "lnvb/rng.hpp"

namespace lnvb {

/// Generalized inverse Gaussian law with density
///   (a/b)^{p/2} / (2 K_p(sqrt(ab))) x^{p-1} exp(-(a x + b / x) / 2),  x > 0.
/// Boundary cases: b = 0 (p > 0) is Gamma(p, rate a/2); a = 0 (p < 0) is
/// InverseGamma(-p, scale b/2).
struct GigParams {
  double p = 0.0;
  double a = 0.0;
  double b = 0.0;

  friend bool operator==(const GigParams&, const GigParams&) = default;
};

enum class GigRegime {
  kGeneral,       // a > 0, b > 0
  kGamma,         // b = 0 or sqrt(ab) negligible with p > 0
  kInverseGamma,  // a = 0 or sqrt(ab) negligible with p < 0
};

/// Throws DomainError unless params lie in the valid region. Returns the
/// evaluation regime. sqrt(ab) counts as negligible when replacing K_p by its
/// small-argument leading term changes it by less than ~1e-14 relative.
GigRegime gig_classify(const GigParams& params);

/// True when params are valid (no throw).
bool gig_is_valid(const GigParams& params);

std::string to_string(const GigParams& params);

/// log of the normalizing constant C in pdf = C x^{p-1} exp(-(ax + b/x)/2).
double gig_log_normalizer(const GigParams& params);

double gig_log_pdf(const GigParams& params, double x);

/// True when E[X^order] is finite.
bool gig_moment_exists(double order, const GigParams& params);

/// log E[X^order]. Throws DomainError if the moment does not exist.
double gig_log_moment(double order, const GigParams& params);

/// E[X^order].
double gig_moment(double order, const GigParams& params);

/// E[log X].
double gig_mean_log(const GigParams& params);

/// Differential entropy -E[log pdf(X)].
double gig_entropy(const GigParams& params);

/// Quantile function, prob in (0, 1).
double gig_quantile(const GigParams& params, double prob);
/// Several quantiles sharing one tabulation.
std::vector<double> gig_quantiles(const GigParams& params, std::span<const double> probs);

/// One draw. Ratio-of-uniforms (with or without mode shift) in the general
/// case, the Hörmann–Leydold hat for small omega and p < 1, Gamma or
/// inverse-Gamma draws on the boundary.
double gig_sample(const GigParams& params, Rng& rng);

}  // namespace lnvb
