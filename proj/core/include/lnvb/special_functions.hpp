#pragma once

#include <span>

namespace lnvb {

/// Natural log of the modified Bessel function of the second kind, K_order(x).
///
/// Evaluation regimes (|order| is reduced to mu in [-1/2, 1/2] plus an integer):
///   * x <= 2:  Temme's series for K_mu and K_{mu+1};
///   * 2 < x <= 1000: Steed's continued fraction (CF2) for the same pair;
///   * x > 1000: Hankel asymptotic series;
///   * |order| <= 500: forward recurrence in ratio form, which is stable for K;
///   * |order|  > 500: Debye uniform asymptotic expansion with five terms.
/// Everything is carried in log scale, so the result is finite for
/// x in [1e-300, 1e300] and |order| up to 1e4.
///
/// Throws DomainError for x <= 0, non-finite x, or non-finite order.
double log_bessel_k(double order, double x);

/// log(K_order(x) e^x). Free of the -x term, so differences and sums with
/// other O(x) quantities keep full relative precision for large x.
double log_bessel_k_scaled(double order, double x);

/// d/d(order) of log K_order(x), by Richardson-extrapolated central
/// differences. Used for E[log X] under a GIG law.
double log_bessel_k_order_derivative(double order, double x);

/// log(exp(a) + exp(b)) without overflow.
double log_add_exp(double a, double b);

/// log(sum_i exp(v_i)); -inf for an empty span.
double log_sum_exp(std::span<const double> values);

}  // namespace lnvb
