#pragma once

#include <functional>
#include <span>
#include <vector>

#include "lnvb/rng.hpp"

namespace lnvb {

struct TabulatedSamplerOptions {
  /// Target bound on the linear-interpolation error of the log density
  /// (in log units) within each segment.
  double interpolation_tolerance = 1e-5;
  /// Tails are tabulated until the log density falls this far below its peak.
  double tail_drop = 36.0;
  /// Range scanned for the mode.
  double search_lower = 1e-12;
  double search_upper = 1e12;
};

/// Inverse-CDF sampler for an unnormalized log density on (0, inf).
///
/// Works in u = log x with g(u) = log_density(e^u) + u, tabulated on an
/// adaptive grid and interpolated linearly, so the density is exp-linear on
/// every segment. Masses, quantiles and moments are then closed form.
class TabulatedSampler {
 public:
  using LogDensity = std::function<double(double)>;

  TabulatedSampler(const LogDensity& log_density, double support_hint,
                   const TabulatedSamplerOptions& options = {});

  /// A degenerate sampler concentrated at one point.
  static TabulatedSampler point_mass(double value);

  double sample(Rng& rng) const;
  /// Fills out with one draw from each of out.size() equal-probability strata.
  void sample_stratified(Rng& rng, std::span<double> out) const;

  double quantile(double prob) const;
  double cdf(double x) const;

  /// E[X^k] under the tabulated law.
  double moment(double k) const;
  double mean() const { return mean_; }
  double variance() const { return variance_; }
  /// E[log X].
  double mean_log() const;
  /// log of the integral of exp(log_density) over (0, inf).
  double log_normalizer() const { return log_normalizer_; }
  double mode() const;
  bool is_point_mass() const { return nodes_.size() == 1; }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  TabulatedSampler() = default;
  void finalize();
  double invert(double prob) const;

  std::vector<double> nodes_;      // u grid
  std::vector<double> log_value_;  // g(u) - g_max
  std::vector<double> cumulative_; // normalized mass up to node j
  double log_normalizer_ = 0.0;
  double mean_ = 0.0;
  double variance_ = 0.0;
  double mode_u_ = 0.0;
};

}  // namespace lnvb
