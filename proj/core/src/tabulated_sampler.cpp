#include "lnvb/tabulated_sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "lnvb/error.hpp"
#include "lnvb/special_functions.hpp"

namespace lnvb {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kMaxLogX = 700.0;
constexpr double kMaxStep = 2.0;
constexpr std::size_t kMaxNodes = 200000;

// log((e^y - 1) / y)
double log_exprel(double y) {
  if (std::abs(y) < 1e-8) {
    return 0.5 * y;
  }
  if (y > 0.0) {
    return y + std::log(-std::expm1(-y)) - std::log(y);
  }
  return std::log(-std::expm1(y)) - std::log(-y);
}

// (e^y - 1) / y
double exprel(double y) {
  if (std::abs(y) < 1e-8) {
    return 1.0 + 0.5 * y;
  }
  return std::expm1(y) / y;
}

// integral_0^w t e^{s t} dt
double first_moment_integral(double s, double w) {
  const double y = s * w;
  if (std::abs(y) < 1e-4) {
    return w * w * (0.5 + y / 3.0 + y * y / 8.0);
  }
  return (w * std::exp(y) - w * exprel(y)) / s;
}

class Evaluator {
 public:
  explicit Evaluator(const TabulatedSampler::LogDensity& f) : f_(f) {}
  double operator()(double u) const {
    const double v = f_(std::exp(u));
    if (std::isnan(v)) {
      return kNegInf;
    }
    return v + u;
  }

 private:
  const TabulatedSampler::LogDensity& f_;
};

double golden_section_max(const Evaluator& g, double lo, double hi) {
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = hi - inv_phi * (hi - lo);
  double x2 = lo + inv_phi * (hi - lo);
  double f1 = g(x1);
  double f2 = g(x2);
  for (int iter = 0; iter < 200 && hi - lo > 1e-11 * (1.0 + std::abs(lo)); ++iter) {
    if (f1 < f2) {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + inv_phi * (hi - lo);
      f2 = g(x2);
    } else {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - inv_phi * (hi - lo);
      f1 = g(x1);
    }
  }
  return 0.5 * (lo + hi);
}

// Distance from the mode at which g has dropped by `drop`, searching in `dir`.
double half_width(const Evaluator& g, double mode, double g_mode, double dir, double drop) {
  double inner = 0.0;
  double outer = 1e-7;
  while (outer < 2.0 * kMaxLogX && g(mode + dir * outer) > g_mode - drop) {
    inner = outer;
    outer *= 2.0;
  }
  if (outer >= 2.0 * kMaxLogX) {
    return outer;
  }
  for (int iter = 0; iter < 60; ++iter) {
    const double mid = 0.5 * (inner + outer);
    if (g(mode + dir * mid) > g_mode - drop) {
      inner = mid;
    } else {
      outer = mid;
    }
  }
  return 0.5 * (inner + outer);
}

}  // namespace

TabulatedSampler::TabulatedSampler(const LogDensity& log_density, double support_hint,
                                   const TabulatedSamplerOptions& options) {
  const Evaluator g(log_density);
  const double lo = std::log(options.search_lower);
  const double hi = std::log(options.search_upper);

  double best_u = std::numeric_limits<double>::quiet_NaN();
  double best_g = kNegInf;
  auto consider = [&](double u) {
    const double v = g(u);
    if (v > best_g) {
      best_g = v;
      best_u = u;
    }
  };
  for (double u = lo; u <= hi; u += 0.5) {
    consider(u);
  }
  if (support_hint > 0.0 && std::isfinite(support_hint)) {
    consider(std::clamp(std::log(support_hint), lo, hi));
  }
  if (!std::isfinite(best_g)) {
    std::ostringstream msg;
    msg << "tabulated sampler: no finite density mass located in [" << options.search_lower << ", "
        << options.search_upper << "]";
    throw NumericalFailure(msg.str());
  }
  mode_u_ = golden_section_max(g, best_u - 0.5, best_u + 0.5);
  double g_mode = g(mode_u_);
  if (!(g_mode >= best_g)) {
    mode_u_ = best_u;
    g_mode = best_g;
  }

  const double width = std::min(half_width(g, mode_u_, g_mode, -1.0, 0.5),
                                half_width(g, mode_u_, g_mode, 1.0, 0.5));
  const double tol = options.interpolation_tolerance;
  const double initial_step = std::min(kMaxStep, width * std::sqrt(8.0 * tol));

  // March outwards from the mode on each side with curvature-controlled steps.
  auto march = [&](double dir, std::vector<double>& us, std::vector<double>& gs) {
    double u_prev = mode_u_;
    double g_prev = g_mode;
    double step = initial_step;
    double slope_prev = std::numeric_limits<double>::quiet_NaN();
    double h_prev = 0.0;
    double peak = g_mode;
    while (true) {
      double u_next = u_prev + dir * step;
      bool last = false;
      if (std::abs(u_next) >= kMaxLogX) {
        u_next = dir * kMaxLogX;
        last = true;
      }
      const double g_next = g(u_next);
      us.push_back(u_next);
      gs.push_back(g_next);
      peak = std::max(peak, g_next);
      if (last || !std::isfinite(g_next) || g_next < peak - options.tail_drop) {
        break;
      }
      const double h = std::abs(u_next - u_prev);
      const double slope = (g_next - g_prev) / h;
      double next_step = std::min(2.0 * step, kMaxStep);
      if (!std::isnan(slope_prev)) {
        const double curvature = std::abs(slope - slope_prev) / (0.5 * (h + h_prev));
        if (curvature > 0.0) {
          next_step = std::min(next_step, std::sqrt(8.0 * tol / curvature));
        }
      }
      // Keep each segment's log-density change bounded for accurate inversion.
      if (std::abs(slope) > 0.0) {
        next_step = std::min(next_step, 1.0 / std::abs(slope));
      }
      next_step = std::max({next_step, 0.25 * step, 0.05 * initial_step});
      if (us.size() > kMaxNodes) {
        throw NumericalFailure("tabulated sampler: grid exceeded the node limit (log density too rough)");
      }
      slope_prev = slope;
      h_prev = h;
      step = next_step;
      u_prev = u_next;
      g_prev = g_next;
    }
  };
  std::vector<double> left_u;
  std::vector<double> left_g;
  std::vector<double> right_u;
  std::vector<double> right_g;
  march(-1.0, left_u, left_g);
  march(1.0, right_u, right_g);

  nodes_.reserve(left_u.size() + right_u.size() + 1);
  log_value_.reserve(nodes_.capacity());
  for (std::size_t i = left_u.size(); i-- > 0;) {
    nodes_.push_back(left_u[i]);
    log_value_.push_back(left_g[i]);
  }
  nodes_.push_back(mode_u_);
  log_value_.push_back(g_mode);
  nodes_.insert(nodes_.end(), right_u.begin(), right_u.end());
  log_value_.insert(log_value_.end(), right_g.begin(), right_g.end());
  finalize();
}

TabulatedSampler TabulatedSampler::point_mass(double value) {
  if (!(value > 0.0) || !std::isfinite(value)) {
    throw DomainError("tabulated sampler: point mass must be positive and finite");
  }
  TabulatedSampler s;
  s.nodes_ = {std::log(value)};
  s.log_value_ = {0.0};
  s.cumulative_ = {1.0};
  s.mode_u_ = s.nodes_[0];
  s.mean_ = value;
  s.variance_ = 0.0;
  s.log_normalizer_ = 0.0;
  return s;
}

void TabulatedSampler::finalize() {
  double g_max = kNegInf;
  for (const double v : log_value_) {
    g_max = std::max(g_max, v);
  }
  for (double& v : log_value_) {
    v -= g_max;
  }
  // Non-finite end values (zero density) become a very steep but finite drop.
  for (double& v : log_value_) {
    if (!std::isfinite(v)) {
      v = -745.0;
    }
  }
  cumulative_.assign(nodes_.size(), 0.0);
  double total = 0.0;
  for (std::size_t j = 0; j + 1 < nodes_.size(); ++j) {
    const double w = nodes_[j + 1] - nodes_[j];
    const double s = (log_value_[j + 1] - log_value_[j]) / w;
    total += std::exp(log_value_[j]) * w * exprel(s * w);
    cumulative_[j + 1] = total;
  }
  if (!(total > 0.0) || !std::isfinite(total)) {
    throw NumericalFailure("tabulated sampler: total mass is not positive and finite");
  }
  for (double& c : cumulative_) {
    c /= total;
  }
  log_normalizer_ = g_max + std::log(total);
  mean_ = moment(1.0);
  variance_ = std::max(0.0, moment(2.0) - mean_ * mean_);
}

double TabulatedSampler::moment(double k) const {
  if (is_point_mass()) {
    return std::exp(k * nodes_[0]);
  }
  std::vector<double> log_terms_k;
  std::vector<double> log_terms_0;
  log_terms_k.reserve(nodes_.size());
  log_terms_0.reserve(nodes_.size());
  for (std::size_t j = 0; j + 1 < nodes_.size(); ++j) {
    const double w = nodes_[j + 1] - nodes_[j];
    const double s = (log_value_[j + 1] - log_value_[j]) / w;
    log_terms_0.push_back(log_value_[j] + std::log(w) + log_exprel(s * w));
    log_terms_k.push_back(log_value_[j] + k * nodes_[j] + std::log(w) + log_exprel((s + k) * w));
  }
  return std::exp(log_sum_exp(log_terms_k) - log_sum_exp(log_terms_0));
}

double TabulatedSampler::mean_log() const {
  if (is_point_mass()) {
    return nodes_[0];
  }
  double num = 0.0;
  double den = 0.0;
  for (std::size_t j = 0; j + 1 < nodes_.size(); ++j) {
    const double w = nodes_[j + 1] - nodes_[j];
    const double s = (log_value_[j + 1] - log_value_[j]) / w;
    const double scale = std::exp(log_value_[j]);
    const double mass = scale * w * exprel(s * w);
    num += nodes_[j] * mass + scale * first_moment_integral(s, w);
    den += mass;
  }
  return num / den;
}

double TabulatedSampler::mode() const { return std::exp(mode_u_); }

double TabulatedSampler::invert(double prob) const {
  if (is_point_mass()) {
    return std::exp(nodes_[0]);
  }
  prob = std::clamp(prob, 0.0, 1.0);
  auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), prob);
  std::size_t j = static_cast<std::size_t>(std::distance(cumulative_.begin(), it));
  j = std::clamp<std::size_t>(j, 1, nodes_.size() - 1) - 1;
  const double w = nodes_[j + 1] - nodes_[j];
  const double s = (log_value_[j + 1] - log_value_[j]) / w;
  // Mass from the segment start to the target, in units of exp(log_value_[j]).
  const double seg_mass = cumulative_[j + 1] - cumulative_[j];
  const double frac = seg_mass > 0.0 ? (prob - cumulative_[j]) / seg_mass : 0.0;
  const double r = std::clamp(frac, 0.0, 1.0) * w * exprel(s * w);
  double t = 0.0;
  if (std::abs(s * w) < 1e-10) {
    t = r;
  } else {
    t = std::log1p(r * s) / s;
  }
  t = std::clamp(t, 0.0, w);
  return std::exp(nodes_[j] + t);
}

double TabulatedSampler::quantile(double prob) const {
  if (!(prob > 0.0 && prob < 1.0)) {
    throw DomainError("tabulated sampler: quantile probability must lie in (0, 1)");
  }
  return invert(prob);
}

double TabulatedSampler::cdf(double x) const {
  if (x <= 0.0) {
    return 0.0;
  }
  const double u = std::log(x);
  if (is_point_mass()) {
    return u >= nodes_[0] ? 1.0 : 0.0;
  }
  if (u <= nodes_.front()) {
    return 0.0;
  }
  if (u >= nodes_.back()) {
    return 1.0;
  }
  auto it = std::upper_bound(nodes_.begin(), nodes_.end(), u);
  const std::size_t j = static_cast<std::size_t>(std::distance(nodes_.begin(), it)) - 1;
  const double w = nodes_[j + 1] - nodes_[j];
  const double s = (log_value_[j + 1] - log_value_[j]) / w;
  const double t = u - nodes_[j];
  const double part = t * exprel(s * t);
  const double whole = w * exprel(s * w);
  return cumulative_[j] + (cumulative_[j + 1] - cumulative_[j]) * part / whole;
}

double TabulatedSampler::sample(Rng& rng) const { return invert(uniform_open(rng)); }

void TabulatedSampler::sample_stratified(Rng& rng, std::span<double> out) const {
  const double m = static_cast<double>(out.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = invert((static_cast<double>(i) + uniform_open(rng)) / m);
  }
}

}  // namespace lnvb
