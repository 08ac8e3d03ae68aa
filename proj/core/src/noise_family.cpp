#include "lnvb/noise_family.hpp"

#include <cmath>
#include <sstream>

#include "lnvb/error.hpp"

namespace lnvb {

NoiseKind parse_noise_kind(std::string_view name) {
  if (name == "gaussian") return NoiseKind::kGaussian;
  if (name == "nig") return NoiseKind::kNig;
  if (name == "tstudent" || name == "t") return NoiseKind::kTStudent;
  if (name == "gal") return NoiseKind::kGal;
  throw ValidationError("unknown noise kind '" + std::string(name) + "' (expected gaussian|nig|tstudent|gal)");
}

std::string to_string(NoiseKind kind) {
  switch (kind) {
    case NoiseKind::kGaussian:
      return "gaussian";
    case NoiseKind::kNig:
      return "nig";
    case NoiseKind::kTStudent:
      return "tstudent";
    case NoiseKind::kGal:
      return "gal";
  }
  return "unknown";
}

double NoiseFamily::log_prior(double eta) const {
  if (!(eta > 0.0)) {
    return -INFINITY;
  }
  if (eta_log_prior) {
    return eta_log_prior(eta);
  }
  return std::log(alpha_eta) - alpha_eta * eta;
}

GigParams mixing_prior(const NoiseFamily& family, double eta, double h) {
  if (!(eta > 0.0) || !std::isfinite(eta)) {
    std::ostringstream msg;
    msg << "mixing_prior: eta must be positive and finite (eta=" << eta << ")";
    throw DomainError(msg.str());
  }
  if (!(h > 0.0)) {
    throw DomainError("mixing_prior: h must be positive");
  }
  switch (family.kind) {
    case NoiseKind::kNig:
      return {-0.5, 1.0 / eta, h * h / eta};
    case NoiseKind::kTStudent:
      if (h != 1.0) {
        throw ModelError("t-Student noise requires h = 1 (discrete-space components only)");
      }
      return {-0.5 * eta, 0.0, eta};
    case NoiseKind::kGal:
      return {h / eta, 2.0 / eta, 0.0};
    case NoiseKind::kGaussian:
      break;
  }
  throw DomainError("mixing_prior: the Gaussian family has no mixing law");
}

GigParams expected_mixing_prior(const NoiseFamily& family, double h, const EtaMoments& eta) {
  switch (family.kind) {
    case NoiseKind::kNig:
      return {-0.5, eta.inv_mean, h * h * eta.inv_mean};
    case NoiseKind::kTStudent:
      if (h != 1.0) {
        throw ModelError("t-Student noise requires h = 1 (discrete-space components only)");
      }
      return {-0.5 * eta.mean, 0.0, eta.mean};
    case NoiseKind::kGal:
      return {h * eta.inv_mean, 2.0 * eta.inv_mean, 0.0};
    case NoiseKind::kGaussian:
      break;
  }
  throw DomainError("expected_mixing_prior: the Gaussian family has no mixing law");
}

double expected_mixing_log_prior(const NoiseFamily& family, double eta, double h, const VMoments& v) {
  const GigParams g = mixing_prior(family, eta, h);
  double value = gig_log_normalizer(g) + (g.p - 1.0) * v.mean_log;
  if (g.a > 0.0) {
    value -= 0.5 * g.a * v.mean;
  }
  if (g.b > 0.0) {
    value -= 0.5 * g.b * v.inv_mean;
  }
  return value;
}

std::vector<double> simulate_noise(const NoiseFamily& family, double eta, std::span<const double> h, Rng& rng,
                                   std::vector<double>* v_out) {
  std::vector<double> out(h.size());
  if (v_out != nullptr) {
    v_out->resize(h.size());
  }
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double v = family.is_gaussian() ? h[i] : gig_sample(mixing_prior(family, eta, h[i]), rng);
    if (v_out != nullptr) {
      (*v_out)[i] = v;
    }
    out[i] = std::sqrt(v) * standard_normal(rng);
  }
  return out;
}

}  // namespace lnvb
