#pragma once

#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lnvb/gig.hpp"
#include "lnvb/rng.hpp"

namespace lnvb {

/// Driving-noise family of a latent component. kGaussian fixes V = h.
enum class NoiseKind { kGaussian, kNig, kTStudent, kGal };

NoiseKind parse_noise_kind(std::string_view name);
std::string to_string(NoiseKind kind);

struct NoiseFamily {
  NoiseKind kind = NoiseKind::kNig;
  /// Rate of the Exp(alpha_eta) prior on eta.
  double alpha_eta = 1.0;
  /// Optional replacement for the exponential prior (log density, unnormalized).
  std::function<double(double)> eta_log_prior;

  bool is_gaussian() const { return kind == NoiseKind::kGaussian; }
  double log_prior(double eta) const;
};

/// GIG form of the mixing law pi(V_i | eta) for constant h_i.
///   NIG: (-1/2, 1/eta, h^2/eta);  t-Student: (-eta/2, 0, eta);  GAL: (h/eta, 2/eta, 0).
/// Throws ModelError for t-Student with h != 1, DomainError for eta <= 0 or
/// the Gaussian family.
GigParams mixing_prior(const NoiseFamily& family, double eta, double h);

/// Moments of q(eta) consumed by the V update.
struct EtaMoments {
  double mean = 1.0;      // E[eta]
  double inv_mean = 1.0;  // E[1/eta]
};

/// (E[p], E[a], E[b]) of the mixing law under q(eta); all three are linear in
/// eta or 1/eta for the supported families.
GigParams expected_mixing_prior(const NoiseFamily& family, double h, const EtaMoments& eta);

/// Sufficient statistics of q(V_i).
struct VMoments {
  double mean = 1.0;      // E[V]
  double inv_mean = 1.0;  // E[1/V]
  double mean_log = 0.0;  // E[log V]
};

/// E_{q(V)}[log pi(V | eta, h)].
double expected_mixing_log_prior(const NoiseFamily& family, double eta, double h, const VMoments& v);

/// Draws Lambda_i = sqrt(V_i) Z_i with V_i from the mixing law. If v_out is
/// non-null it receives the V draws.
std::vector<double> simulate_noise(const NoiseFamily& family, double eta, std::span<const double> h, Rng& rng,
                                   std::vector<double>* v_out = nullptr);

}  // namespace lnvb
