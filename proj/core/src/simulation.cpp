#include "lnvb/simulation.hpp"

#include <cmath>
#include <string>

#include "lnvb/error.hpp"

namespace lnvb {

void Ar1ScenarioConfig::validate() const {
  if (n < 2) {
    throw ValidationError("AR1 scenario needs n >= 2");
  }
  if (!(std::abs(rho) < 1.0)) {
    throw ValidationError("AR1 scenario needs |rho| < 1");
  }
  if (!(sigma_x > 0.0) || !(sigma_y > 0.0)) {
    throw ValidationError("AR1 scenario needs positive sigma_x and sigma_y");
  }
  if (!(eta >= 0.0)) {
    throw ValidationError("AR1 scenario needs eta >= 0");
  }
  if (!(alpha_eta > 0.0) || !(precision_shape > 0.0) || !(precision_rate > 0.0)) {
    throw ValidationError("AR1 scenario priors need positive parameters");
  }
  if (noise == NoiseKind::kGaussian && eta > 0.0) {
    throw ValidationError("Gaussian noise takes eta = 0");
  }
  for (const auto j : jumps) {
    if (j < 0 || j >= n) {
      throw ValidationError("jump position " + std::to_string(j) + " outside [0, n)");
    }
  }
}

ModelSpec ar1_scenario_model(const Ar1ScenarioConfig& config) {
  config.validate();
  ModelSpec m;
  LatentComponent comp = build_ar1(config.n, config.rho);
  comp.name = "ar1";
  comp.noise = {config.noise == NoiseKind::kGaussian ? NoiseKind::kNig : config.noise, config.alpha_eta, {}};
  comp.precision = {!config.learn_tau_x, 1.0 / (config.sigma_x * config.sigma_x), config.precision_shape,
                    config.precision_rate};
  comp.rho.fixed = !config.learn_rho;
  comp.rho.value = config.rho;
  m.components.push_back(std::move(comp));
  m.obs_precision = {!config.learn_tau_y, 1.0 / (config.sigma_y * config.sigma_y), config.precision_shape,
                     config.precision_rate};
  return m;
}

Ar1Scenario simulate_ar1(const Ar1ScenarioConfig& config, Rng& rng) {
  Ar1Scenario out;
  out.model = ar1_scenario_model(config);
  const Eigen::Index n = config.n;
  const std::vector<double> h(static_cast<std::size_t>(n), 1.0);
  out.noise.resize(n);
  out.v = Eigen::VectorXd::Ones(n);
  if (config.eta > 0.0) {
    std::vector<double> v;
    const auto lambda = simulate_noise({config.noise, config.alpha_eta, {}}, config.eta, h, rng, &v);
    for (Eigen::Index i = 0; i < n; ++i) {
      out.noise[i] = lambda[static_cast<std::size_t>(i)];
      out.v[i] = v[static_cast<std::size_t>(i)];
    }
  } else {
    for (Eigen::Index i = 0; i < n; ++i) {
      out.noise[i] = standard_normal(rng);
    }
  }
  for (const auto j : config.jumps) {
    out.noise[j] += config.jump_size;
  }
  const double sx = config.sigma_x;
  out.x.resize(n);
  out.x[0] = sx * out.noise[0] / std::sqrt(1.0 - config.rho * config.rho);
  for (Eigen::Index i = 1; i < n; ++i) {
    out.x[i] = config.rho * out.x[i - 1] + sx * out.noise[i];
  }
  out.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    out.y[i] = out.x[i] + config.sigma_y * standard_normal(rng);
  }
  out.obs = identity_observations(out.y);
  return out;
}

}  // namespace lnvb
