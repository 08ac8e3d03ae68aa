#pragma once

#include <Eigen/Core>
#include <vector>

#include "lnvb/model_library.hpp"
#include "lnvb/noise_family.hpp"
#include "lnvb/rng.hpp"

namespace lnvb {

/// AR1 latent process observed with Gaussian noise:
///   x_1 = L_1 / sqrt(tau_x (1 - rho^2)),  x_t = rho x_{t-1} + L_t / sqrt(tau_x),
///   y_t = x_t + e_t / sqrt(tau_y),  tau_x = 1 / sigma_x^2, tau_y = 1 / sigma_y^2,
/// with L from the chosen noise family at eta (Gaussian when eta = 0).
struct Ar1ScenarioConfig {
  Eigen::Index n = 100;
  double eta = 1.0;
  double rho = 0.9;
  double sigma_x = 2.0;
  double sigma_y = 1.0;
  NoiseKind noise = NoiseKind::kNig;
  /// Increments (0-based rows of D) shifted by jump_size noise sd.
  std::vector<Eigen::Index> jumps;
  double jump_size = 6.0;

  // Fitted model.
  double alpha_eta = 5.0;
  double precision_shape = 1.0;
  double precision_rate = 0.5;
  bool learn_tau_x = true;
  bool learn_tau_y = true;
  bool learn_rho = false;

  void validate() const;
};

struct Ar1Scenario {
  Eigen::VectorXd x;
  Eigen::VectorXd y;
  /// Driving noise L and its mixing variables (ones for Gaussian noise).
  Eigen::VectorXd noise;
  Eigen::VectorXd v;
  ModelSpec model;
  Observations obs;
};

Ar1Scenario simulate_ar1(const Ar1ScenarioConfig& config, Rng& rng);

/// The model fitted to an Ar1ScenarioConfig (independent of the data).
ModelSpec ar1_scenario_model(const Ar1ScenarioConfig& config);

}  // namespace lnvb
