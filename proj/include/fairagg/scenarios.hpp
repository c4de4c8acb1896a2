#pragma once

// Canonical hand-checkable scalar-feature fixtures:
//   SIM-A — Simpson's paradox (beta_s = 0, cov[alpha, mu] > 0)
//   SIM-B — equal means, heterogeneous beta and sigma^2
//   SIM-C — heterogeneous sigma^2 for PTF
//   SIM-D — two feature blocks (X without interactions, V with them)

#include "fairagg/estimators.hpp"
#include "fairagg/model.hpp"

namespace fairagg::scenarios {

inline BankModel scalar_bank(double alpha, double beta, double mu, double sigma2,
                             double noise_var = 0.25) {
  BankModel b;
  b.intercept = alpha;
  b.slope = Vector::Constant(1, beta);
  b.feature_mean = Vector::Constant(1, mu);
  b.feature_cov = Matrix::Constant(1, 1, sigma2);
  b.noise_var = noise_var;
  return b;
}

inline BankPopulation sim_a() {
  BankPopulation pop;
  pop.banks = {scalar_bank(0.0, 0.0, 0.0, 1.0), scalar_bank(1.0, 0.0, 2.0, 1.0)};
  pop.weights = Vector::Constant(2, 0.5);
  return pop;
}

inline BankPopulation sim_b() {
  BankPopulation pop;
  pop.banks = {scalar_bank(0.0, 1.0, 0.0, 1.0), scalar_bank(0.0, 3.0, 0.0, 3.0)};
  pop.weights = Vector::Constant(2, 0.5);
  return pop;
}

inline BankPopulation sim_c() {
  BankPopulation pop;
  pop.banks = {scalar_bank(0.0, 1.0, 0.0, 1.0), scalar_bank(1.0, 2.0, 0.0, 4.0)};
  pop.weights = Vector::Constant(2, 0.5);
  return pop;
}

/// Two-feature population: leading coordinate is the X block (slope beta),
/// trailing coordinate is the interaction block V (slope gamma).
inline InteractionPopulation sim_d() {
  auto bank = [](double beta, double gamma) {
    BankModel b;
    b.intercept = 0.0;
    b.slope = Vector(2);
    b.slope << beta, gamma;
    b.feature_mean = Vector::Zero(2);
    b.feature_cov = Matrix::Identity(2, 2);
    b.noise_var = 0.25;
    return b;
  };
  InteractionPopulation ipop;
  ipop.pop.banks = {bank(1.0, 1.0), bank(1.0, 3.0)};
  ipop.pop.weights = Vector::Constant(2, 0.5);
  ipop.x_dim = 1;
  return ipop;
}

/// SIM-B slopes/variances placed entirely in the interaction block, so the
/// interaction-extended FEO fit must return the ATE (2.0) rather than the
/// plain FEO value (2.5).
inline InteractionPopulation sim_b_all_interactions() {
  InteractionPopulation ipop;
  ipop.pop = sim_b();
  ipop.x_dim = 0;
  return ipop;
}

}  // namespace fairagg::scenarios
