#pragma once

// Domain types for bank populations and their exact population moments.

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "fairagg/common.hpp"

namespace fairagg {

/// One bank's true linear loss model: Y = alpha + beta'X + eps,
/// X ~ (feature_mean, feature_cov), var[eps] = noise_var.
struct BankModel {
  double intercept = 0.0;
  Vector slope;
  Vector feature_mean;
  Matrix feature_cov;
  double noise_var = 0.0;

  Eigen::Index dim() const { return slope.size(); }

  /// E[Y_s] = alpha_s + beta_s' mu_s.
  double mean_loss() const { return intercept + slope.dot(feature_mean); }

  void validate() const {
    const Eigen::Index d = slope.size();
    if (feature_mean.size() != d)
      throw invalid_input("BankModel: feature_mean length " + std::to_string(feature_mean.size()) +
                          " does not match slope length " + std::to_string(d));
    if (feature_cov.rows() != d || feature_cov.cols() != d)
      throw invalid_input("BankModel: feature_cov must be " + std::to_string(d) + "x" +
                          std::to_string(d));
    if (!feature_cov.isApprox(feature_cov.transpose(), 1e-10))
      throw invalid_input("BankModel: feature_cov is not symmetric");
    // PD check: symmetric factorization with pivot tolerance 1e-10.
    Eigen::LDLT<Matrix> ldlt(feature_cov);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
        ldlt.vectorD().minCoeff() <= 1e-10 * std::max(1.0, feature_cov.norm()))
      throw invalid_input("BankModel: feature_cov is not positive definite");
    if (noise_var < 0.0) throw invalid_input("BankModel: noise_var must be nonnegative");
  }
};

/// Weighted collection of bank models; the object every population
/// estimator consumes.
struct BankPopulation {
  std::vector<BankModel> banks;
  Vector weights;  // p_s, strictly positive, sums to 1

  std::size_t size() const { return banks.size(); }
  Eigen::Index dim() const { return banks.empty() ? 0 : banks.front().dim(); }

  void validate() const {
    if (banks.size() < 2) throw invalid_input("BankPopulation: need at least 2 banks");
    if (static_cast<std::size_t>(weights.size()) != banks.size())
      throw invalid_input("BankPopulation: weights length does not match bank count");
    if (weights.minCoeff() <= 0.0)
      throw invalid_input("BankPopulation: weights must be strictly positive");
    if (std::abs(weights.sum() - 1.0) > 1e-12)
      throw invalid_input("BankPopulation: weights must sum to 1");
    const Eigen::Index d = banks.front().dim();
    for (std::size_t s = 0; s < banks.size(); ++s) {
      if (banks[s].dim() != d)
        throw invalid_input("BankPopulation: bank " + std::to_string(s) +
                            " has feature dimension " + std::to_string(banks[s].dim()) +
                            ", expected " + std::to_string(d));
      banks[s].validate();
    }
  }
};

/// Exact moments of the bank mixture: mean features, total feature
/// variance, intercept/mean covariance, mean loss, and within-bank
/// covariance.
struct PopulationMoments {
  Vector bar_mu;       // E[mu_S]
  Matrix var_x;        // var[X_S] = E[W_S]
  Vector cov_alpha_mu; // cov[alpha_S, mu_S]
  double mean_loss = 0.0;  // E[Y_S]
  Matrix within_cov;   // E[Sigma_S]
};

inline PopulationMoments population_moments(const BankPopulation& pop) {
  pop.validate();
  const Eigen::Index d = pop.dim();
  PopulationMoments m;
  m.bar_mu = Vector::Zero(d);
  for (std::size_t s = 0; s < pop.size(); ++s)
    m.bar_mu += pop.weights[s] * pop.banks[s].feature_mean;

  m.var_x = Matrix::Zero(d, d);
  m.cov_alpha_mu = Vector::Zero(d);
  m.within_cov = Matrix::Zero(d, d);
  m.mean_loss = 0.0;
  for (std::size_t s = 0; s < pop.size(); ++s) {
    const BankModel& b = pop.banks[s];
    const double p = pop.weights[s];
    // W_s = Sigma_s + mu_s mu_s' - bar_mu mu_s'
    m.var_x += p * (b.feature_cov + b.feature_mean * b.feature_mean.transpose() -
                    m.bar_mu * b.feature_mean.transpose());
    m.cov_alpha_mu += p * b.intercept * (b.feature_mean - m.bar_mu);
    m.within_cov += p * b.feature_cov;
    m.mean_loss += p * b.mean_loss();
  }
  // E[W_S] can pick up an antisymmetric rounding residual; symmetrize.
  m.var_x = 0.5 * (m.var_x + m.var_x.transpose()).eval();
  return m;
}

/// E[Y_S] for the mixture.
inline double mixture_mean_loss(const BankPopulation& pop) {
  pop.validate();
  double total = 0.0;
  for (std::size_t s = 0; s < pop.size(); ++s) total += pop.weights[s] * pop.banks[s].mean_loss();
  return total;
}

/// Exact population mean squared error of the linear forecast
/// a + b'x, computed from moments rather than simulation.
inline double population_mse(const BankPopulation& pop, double intercept, const Vector& slope) {
  if (slope.size() != pop.dim()) throw invalid_input("population_mse: slope dimension mismatch");
  double mse = 0.0;
  for (std::size_t s = 0; s < pop.size(); ++s) {
    const BankModel& b = pop.banks[s];
    Vector db = slope - b.slope;
    double da = intercept - b.intercept + db.dot(b.feature_mean);
    mse += pop.weights[s] * (da * da + db.dot(b.feature_cov * db) + b.noise_var);
  }
  return mse;
}

}  // namespace fairagg
