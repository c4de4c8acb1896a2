#pragma once

// Closed-form aggregation of a bank population into each candidate
// industry model: pooled, FEO (with its omitted-variable decomposition),
// SEO, Gaussian PTF, WATE/ATE, the conditional-expectation model, and
// the interaction extension of FEO.

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "fairagg/common.hpp"
#include "fairagg/forecaster.hpp"
#include "fairagg/model.hpp"

namespace fairagg {

namespace detail {

inline Eigen::LDLT<Matrix> checked_ldlt(const Matrix& m, const char* what) {
  Eigen::LDLT<Matrix> ldlt(m);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
      ldlt.vectorD().minCoeff() <= 1e-12 * std::max(1.0, m.norm())) {
    double cond = m.norm() / std::max(ldlt.vectorD().minCoeff(), 0.0);
    throw numeric_error(std::string(what) + ": matrix is singular or indefinite (condition ~" +
                        std::to_string(cond) + ")");
  }
  return ldlt;
}

/// Symmetric matrix square root via spectral decomposition.
inline Matrix sym_sqrt(const Matrix& m, bool inverse = false) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(m);
  if (es.info() != Eigen::Success || es.eigenvalues().minCoeff() <= 0.0)
    throw numeric_error("sym_sqrt: matrix not positive definite");
  Vector d = es.eigenvalues().array().sqrt();
  if (inverse) d = d.array().inverse();
  return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

/// MSE-optimal equal-treatment linear forecast ("fairness through
/// unawareness"): slope = E[W_S]^{-1}(cov[alpha_S, mu_S] + E[W_S beta_S]).
inline LinearForecaster fit_pooled(const BankPopulation& pop) {
  PopulationMoments m = population_moments(pop);
  const Eigen::Index d = pop.dim();
  Vector rhs = m.cov_alpha_mu;
  for (std::size_t s = 0; s < pop.size(); ++s) {
    const BankModel& b = pop.banks[s];
    Matrix w = b.feature_cov + b.feature_mean * b.feature_mean.transpose() -
               m.bar_mu * b.feature_mean.transpose();
    rhs += pop.weights[s] * (w * b.slope);
  }
  LinearForecaster f;
  f.kind = ForecastKind::Pooled;
  f.slope = detail::checked_ldlt(m.var_x, "fit_pooled").solve(rhs);
  f.intercept = m.mean_loss - f.slope.dot(m.bar_mu);
  (void)d;
  return f;
}

/// FEO: slope = E[Sigma_S]^{-1} E[Sigma_S beta_S], the within-bank
/// regression coefficient; centered fixed effects are discarded.
inline LinearForecaster fit_feo(const BankPopulation& pop) {
  PopulationMoments m = population_moments(pop);
  Vector rhs = Vector::Zero(pop.dim());
  for (std::size_t s = 0; s < pop.size(); ++s)
    rhs += pop.weights[s] * (pop.banks[s].feature_cov * pop.banks[s].slope);
  LinearForecaster f;
  f.kind = ForecastKind::FEO;
  f.slope = detail::checked_ldlt(m.within_cov, "fit_feo").solve(rhs);
  f.intercept = m.mean_loss - f.slope.dot(m.bar_mu);
  return f;
}

/// The omitted-variable-bias decomposition linking pooled and FEO slopes:
/// beta_Pool = beta_F + Lambda * delta.
struct FeoDecomposition {
  Vector beta_f;
  Vector delta;       // length S-1
  Matrix lambda;      // d x (S-1)
  Vector beta_pool;
  std::size_t reference_bank = 0;  // bank whose dummy is omitted
};

inline FeoDecomposition feo_decomposition(const BankPopulation& pop,
                                          std::optional<std::size_t> reference_bank = std::nullopt) {
  PopulationMoments m = population_moments(pop);
  const std::size_t nb = pop.size();
  const std::size_t ref = reference_bank.value_or(nb - 1);
  if (ref >= nb) throw invalid_input("feo_decomposition: reference bank out of range");

  FeoDecomposition out;
  out.reference_bank = ref;
  out.beta_f = fit_feo(pop).slope;
  out.beta_pool = fit_pooled(pop).slope;

  // Bank ordering with the reference bank last.
  std::vector<std::size_t> order;
  for (std::size_t s = 0; s < nb; ++s)
    if (s != ref) order.push_back(s);

  const BankModel& rb = pop.banks[ref];
  out.delta = Vector(nb - 1);
  Matrix cov_xu(pop.dim(), nb - 1);
  for (std::size_t i = 0; i < order.size(); ++i) {
    const BankModel& b = pop.banks[order[i]];
    out.delta[i] = b.mean_loss() - rb.mean_loss() -
                   out.beta_f.dot(b.feature_mean - rb.feature_mean);
    cov_xu.col(i) = pop.weights[order[i]] * (b.feature_mean - m.bar_mu);
  }
  out.lambda = detail::checked_ldlt(m.var_x, "feo_decomposition").solve(cov_xu);
  return out;
}

/// SEO: FEO slope applied to bank-mean-adjusted features x - mu_s + bar_mu.
inline LinearForecaster fit_seo(const BankPopulation& pop) {
  LinearForecaster f = fit_feo(pop);
  f.kind = ForecastKind::SEO;
  SeoPayload payload;
  payload.bar_mu = population_moments(pop).bar_mu;
  for (const BankModel& b : pop.banks) payload.bank_means.push_back(b.feature_mean);
  f.per_bank = std::move(payload);
  return f;
}

/// Gaussian projection-to-fairness: per-bank standardized coefficients,
/// forecast bar_alpha^o + (sum p_i ||beta_i^o||) beta_s^o' z_s / ||beta_s^o||.
struct PtfForecaster {
  PtfPayload payload;

  double operator()(const Vector& x, std::size_t bank) const {
    return ptf_eval(payload, x, bank);
  }

  LinearForecaster as_linear_forecaster(Eigen::Index dim) const {
    LinearForecaster f;
    f.kind = ForecastKind::PTF;
    f.slope = Vector::Zero(dim);
    f.intercept = payload.bar_alpha_o;
    f.per_bank = payload;
    return f;
  }
};

inline PtfForecaster fit_ptf(const BankPopulation& pop) {
  pop.validate();
  PtfForecaster out;
  PtfPayload& p = out.payload;
  p.weights = pop.weights;
  p.banks.resize(pop.size());
  for (std::size_t s = 0; s < pop.size(); ++s) {
    const BankModel& b = pop.banks[s];
    PtfBankTerms& t = p.banks[s];
    t.feature_mean = b.feature_mean;
    t.cov_inv_sqrt = detail::sym_sqrt(b.feature_cov, /*inverse=*/true);
    t.beta_o = detail::sym_sqrt(b.feature_cov) * b.slope;
    t.alpha_o = b.mean_loss();
    if (t.beta_o.norm() == 0.0)
      throw invalid_input("fit_ptf: bank " + std::to_string(s) +
                          " has zero slope; PTF is undefined");
    p.bar_alpha_o += pop.weights[s] * t.alpha_o;
    p.mean_norm_beta_o += pop.weights[s] * t.beta_o.norm();
  }
  // Pairwise positive proportionality: cosine similarity >= 1 - 1e-9.
  p.proportional = true;
  for (std::size_t s = 1; s < pop.size() && p.proportional; ++s) {
    double cosine = p.banks[s].beta_o.dot(p.banks[0].beta_o) /
                    (p.banks[s].beta_o.norm() * p.banks[0].beta_o.norm());
    if (cosine < 1.0 - 1e-9) p.proportional = false;
  }
  return out;
}

/// Conditional-expectation industry model E[Y_S | X_S = x] under
/// Gaussian feature densities.
inline double conditional_expectation_forecast(const BankPopulation& pop, const Vector& x) {
  pop.validate();
  if (x.size() != pop.dim())
    throw invalid_input("conditional_expectation_forecast: feature dimension mismatch");
  CondExpPayload payload{pop};
  return detail::cond_exp_eval(payload, x);
}

inline LinearForecaster make_cond_exp_forecaster(const BankPopulation& pop) {
  pop.validate();
  LinearForecaster f;
  f.kind = ForecastKind::CondExp;
  f.slope = Vector::Zero(pop.dim());
  f.intercept = mixture_mean_loss(pop);
  f.per_bank = CondExpPayload{pop};
  return f;
}

/// Weighted average treatment effect: slope = sum w_s beta_s with the
/// zero-expected-error intercept. Default weights p_s give the ATE.
inline LinearForecaster fit_wate(const BankPopulation& pop,
                                 std::optional<Vector> combo_weights = std::nullopt) {
  PopulationMoments m = population_moments(pop);
  Vector w = combo_weights.value_or(pop.weights);
  if (static_cast<std::size_t>(w.size()) != pop.size())
    throw invalid_input("fit_wate: combo_weights length does not match bank count");
  if (w.minCoeff() < 0.0 || std::abs(w.sum() - 1.0) > 1e-12)
    throw invalid_input("fit_wate: combo_weights must be nonnegative and sum to 1");
  LinearForecaster f;
  f.kind = ForecastKind::WATE;
  f.slope = Vector::Zero(pop.dim());
  for (std::size_t s = 0; s < pop.size(); ++s) f.slope += w[s] * pop.banks[s].slope;
  f.intercept = m.mean_loss - f.slope.dot(m.bar_mu);
  return f;
}

/// Population whose features split into a block X without bank
/// interactions and a block V with them. Bank s has slope beta_s on X,
/// gamma_s on V; X and V must be uncorrelated within every bank.
struct InteractionPopulation {
  BankPopulation pop;
  Eigen::Index x_dim = 0;  // leading X-block size; remaining features form V

  Eigen::Index v_dim() const { return pop.dim() - x_dim; }

  void validate() const {
    pop.validate();
    if (x_dim < 0 || x_dim > pop.dim())
      throw invalid_input("InteractionPopulation: x_dim out of range");
    for (std::size_t s = 0; s < pop.size(); ++s) {
      const Matrix& cov = pop.banks[s].feature_cov;
      Matrix cross = cov.topRightCorner(x_dim, v_dim());
      if (cross.size() > 0 && cross.cwiseAbs().maxCoeff() > 1e-10)
        throw invalid_input("InteractionPopulation: bank " + std::to_string(s) +
                            " has nonzero X-V cross-covariance");
    }
  }
};

struct InteractionFeoFit {
  Vector beta_f;   // coefficients on the X block (FEO)
  Vector gamma_f;  // coefficients on the V block (ATE)
};

/// FEO extended with bank-dummy interactions on the V block: the X-block
/// slope is unchanged and the V-block slope collapses to the ATE.
inline InteractionFeoFit fit_feo_with_interactions(const InteractionPopulation& ipop) {
  ipop.validate();
  const Eigen::Index dx = ipop.x_dim;
  const Eigen::Index dv = ipop.v_dim();
  InteractionFeoFit out;
  out.gamma_f = Vector::Zero(dv);
  for (std::size_t s = 0; s < ipop.pop.size(); ++s)
    out.gamma_f += ipop.pop.weights[s] * ipop.pop.banks[s].slope.tail(dv);

  if (dx == 0) {
    out.beta_f = Vector(0);
    return out;
  }
  Matrix within = Matrix::Zero(dx, dx);
  Vector rhs = Vector::Zero(dx);
  for (std::size_t s = 0; s < ipop.pop.size(); ++s) {
    const BankModel& b = ipop.pop.banks[s];
    Matrix sig_x = b.feature_cov.topLeftCorner(dx, dx);
    within += ipop.pop.weights[s] * sig_x;
    rhs += ipop.pop.weights[s] * (sig_x * b.slope.head(dx));
  }
  out.beta_f = detail::checked_ldlt(within, "fit_feo_with_interactions").solve(rhs);
  return out;
}

}  // namespace fairagg
