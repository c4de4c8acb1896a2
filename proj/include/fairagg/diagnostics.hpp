#pragma once

// Fairness and externality analytics: per-bank bias, cross-bank
// sensitivity derivatives with sign classification, misdirection
// covariances, demographic-parity statistics, and convex-weight checks.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "fairagg/estimators.hpp"
#include "fairagg/model.hpp"
#include "fairagg/rng.hpp"

namespace fairagg {

enum class BiasMethod { Pooled, FEO, SEO, PTF, CondExp };

inline const char* to_string(BiasMethod m) {
  switch (m) {
    case BiasMethod::Pooled: return "Pooled";
    case BiasMethod::FEO: return "FEO";
    case BiasMethod::SEO: return "SEO";
    case BiasMethod::PTF: return "PTF";
    case BiasMethod::CondExp: return "CondExp";
  }
  return "?";
}

struct BiasReport {
  Vector per_bank;          // E[Yhat_s - Y_s]
  double weighted_sum = 0;  // sum p_s bias(s); zero for every method
  BiasMethod method = BiasMethod::Pooled;
  double mc_standard_error = 0.0;  // nonzero only for the Monte Carlo path
};

namespace detail {

/// Gauss-Hermite nodes/weights (physicists' weight e^{-t^2}) via the
/// symmetric tridiagonal Jacobi matrix.
inline void gauss_hermite(int n, Vector& nodes, Vector& weights) {
  Matrix j = Matrix::Zero(n, n);
  for (int i = 1; i < n; ++i) j(i, i - 1) = j(i - 1, i) = std::sqrt(i / 2.0);
  Eigen::SelfAdjointEigenSolver<Matrix> es(j);
  nodes = es.eigenvalues();
  weights = Vector(n);
  const double sqrt_pi = std::sqrt(M_PI);
  for (int i = 0; i < n; ++i) {
    double v = es.eigenvectors()(0, i);
    weights[i] = sqrt_pi * v * v;
  }
}

}  // namespace detail

/// Per-bank forecast bias. Pooled/FEO carry the slope-dependent term
/// beta'(mu_s - bar_mu); PTF/SEO are mean-matched per bank up to the
/// population/bank mean-loss gap; the conditional-expectation bias is an
/// integral, evaluated by 64-node quadrature (d = 1) or Monte Carlo.
inline BiasReport population_bias(const BankPopulation& pop, BiasMethod method,
                                  std::uint64_t mc_seed = 0, long mc_draws = 1000000) {
  PopulationMoments m = population_moments(pop);
  BiasReport out;
  out.method = method;
  out.per_bank = Vector(pop.size());

  Vector beta;
  if (method == BiasMethod::Pooled) beta = fit_pooled(pop).slope;
  if (method == BiasMethod::FEO) beta = fit_feo(pop).slope;

  for (std::size_t s = 0; s < pop.size(); ++s) {
    const BankModel& b = pop.banks[s];
    double base = m.mean_loss - b.mean_loss();
    switch (method) {
      case BiasMethod::Pooled:
      case BiasMethod::FEO:
        out.per_bank[s] = base + beta.dot(b.feature_mean - m.bar_mu);
        break;
      case BiasMethod::PTF:
      case BiasMethod::SEO:
        out.per_bank[s] = base;
        break;
      case BiasMethod::CondExp: {
        CondExpPayload payload{pop};
        if (pop.dim() == 1) {
          Vector nodes, weights;
          detail::gauss_hermite(64, nodes, weights);
          double sd = std::sqrt(b.feature_cov(0, 0));
          double mean_forecast = 0.0;
          for (int i = 0; i < nodes.size(); ++i) {
            Vector x = Vector::Constant(1, b.feature_mean[0] + std::sqrt(2.0) * sd * nodes[i]);
            mean_forecast += weights[i] / std::sqrt(M_PI) * detail::cond_exp_eval(payload, x);
          }
          out.per_bank[s] = mean_forecast - b.mean_loss();
        } else {
          Matrix root = detail::sym_sqrt(b.feature_cov);
          SeqRng rng(mc_seed, s + 1);
          double acc = 0.0, acc2 = 0.0;
          for (long i = 0; i < mc_draws; ++i) {
            Vector z = Vector::NullaryExpr(pop.dim(), [&](Eigen::Index) { return rng.normal(); });
            double f = detail::cond_exp_eval(payload, b.feature_mean + root * z);
            acc += f;
            acc2 += f * f;
          }
          double mean = acc / mc_draws;
          double var = acc2 / mc_draws - mean * mean;
          out.per_bank[s] = mean - b.mean_loss();
          out.mc_standard_error =
              std::max(out.mc_standard_error, std::sqrt(std::max(var, 0.0) / mc_draws));
        }
        break;
      }
    }
  }
  out.weighted_sum = pop.weights.dot(out.per_bank);
  return out;
}

enum class SensMethod { FEO, Pooled };
enum class SensParameter { Mu, Alpha, Beta };

struct SensTarget {
  enum class Kind { PointForecast, MeanForecast, Bias } kind = Kind::PointForecast;
  double x = 0.0;       // evaluation point for PointForecast
  std::size_t l = 0;    // target bank for MeanForecast/Bias

  static SensTarget point(double x) { return {Kind::PointForecast, x, 0}; }
  static SensTarget mean_forecast(std::size_t l) { return {Kind::MeanForecast, 0.0, l}; }
  static SensTarget bias(std::size_t l) { return {Kind::Bias, 0.0, l}; }
};

enum class SignClass { PredictedPositive, PredictedNegative, NoRule };

inline const char* to_string(SignClass c) {
  switch (c) {
    case SignClass::PredictedPositive: return "positive";
    case SignClass::PredictedNegative: return "negative";
    case SignClass::NoRule: return "no-simple-rule";
  }
  return "?";
}

struct SensitivityReport {
  SensMethod method;
  SensParameter parameter;
  SensTarget target;
  std::size_t bank = 0;  // the bank whose parameter moves
  double value = 0.0;    // analytic partial derivative
  SignClass sign = SignClass::NoRule;
};

/// Analytic partial derivative of a scalar-feature industry forecast with
/// respect to one bank's (mu, alpha, beta), for the forecast at a point x,
/// the mean forecast for bank l, or the bias at bank l. The sign
/// classification reports the sufficient-condition rules: whenever a rule
/// fires, the derivative provably has that sign.
inline SensitivityReport sensitivity(const BankPopulation& pop, SensMethod method,
                                     SensParameter parameter, std::size_t s, SensTarget target) {
  if (pop.dim() != 1) throw invalid_input("sensitivity: requires a scalar feature");
  pop.validate();
  if (s >= pop.size()) throw invalid_input("sensitivity: bank index out of range");
  const bool needs_l = target.kind != SensTarget::Kind::PointForecast;
  if (needs_l && target.l >= pop.size())
    throw invalid_input("sensitivity: target bank index out of range");

  PopulationMoments m = population_moments(pop);
  const double bar_mu = m.bar_mu[0];
  const double a_within = m.within_cov(0, 0);      // sum p sigma^2
  const double d_pool = m.var_x(0, 0);             // within + var(mu_S)
  const double beta_f = fit_feo(pop).slope[0];
  const double beta_pool = fit_pooled(pop).slope[0];
  const double p_s = pop.weights[s];
  const BankModel& bs = pop.banks[s];
  const double mu_s = bs.feature_mean[0], beta_s = bs.slope[0], sig2_s = bs.feature_cov(0, 0);

  const bool is_point = target.kind == SensTarget::Kind::PointForecast;
  const std::size_t l = target.l;
  const double x = is_point ? target.x : pop.banks[l].feature_mean[0];
  const bool self = !is_point && l == s;
  const bool is_bias = target.kind == SensTarget::Kind::Bias;
  const double mu_l = x;  // for non-point targets, x is mu_l

  // Derivative of the slope coefficient with respect to the parameter.
  double dslope = 0.0, dlevel = 0.0;
  if (method == SensMethod::FEO) {
    switch (parameter) {
      case SensParameter::Alpha:
        dlevel = p_s;  // through E[Y_S]
        break;
      case SensParameter::Mu:
        dlevel = p_s * beta_s - p_s * beta_f;  // E[Y_S] and -beta_f * bar_mu move
        break;
      case SensParameter::Beta:
        dslope = p_s * sig2_s / a_within;
        dlevel = p_s * mu_s;  // through E[Y_S]
        break;
    }
  } else {
    // Pooled slope beta_P = N / D with
    //   N = sum p a (mu - bar_mu) + sum p beta (sigma^2 + mu^2 - bar_mu mu)
    //   D = sum p sigma^2 + var(mu_S).
    double mean_alpha = 0.0, mean_mu_beta = 0.0;
    for (std::size_t t = 0; t < pop.size(); ++t) {
      mean_alpha += pop.weights[t] * pop.banks[t].intercept;
      mean_mu_beta += pop.weights[t] * pop.banks[t].feature_mean[0] * pop.banks[t].slope[0];
    }
    switch (parameter) {
      case SensParameter::Alpha:
        dslope = p_s * (mu_s - bar_mu) / d_pool;
        dlevel = p_s;
        break;
      case SensParameter::Beta:
        dslope = p_s * (sig2_s + mu_s * (mu_s - bar_mu)) / d_pool;
        dlevel = p_s * mu_s;
        break;
      case SensParameter::Mu: {
        double dn = p_s * (bs.intercept - mean_alpha) + p_s * (2.0 * mu_s - bar_mu) * beta_s -
                    p_s * mean_mu_beta;
        double dd = 2.0 * p_s * (mu_s - bar_mu);
        dslope = (dn - beta_pool * dd) / d_pool;
        dlevel = p_s * beta_s - p_s * beta_pool;
        break;
      }
    }
  }
  const double slope = method == SensMethod::FEO ? beta_f : beta_pool;

  // Forecast Yhat(x) = E[Y_S] + slope (x - bar_mu); dlevel already folds in
  // the E[Y_S] and bar_mu movements.
  double deriv = dlevel + (x - bar_mu) * dslope;
  // Non-point target at l = s: mu_l itself moves with mu_s.
  if (self && parameter == SensParameter::Mu) deriv += slope;
  // Bias subtracts E[Y_l] = alpha_l + beta_l mu_l.
  if (is_bias && l == s) {
    switch (parameter) {
      case SensParameter::Alpha: deriv -= 1.0; break;
      case SensParameter::Beta: deriv -= mu_l; break;
      case SensParameter::Mu: deriv -= pop.banks[l].slope[0]; break;
    }
  }

  SensitivityReport out;
  out.method = method;
  out.parameter = parameter;
  out.target = target;
  out.bank = s;
  out.value = deriv;

  // Sign rules. Each rule is a sufficient condition on the population under
  // the nonnegative-feature convention (mu >= 0, beta >= 0); when the
  // inputs violate the convention no rule is reported. The beta rules for
  // mean-forecast/bias targets at l != s use the exact condition
  // mu_s * (sum p sigma^2) + (mu_l - bar_mu) sigma_s^2 > 0, which reduces
  // to mu_s + mu_l > bar_mu when bank variances are equal.
  out.sign = SignClass::NoRule;
  bool convention = true;
  for (const auto& b : pop.banks)
    if (b.feature_mean[0] < 0.0 || b.slope[0] < 0.0) convention = false;
  if (!convention) return out;

  auto pos = [&] { out.sign = SignClass::PredictedPositive; };
  auto neg = [&] { out.sign = SignClass::PredictedNegative; };
  const double w_s = sig2_s + mu_s * (mu_s - bar_mu);
  if (method == SensMethod::FEO) {
    switch (target.kind) {
      case SensTarget::Kind::PointForecast:
        if (parameter == SensParameter::Mu) (beta_s > beta_f ? pos() : neg());
        if (parameter == SensParameter::Alpha) pos();
        if (parameter == SensParameter::Beta && x > bar_mu) pos();
        break;
      case SensTarget::Kind::MeanForecast:
        if (parameter == SensParameter::Mu) {
          if (self) pos();
          else (beta_s > beta_f ? pos() : neg());
        }
        if (parameter == SensParameter::Alpha) pos();
        if (parameter == SensParameter::Beta &&
            mu_s * a_within + (mu_l - bar_mu) * sig2_s > 0.0)
          pos();
        break;
      case SensTarget::Kind::Bias:
        if (parameter == SensParameter::Mu) {
          if (self) (beta_s < beta_f ? pos() : neg());
          else (beta_s > beta_f ? pos() : neg());
        }
        if (parameter == SensParameter::Alpha) (self ? neg() : pos());
        if (parameter == SensParameter::Beta) {
          if (self && mu_s < bar_mu) neg();
          if (!self && mu_s * a_within + (mu_l - bar_mu) * sig2_s > 0.0) pos();
        }
        break;
    }
  } else {
    switch (target.kind) {
      case SensTarget::Kind::PointForecast:
        if (parameter == SensParameter::Alpha && (mu_s - bar_mu) * (x - bar_mu) > 0.0) pos();
        if (parameter == SensParameter::Beta && w_s * (x - bar_mu) > 0.0) pos();
        break;
      case SensTarget::Kind::MeanForecast:
        if (parameter == SensParameter::Alpha) {
          if (self) pos();
          else if ((mu_s - bar_mu) * (mu_l - bar_mu) > 0.0) pos();
        }
        if (parameter == SensParameter::Beta && w_s * (mu_l - bar_mu) > 0.0) pos();
        break;
      case SensTarget::Kind::Bias:
        if (parameter == SensParameter::Alpha && !self &&
            (mu_s - bar_mu) * (mu_l - bar_mu) > 0.0)
          pos();
        if (parameter == SensParameter::Beta && !self && w_s * (mu_l - bar_mu) > 0.0) pos();
        break;
    }
  }
  return out;
}

struct MisdirectionResult {
  double mse_gamma = 0.0;
  double mse_feo = 0.0;
  double cov_i = 0.0;   // cov[gamma'X_S, (Lambda delta)'X_S]
  double cov_ii = 0.0;  // cov[gamma'M'U(S), delta'U(S)]
};

/// For the deviated equal-treatment forecast E[Y_S] + (beta_F + gamma)'
/// (x - bar_mu): closed-form MSEs and the two misdirection covariances.
/// Any gamma that beats FEO must have both covariances positive — it works
/// by using features to proxy for bank identity.
inline MisdirectionResult misdirection_check(const BankPopulation& pop, const Vector& gamma) {
  if (gamma.size() != pop.dim()) throw invalid_input("misdirection_check: gamma dimension mismatch");
  PopulationMoments m = population_moments(pop);
  auto dec = feo_decomposition(pop);
  MisdirectionResult out;

  Vector beta_g = dec.beta_f + gamma;
  out.mse_feo = population_mse(pop, m.mean_loss - dec.beta_f.dot(m.bar_mu), dec.beta_f);
  out.mse_gamma = population_mse(pop, m.mean_loss - beta_g.dot(m.bar_mu), beta_g);

  out.cov_i = gamma.dot(m.var_x * (dec.lambda * dec.delta));

  // M row s = (mu_s - mu_ref)'; var[U] = diag(p) - p p' over the
  // non-reference banks.
  const std::size_t nb = pop.size();
  const std::size_t ref = dec.reference_bank;
  Matrix mmat(nb - 1, pop.dim());
  Vector p(nb - 1);
  std::size_t row = 0;
  for (std::size_t t = 0; t < nb; ++t) {
    if (t == ref) continue;
    mmat.row(row) = (pop.banks[t].feature_mean - pop.banks[ref].feature_mean).transpose();
    p[row] = pop.weights[t];
    ++row;
  }
  Matrix var_u = Matrix(p.asDiagonal()) - p * p.transpose();
  out.cov_ii = (mmat * gamma).dot(var_u * dec.delta);
  return out;
}

struct ParityStats {
  Vector per_bank_mean;
  Vector per_bank_var;
  double max_ks = 0.0;          // max two-sample KS distance across bank pairs
  Vector weak_dp_cov;           // cov(Yhat, U_i), length S-1
  Vector weak_dp_se;            // Monte Carlo SEs for the covariances
};

namespace detail {

inline double ks_distance(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double d = 0.0;
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] <= b[j]) ++i;
    else ++j;
    double fa = static_cast<double>(i) / a.size();
    double fb = static_cast<double>(j) / b.size();
    d = std::max(d, std::abs(fa - fb));
  }
  return d;
}

}  // namespace detail

/// Simulates X_s ~ N(mu_s, Sigma_s) per bank and inspects the forecast
/// distribution: per-bank moments, the worst pairwise KS distance, and
/// the weak-demographic-parity covariances with centered bank dummies.
inline ParityStats demographic_parity_stats(const BankPopulation& pop,
                                            const LinearForecaster& forecaster, long n_samples,
                                            std::uint64_t seed) {
  pop.validate();
  if (n_samples < 100) throw invalid_input("demographic_parity_stats: need n_samples >= 100");
  const std::size_t nb = pop.size();
  const Eigen::Index d = pop.dim();
  std::vector<std::vector<double>> samples(nb);
  ParityStats out;
  out.per_bank_mean = Vector(nb);
  out.per_bank_var = Vector(nb);

  bool needs_bank = forecaster.kind == ForecastKind::SEO || forecaster.kind == ForecastKind::PTF;
  for (std::size_t s = 0; s < nb; ++s) {
    Matrix root = detail::sym_sqrt(pop.banks[s].feature_cov);
    CounterRng rng(seed, s + 1);
    samples[s].reserve(n_samples);
    double acc = 0.0, acc2 = 0.0;
    for (long i = 0; i < n_samples; ++i) {
      std::uint64_t base = static_cast<std::uint64_t>(i) * d;
      Vector z = Vector::NullaryExpr(
          d, [&](Eigen::Index j) { return rng.normal(base + static_cast<std::uint64_t>(j)); });
      Vector x = pop.banks[s].feature_mean + root * z;
      double f = forecast(forecaster, x, needs_bank ? std::optional<std::size_t>(s) : std::nullopt);
      samples[s].push_back(f);
      acc += f;
      acc2 += f * f;
    }
    out.per_bank_mean[s] = acc / n_samples;
    out.per_bank_var[s] = acc2 / n_samples - out.per_bank_mean[s] * out.per_bank_mean[s];
  }

  for (std::size_t a = 0; a < nb; ++a)
    for (std::size_t b = a + 1; b < nb; ++b)
      out.max_ks = std::max(out.max_ks, detail::ks_distance(samples[a], samples[b]));

  // cov(Yhat, U_i) = p_i (E[Yhat | bank i] - E[Yhat]); the SE follows from
  // the per-bank sampling variances of the means.
  double overall = pop.weights.dot(out.per_bank_mean);
  out.weak_dp_cov = Vector(nb - 1);
  out.weak_dp_se = Vector(nb - 1);
  for (std::size_t i = 0; i + 1 < nb; ++i) {
    out.weak_dp_cov[i] = pop.weights[i] * (out.per_bank_mean[i] - overall);
    double var = 0.0;
    for (std::size_t t = 0; t < nb; ++t) {
      double coef = pop.weights[i] * ((t == i ? 1.0 : 0.0) - pop.weights[t]);
      var += coef * coef * out.per_bank_var[t] / n_samples;
    }
    out.weak_dp_se[i] = std::sqrt(var);
  }
  return out;
}

struct ConvexWeights {
  Vector feo_weights;     // p sigma^2 / sum p sigma^2, always convex
  bool feo_convex = true;
  Vector pooled_weights;  // p W / sum p W; can go negative
  bool pooled_convex = true;
};

/// Scalar-feature implicit aggregation weights on the bank slopes.
inline ConvexWeights convex_weights_check(const BankPopulation& pop) {
  if (pop.dim() != 1) throw invalid_input("convex_weights_check: requires a scalar feature");
  PopulationMoments m = population_moments(pop);
  ConvexWeights out;
  out.feo_weights = Vector(pop.size());
  out.pooled_weights = Vector(pop.size());
  for (std::size_t s = 0; s < pop.size(); ++s) {
    const BankModel& b = pop.banks[s];
    out.feo_weights[s] = pop.weights[s] * b.feature_cov(0, 0) / m.within_cov(0, 0);
    double w = b.feature_cov(0, 0) +
               b.feature_mean[0] * (b.feature_mean[0] - m.bar_mu[0]);
    out.pooled_weights[s] = pop.weights[s] * w / m.var_x(0, 0);
  }
  out.feo_convex = out.feo_weights.minCoeff() >= 0.0;
  out.pooled_convex = out.pooled_weights.minCoeff() >= 0.0;
  return out;
}

}  // namespace fairagg
