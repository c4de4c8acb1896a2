#pragma once

// Fitted industry models and their evaluation. Pooled, FEO and WATE
// forecasters satisfy equal treatment (no bank-identity input); SEO and
// PTF require the bank index; the conditional-expectation model is
// bank-free but needs the full population.

#include <cstddef>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "fairagg/common.hpp"
#include "fairagg/model.hpp"
#include "fairagg/special.hpp"

namespace fairagg {

enum class ForecastKind { Pooled, FEO, SEO, PTF, WATE, CondExp };

inline const char* to_string(ForecastKind k) {
  switch (k) {
    case ForecastKind::Pooled: return "Pooled";
    case ForecastKind::FEO: return "FEO";
    case ForecastKind::SEO: return "SEO";
    case ForecastKind::PTF: return "PTF";
    case ForecastKind::WATE: return "WATE";
    case ForecastKind::CondExp: return "CondExp";
  }
  return "?";
}

/// Discarded centered fixed effects retained for reporting and for
/// full fixed-effects evaluation.
struct FixedEffectsPayload {
  Vector delta;    // length S-1, coefficients on U_1..U_{S-1}
  Vector weights;  // p_s, length S
};

struct SeoPayload {
  std::vector<Vector> bank_means;  // mu_s
  Vector bar_mu;
};

struct PtfBankTerms {
  Vector feature_mean;     // mu_s
  Matrix cov_inv_sqrt;     // Sigma_s^{-1/2}
  double alpha_o = 0.0;    // alpha_s + beta_s' mu_s
  Vector beta_o;           // Sigma_s^{1/2} beta_s
};

struct PtfPayload {
  double bar_alpha_o = 0.0;      // sum p_i alpha_i^o
  double mean_norm_beta_o = 0.0; // sum p_i ||beta_i^o||
  std::vector<PtfBankTerms> banks;
  Vector weights;
  bool proportional = false;  // all beta_s^o positively proportional
};

struct CondExpPayload {
  BankPopulation pop;
};

struct LinearForecaster {
  ForecastKind kind = ForecastKind::Pooled;
  double intercept = 0.0;
  Vector slope;
  std::variant<std::monostate, FixedEffectsPayload, SeoPayload, PtfPayload, CondExpPayload>
      per_bank;
};

namespace detail {

inline double cond_exp_eval(const CondExpPayload& c, const Vector& x) {
  // Log-density weights with max-shift normalization to avoid underflow.
  const std::size_t n = c.pop.size();
  std::vector<double> logw(n);
  std::vector<double> value(n);
  double max_logw = -std::numeric_limits<double>::infinity();
  for (std::size_t s = 0; s < n; ++s) {
    const BankModel& b = c.pop.banks[s];
    Eigen::LLT<Matrix> llt(b.feature_cov);
    if (llt.info() != Eigen::Success)
      throw numeric_error("conditional expectation: covariance factorization failed for bank " +
                          std::to_string(s));
    Vector dev = x - b.feature_mean;
    Vector half = llt.matrixL().solve(dev);
    double log_det = 0.0;
    for (Eigen::Index i = 0; i < b.feature_cov.rows(); ++i)
      log_det += std::log(llt.matrixL()(i, i));
    logw[s] = std::log(c.pop.weights[s]) - 0.5 * half.squaredNorm() - log_det -
              0.5 * b.dim() * std::log(2.0 * M_PI);
    value[s] = b.intercept + b.slope.dot(x);
    max_logw = std::max(max_logw, logw[s]);
  }
  if (!std::isfinite(max_logw))
    throw numeric_error("conditional expectation: all bank densities underflow at x");
  double num = 0.0, den = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    double w = std::exp(logw[s] - max_logw);
    num += w * value[s];
    den += w;
  }
  return num / den;
}

}  // namespace detail

/// Forecast for PTF at (x, s) per the standardized-coefficient closed form.
inline double ptf_eval(const PtfPayload& p, const Vector& x, std::size_t bank) {
  if (bank >= p.banks.size()) throw invalid_input("PTF forecast: bank index out of range");
  const PtfBankTerms& t = p.banks[bank];
  Vector z = t.cov_inv_sqrt * (x - t.feature_mean);
  double norm = t.beta_o.norm();
  return p.bar_alpha_o + p.mean_norm_beta_o * t.beta_o.dot(z) / norm;
}

/// Kind-dispatched forecast. Pooled/FEO/WATE/CondExp must be called
/// without a bank index; SEO/PTF require one. A FEO forecaster whose
/// discarded fixed effects were retained may also be evaluated with a
/// bank index, restoring the full fixed-effects forecast.
inline double forecast(const LinearForecaster& f, const Vector& x,
                       std::optional<std::size_t> bank = std::nullopt) {
  if (x.size() != f.slope.size() && f.kind != ForecastKind::CondExp)
    throw invalid_input("forecast: feature vector has wrong dimension");
  switch (f.kind) {
    case ForecastKind::Pooled:
    case ForecastKind::WATE:
      if (bank) throw invalid_input("forecast: bank index not accepted for equal-treatment kind");
      return f.intercept + f.slope.dot(x);
    case ForecastKind::FEO: {
      double base = f.intercept + f.slope.dot(x);
      if (!bank) return base;
      const auto* fe = std::get_if<FixedEffectsPayload>(&f.per_bank);
      if (!fe)
        throw invalid_input("forecast: fixed-effects payload required for per-bank evaluation");
      const std::size_t nb = static_cast<std::size_t>(fe->weights.size());
      if (*bank >= nb) throw invalid_input("forecast: bank index out of range");
      double adj = 0.0;
      for (Eigen::Index i = 0; i < fe->delta.size(); ++i) {
        double u = (static_cast<std::size_t>(i) == *bank ? 1.0 : 0.0) - fe->weights[i];
        adj += fe->delta[i] * u;
      }
      return base + adj;
    }
    case ForecastKind::SEO: {
      if (!bank) throw invalid_input("forecast: SEO requires a bank index");
      const auto& seo = std::get<SeoPayload>(f.per_bank);
      if (*bank >= seo.bank_means.size())
        throw invalid_input("forecast: bank index out of range");
      return f.intercept + f.slope.dot(x - seo.bank_means[*bank] + seo.bar_mu);
    }
    case ForecastKind::PTF: {
      if (!bank) throw invalid_input("forecast: PTF requires a bank index");
      return ptf_eval(std::get<PtfPayload>(f.per_bank), x, *bank);
    }
    case ForecastKind::CondExp: {
      if (bank) throw invalid_input("forecast: bank index not accepted for equal-treatment kind");
      return detail::cond_exp_eval(std::get<CondExpPayload>(f.per_bank), x);
    }
  }
  throw invalid_input("forecast: unknown kind");
}

}  // namespace fairagg
