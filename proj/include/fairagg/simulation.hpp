#pragma once

// Synthetic population and panel generation plus the Monte Carlo harness
// used as the independent oracle for every closed form. All draws are
// counter-based, keyed by (seed, bank, row), so generation is
// schedule-independent and reproducible.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fairagg/estimators.hpp"
#include "fairagg/model.hpp"
#include "fairagg/panel.hpp"
#include "fairagg/rng.hpp"

namespace fairagg {

struct Range {
  double lo = 0.0;
  double hi = 0.0;

  void check(const char* name) const {
    if (hi < lo) throw invalid_input(std::string("SimConfig: range ") + name + " is ill-ordered");
  }
};

enum class WeightScheme { Equal, Random };

struct SimConfig {
  int n_banks = 2;
  int feature_dim = 1;
  long rows_per_bank = 1000;
  Range alpha_range{-1.0, 1.0};
  Range beta_range{-2.0, 2.0};
  Range mu_range{-2.0, 2.0};
  Range cov_scale_range{0.5, 1.5};  // scale of the A factor in A A' + eps I
  Range noise_range{0.1, 1.0};
  WeightScheme weight_scheme = WeightScheme::Equal;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_banks < 1 || feature_dim < 1 || rows_per_bank < 1)
      throw invalid_input("SimConfig: counts must be >= 1");
    alpha_range.check("alpha");
    beta_range.check("beta");
    mu_range.check("mu");
    cov_scale_range.check("cov_scale");
    noise_range.check("noise");
    if (noise_range.lo < 0.0) throw invalid_input("SimConfig: noise range must be nonnegative");
  }
};

/// Draws per-bank parameters uniformly in the configured ranges; covariances
/// are A A' + 1e-3 I with A entries scaled by cov_scale.
inline BankPopulation sample_population(const SimConfig& cfg) {
  cfg.validate();
  SeqRng rng(cfg.seed, /*stream=*/0);
  const int d = cfg.feature_dim;
  BankPopulation pop;
  Vector w(cfg.n_banks);
  for (int s = 0; s < cfg.n_banks; ++s)
    w[s] = cfg.weight_scheme == WeightScheme::Equal ? 1.0 : 0.2 + rng.uniform();
  pop.weights = w / w.sum();
  for (int s = 0; s < cfg.n_banks; ++s) {
    BankModel b;
    b.intercept = rng.uniform(cfg.alpha_range.lo, cfg.alpha_range.hi);
    b.slope = Vector::NullaryExpr(
        d, [&](Eigen::Index) { return rng.uniform(cfg.beta_range.lo, cfg.beta_range.hi); });
    b.feature_mean = Vector::NullaryExpr(
        d, [&](Eigen::Index) { return rng.uniform(cfg.mu_range.lo, cfg.mu_range.hi); });
    double scale = rng.uniform(cfg.cov_scale_range.lo, cfg.cov_scale_range.hi);
    Matrix a = Matrix::NullaryExpr(
        d, d, [&](Eigen::Index, Eigen::Index) { return scale * rng.uniform(-1.0, 1.0); });
    b.feature_cov = a * a.transpose() + 1e-3 * Matrix::Identity(d, d);
    b.noise_var = rng.uniform(cfg.noise_range.lo, cfg.noise_range.hi);
    pop.banks.push_back(std::move(b));
  }
  return pop;
}

/// X ~ N(mu_s, Sigma_s) via the symmetric square root, eps ~ N(0, noise),
/// y = alpha_s + beta_s'X + eps. Row draws use counters keyed by (bank, row)
/// so any generation order yields identical panels.
inline PanelDataset simulate_panel(const BankPopulation& pop, long rows_per_bank,
                                   std::uint64_t seed) {
  pop.validate();
  const Eigen::Index d = pop.dim();
  std::vector<Matrix> roots;
  for (const auto& b : pop.banks) roots.push_back(detail::sym_sqrt(b.feature_cov));

  PanelDataset data;
  for (Eigen::Index j = 0; j < d; ++j) data.feature_names.push_back("x" + std::to_string(j));
  data.rows.reserve(pop.size() * rows_per_bank);
  for (std::size_t s = 0; s < pop.size(); ++s) {
    const BankModel& b = pop.banks[s];
    CounterRng rng(seed, s + 1);
    for (long r = 0; r < rows_per_bank; ++r) {
      std::uint64_t base = static_cast<std::uint64_t>(r) * (d + 1);
      Vector z = Vector::NullaryExpr(
          d, [&](Eigen::Index j) { return rng.normal(base + static_cast<std::uint64_t>(j)); });
      PanelRow row;
      row.bank_id = "B" + std::to_string(s);
      row.time = static_cast<int>(r);
      row.features = b.feature_mean + roots[s] * z;
      row.response = b.intercept + b.slope.dot(row.features) +
                     std::sqrt(b.noise_var) * rng.normal(base + static_cast<std::uint64_t>(d));
      // Population bank weights carried into row weights so weighted fits
      // target the population mixture.
      row.weight = pop.weights[s];
      data.rows.push_back(std::move(row));
    }
  }
  return data;
}

struct MonteCarloEstimate {
  Vector mean;           // cross-replication mean per coefficient
  Vector standard_error; // SE of the mean
  std::vector<std::string> labels;
};

/// Runs `replications` independent panels, fits the named sample estimator
/// ("pooled" or "feo"), and reports cross-replication means and SEs of
/// (intercept, slope...) of the returned forecaster.
inline MonteCarloEstimate monte_carlo_estimate(const BankPopulation& pop,
                                               const std::string& estimator, long rows,
                                               int replications, std::uint64_t seed) {
  PanelMode mode;
  if (estimator == "pooled") mode = PanelMode::Pooled;
  else if (estimator == "feo") mode = PanelMode::FixedEffects;
  else throw invalid_input("monte_carlo_estimate: unknown estimator '" + estimator +
                           "' (expected pooled or feo)");
  if (replications < 2) throw invalid_input("monte_carlo_estimate: need >= 2 replications");

  const Eigen::Index k = 1 + pop.dim();
  Matrix draws(replications, k);
  for (int rep = 0; rep < replications; ++rep) {
    // Per-replication derived seed keeps replications independent of any
    // parallel execution order.
    std::uint64_t rep_seed = detail::splitmix64(seed ^ (0x9e3779b97f4a7c15ULL * (rep + 1)));
    PanelDataset panel = simulate_panel(pop, rows, rep_seed);
    PanelFit fit = fit_panel(panel, mode);
    draws(rep, 0) = fit.forecaster.intercept;
    draws.row(rep).tail(pop.dim()) = fit.forecaster.slope;
  }
  MonteCarloEstimate out;
  out.mean = draws.colwise().mean();
  Vector var = (draws.rowwise() - out.mean.transpose()).array().square().colwise().sum() /
               (replications - 1.0);
  out.standard_error = (var / replications).array().sqrt();
  out.labels.push_back("intercept");
  for (Eigen::Index j = 0; j < pop.dim(); ++j) out.labels.push_back("x" + std::to_string(j));
  return out;
}

}  // namespace fairagg
