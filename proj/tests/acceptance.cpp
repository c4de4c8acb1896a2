// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Each criterion re-derives its expected values independently of
// the code path under test (hand-computed fixtures, finite differences,
// Monte Carlo, or committed golden files).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "fairagg/additive.hpp"
#include "fairagg/diagnostics.hpp"
#include "fairagg/estimators.hpp"
#include "fairagg/panel.hpp"
#include "fairagg/pipeline.hpp"
#include "fairagg/report.hpp"
#include "fairagg/scenarios.hpp"
#include "fairagg/simulation.hpp"

using namespace fairagg;

namespace {

struct Check {
  bool ok = true;
  std::string detail;

  void require(bool cond, const std::string& msg) {
    if (!cond && ok) {
      ok = false;
      detail = msg;
    }
  }
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

/// Randomized multivariate population: d in 1..3, S in 2..6, random weights.
BankPopulation random_population(int rep, std::uint64_t seed_base) {
  SimConfig cfg;
  cfg.n_banks = 2 + rep % 5;
  cfg.feature_dim = 1 + rep % 3;
  cfg.weight_scheme = WeightScheme::Random;
  cfg.seed = seed_base + static_cast<std::uint64_t>(rep);
  return sample_population(cfg);
}

/// Scalar population under the nonnegative-feature convention (mu, beta > 0)
/// so every sufficient-condition sign rule can fire.
BankPopulation random_nonneg_scalar_population(SeqRng& rng) {
  int nb = 2 + static_cast<int>(rng.uniform() * 4);
  if (nb > 5) nb = 5;
  BankPopulation pop;
  Vector w(nb);
  for (int s = 0; s < nb; ++s) w[s] = 0.1 + rng.uniform();
  pop.weights = w / w.sum();
  for (int s = 0; s < nb; ++s)
    pop.banks.push_back(scenarios::scalar_bank(rng.uniform(-1, 1), rng.uniform(0.05, 2.0),
                                               rng.uniform(0.05, 2.0), rng.uniform(0.2, 3.0),
                                               rng.uniform(0.0, 0.5)));
  return pop;
}

/// Closed-form scalar forecast level used for central finite differences.
double closed_form_target(const BankPopulation& pop, SensMethod method, SensTarget target) {
  auto f = method == SensMethod::FEO ? fit_feo(pop) : fit_pooled(pop);
  double x = target.kind == SensTarget::Kind::PointForecast ? target.x
                                                            : pop.banks[target.l].feature_mean[0];
  double value = f.intercept + f.slope[0] * x;
  if (target.kind == SensTarget::Kind::Bias) value -= pop.banks[target.l].mean_loss();
  return value;
}

double finite_difference(const BankPopulation& pop, SensMethod method, SensParameter param,
                         std::size_t s, SensTarget target) {
  auto perturbed = [&](double h) {
    BankPopulation p = pop;
    switch (param) {
      case SensParameter::Mu: p.banks[s].feature_mean[0] += h; break;
      case SensParameter::Alpha: p.banks[s].intercept += h; break;
      case SensParameter::Beta: p.banks[s].slope[0] += h; break;
    }
    return closed_form_target(p, method, target);
  };
  double h = 1e-6;
  return (perturbed(h) - perturbed(-h)) / (2 * h);
}

// --- 1. Simpson's-paradox fixture closed forms ----------------------------
Check criterion_1() {
  Check c;
  auto pop = scenarios::sim_a();
  (void)fit_pooled(pop);  // warm up allocators outside the timed window
  auto t0 = std::chrono::steady_clock::now();
  auto pooled = fit_pooled(pop);
  auto feo = fit_feo(pop);
  double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                  .count();
  c.require(std::abs(pooled.slope[0] - 0.25) <= 1e-12, "beta_pool != 0.25");
  c.require(std::abs(pooled.intercept - 0.25) <= 1e-12, "alpha_pool != 0.25");
  c.require(std::abs(feo.slope[0] - 0.0) <= 1e-12, "beta_f != 0");
  c.require(std::abs(feo.intercept - 0.5) <= 1e-12, "alpha_f != 0.5");
  c.require(ms < 1.0, "runtime " + fmt(ms) + " ms >= 1 ms");
  return c;
}

// --- 2. Omitted-variable decomposition identity ---------------------------
Check criterion_2() {
  Check c;
  auto t0 = std::chrono::steady_clock::now();
  for (int rep = 0; rep < 1000; ++rep) {
    auto pop = random_population(rep, 1000);
    auto dec = feo_decomposition(pop);
    double err = (dec.beta_pool - (dec.beta_f + dec.lambda * dec.delta)).cwiseAbs().maxCoeff();
    c.require(err <= 1e-10, "rep " + std::to_string(rep) + ": identity gap " + fmt(err));
    if (!c.ok) return c;
  }
  double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  c.require(s < 5.0, "runtime " + fmt(s) + " s >= 5 s");
  return c;
}

// --- 3. Monte Carlo oracle closure ----------------------------------------
Check criterion_3() {
  Check c;
  auto t0 = std::chrono::steady_clock::now();
  for (int rep = 0; rep < 20; ++rep) {
    auto pop = random_population(rep, 2000);
    long rows_per_bank = 100000 / static_cast<long>(pop.size());
    for (const char* est : {"pooled", "feo"}) {
      auto mc = monte_carlo_estimate(pop, est, rows_per_bank, 30, 77000 + rep);
      LinearForecaster closed = est == std::string("pooled") ? fit_pooled(pop) : fit_feo(pop);
      Vector target(1 + pop.dim());
      target[0] = closed.intercept;
      target.tail(pop.dim()) = closed.slope;
      for (Eigen::Index j = 0; j < target.size(); ++j) {
        double gap = std::abs(mc.mean[j] - target[j]);
        c.require(mc.standard_error[j] > 0.0, "zero Monte Carlo SE");
        c.require(gap <= 4.0 * mc.standard_error[j],
                  "rep " + std::to_string(rep) + " " + est + " " + mc.labels[j] + ": |" +
                      fmt(mc.mean[j]) + " - " + fmt(target[j]) + "| > 4 SE (" +
                      fmt(mc.standard_error[j]) + ")");
        if (!c.ok) return c;
      }
    }
  }
  double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  c.require(s < 120.0, "runtime " + fmt(s) + " s >= 2 min");
  return c;
}

// --- 4. Misdirection: beating the within-bank slope needs both covariances -
Check criterion_4() {
  Check c;
  auto t0 = std::chrono::steady_clock::now();
  for (int rep = 0; rep < 100; ++rep) {
    auto pop = random_population(rep, 3000);
    SeqRng rng(3500 + rep);
    for (int g = 0; g < 100; ++g) {
      Vector gamma = Vector::NullaryExpr(pop.dim(),
                                         [&](Eigen::Index) { return rng.uniform(-1.0, 1.0); });
      auto mr = misdirection_check(pop, gamma);
      if (mr.mse_gamma < mr.mse_feo * (1.0 - 1e-12)) {
        c.require(mr.cov_i > 0.0 && mr.cov_ii > 0.0,
                  "rep " + std::to_string(rep) + " gamma " + std::to_string(g) +
                      ": MSE improved but cov_i=" + fmt(mr.cov_i) +
                      ", cov_ii=" + fmt(mr.cov_ii));
        if (!c.ok) return c;
      }
    }
  }
  double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  c.require(s < 30.0, "runtime " + fmt(s) + " s >= 30 s");
  return c;
}

// --- 5. Demographic parity of the fair forecasters ------------------------
Check criterion_5() {
  Check c;
  auto t0 = std::chrono::steady_clock::now();
  auto pop = scenarios::sim_c();
  auto ptf = fit_ptf(pop).as_linear_forecaster(pop.dim());
  auto ptf_stats = demographic_parity_stats(pop, ptf, 100000, 7);
  c.require(ptf_stats.max_ks < 0.01, "PTF max KS " + fmt(ptf_stats.max_ks) + " >= 0.01");

  auto seo = fit_seo(pop);
  auto seo_stats = demographic_parity_stats(pop, seo, 100000, 8);
  for (Eigen::Index i = 0; i < seo_stats.weak_dp_cov.size(); ++i)
    c.require(std::abs(seo_stats.weak_dp_cov[i]) <= 4.0 * seo_stats.weak_dp_se[i],
              "SEO weak-DP cov " + fmt(seo_stats.weak_dp_cov[i]) + " beyond 4 SE (" +
                  fmt(seo_stats.weak_dp_se[i]) + ")");
  double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  c.require(s < 10.0, "runtime " + fmt(s) + " s >= 10 s");
  return c;
}

// --- 6. Equal covariances: the two fair forecasters coincide --------------
Check criterion_6() {
  Check c;
  BankPopulation pop;
  pop.banks = {scenarios::scalar_bank(0.0, 1.0, 0.5, 2.0),
               scenarios::scalar_bank(1.0, 3.0, -0.5, 2.0)};
  pop.weights = Vector::Constant(2, 0.5);
  auto seo = fit_seo(pop);
  auto ptf = fit_ptf(pop);
  for (int j = 0; j < 100; ++j) {
    Vector x = Vector::Constant(1, -5.0 + 10.0 * j / 99.0);
    for (std::size_t s = 0; s < 2; ++s) {
      double gap = std::abs(forecast(seo, x, s) - ptf(x, s));
      c.require(gap <= 1e-10,
                "x=" + fmt(x[0]) + " bank " + std::to_string(s) + ": |SEO - PTF| = " + fmt(gap));
      if (!c.ok) return c;
    }
  }
  return c;
}

// --- 7. Bias suite --------------------------------------------------------
Check criterion_7() {
  Check c;
  for (int rep = 0; rep < 1000; ++rep) {
    auto pop = random_population(rep, 4000);
    auto dec = feo_decomposition(pop);
    auto m = population_moments(pop);
    BiasReport pooled, feo;
    for (auto method : {BiasMethod::Pooled, BiasMethod::FEO, BiasMethod::SEO, BiasMethod::PTF}) {
      auto b = population_bias(pop, method);
      c.require(std::abs(b.weighted_sum) <= 1e-12,
                std::string("rep ") + std::to_string(rep) + " " + to_string(method) +
                    ": weighted bias " + fmt(b.weighted_sum));
      if (method == BiasMethod::Pooled) pooled = b;
      if (method == BiasMethod::FEO) feo = b;
    }
    Vector lam_delta = dec.lambda * dec.delta;
    for (std::size_t s = 0; s < pop.size(); ++s) {
      double want = lam_delta.dot(pop.banks[s].feature_mean - m.bar_mu);
      double got = pooled.per_bank[s] - feo.per_bank[s];
      c.require(std::abs(got - want) <= 1e-10, "rep " + std::to_string(rep) + " bank " +
                                                   std::to_string(s) + ": bias gap " + fmt(got) +
                                                   " vs " + fmt(want));
    }
    if (!c.ok) return c;
  }
  return c;
}

// --- 8. Sensitivity derivatives vs finite differences + sign rules --------
Check criterion_8() {
  Check c;
  SeqRng rng(8001);
  for (int rep = 0; rep < 1000; ++rep) {
    auto pop = random_nonneg_scalar_population(rng);
    std::vector<SensTarget> targets{SensTarget::point(0.2), SensTarget::point(1.7)};
    for (std::size_t l = 0; l < pop.size(); ++l) {
      targets.push_back(SensTarget::mean_forecast(l));
      targets.push_back(SensTarget::bias(l));
    }
    for (auto method : {SensMethod::FEO, SensMethod::Pooled})
      for (auto param : {SensParameter::Mu, SensParameter::Alpha, SensParameter::Beta})
        for (std::size_t s = 0; s < pop.size(); ++s)
          for (const auto& target : targets) {
            auto rep_out = sensitivity(pop, method, param, s, target);
            double fd = finite_difference(pop, method, param, s, target);
            double tol = 1e-6 * std::max(std::abs(fd), 1e-3);
            c.require(std::abs(rep_out.value - fd) <= tol,
                      "rep " + std::to_string(rep) + ": analytic " + fmt(rep_out.value) +
                          " vs FD " + fmt(fd));
            if (rep_out.sign == SignClass::PredictedPositive)
              c.require(rep_out.value >= -1e-10, "positive rule violated: " + fmt(rep_out.value));
            if (rep_out.sign == SignClass::PredictedNegative)
              c.require(rep_out.value <= 1e-10, "negative rule violated: " + fmt(rep_out.value));
            if (!c.ok) return c;
          }
  }
  return c;
}

// --- 9. Interaction-extended fit returns the ATE --------------------------
Check criterion_9() {
  Check c;
  auto fit_d = fit_feo_with_interactions(scenarios::sim_d());
  c.require(std::abs(fit_d.gamma_f[0] - 2.0) <= 1e-12,
            "sim-d gamma_f = " + fmt(fit_d.gamma_f[0]));
  c.require(std::abs(fit_d.beta_f[0] - 1.0) <= 1e-12, "sim-d beta_f = " + fmt(fit_d.beta_f[0]));

  auto fit_b = fit_feo_with_interactions(scenarios::sim_b_all_interactions());
  c.require(std::abs(fit_b.gamma_f[0] - 2.0) <= 1e-12,
            "all-interaction gamma_f = " + fmt(fit_b.gamma_f[0]) + " (ATE is 2.0)");
  c.require(std::abs(fit_b.gamma_f[0] - 2.5) > 0.4,
            "all-interaction fit collapsed to the variance-weighted 2.5");
  return c;
}

// --- 10. Heterogeneity test: empirical size and power ---------------------
Check criterion_10() {
  Check c;
  auto t0 = std::chrono::steady_clock::now();
  BankPopulation null_pop;
  for (int s = 0; s < 5; ++s)
    null_pop.banks.push_back(scenarios::scalar_bank(0.2, 1.0, 0.0, 1.0, 0.25));
  null_pop.weights = Vector::Constant(5, 0.2);

  int reject_bank = 0, reject_time = 0;
  for (int r = 0; r < 1000; ++r) {
    auto panel = simulate_panel(null_pop, 200, 1000 + r);
    auto target = HeterogeneityTarget::slope_of(0);
    if (heterogeneity_test(panel, target, CovarianceSpec::BankClustered).p_value < 0.05)
      ++reject_bank;
    if (heterogeneity_test(panel, target, CovarianceSpec::TimeClustered).p_value < 0.05)
      ++reject_time;
  }
  double size_bank = reject_bank / 1000.0, size_time = reject_time / 1000.0;
  c.require(size_bank > 0.03 && size_bank < 0.08,
            "bank-clustered size " + fmt(size_bank) + " outside (0.03, 0.08)");
  c.require(size_time > 0.03 && size_time < 0.08,
            "time-clustered size " + fmt(size_time) + " outside (0.03, 0.08)");

  // Slope gap of 10 within-bank standard errors: sqrt(noise / (T var_x)).
  double gap = 10.0 * std::sqrt(0.25 / (200.0 * 1.0));
  BankPopulation alt_pop;
  alt_pop.banks = {scenarios::scalar_bank(0.2, 1.0, 0.0, 1.0, 0.25),
                   scenarios::scalar_bank(0.2, 1.0 + gap, 0.0, 1.0, 0.25)};
  alt_pop.weights = Vector::Constant(2, 0.5);
  int power_bank = 0, power_time = 0;
  for (int r = 0; r < 1000; ++r) {
    auto panel = simulate_panel(alt_pop, 200, 5000 + r);
    auto target = HeterogeneityTarget::slope_of(0);
    if (heterogeneity_test(panel, target, CovarianceSpec::BankClustered).p_value < 0.01)
      ++power_bank;
    if (heterogeneity_test(panel, target, CovarianceSpec::TimeClustered).p_value < 0.01)
      ++power_time;
  }
  c.require(power_bank >= 990, "bank-clustered power " + std::to_string(power_bank) + "/1000");
  c.require(power_time >= 990, "time-clustered power " + std::to_string(power_time) + "/1000");
  double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  c.require(s < 300.0, "runtime " + fmt(s) + " s >= 5 min");
  return c;
}

// --- 11. Additive-model equivalences --------------------------------------
Check criterion_11() {
  Check c;
  auto pop = random_population(7, 11000);  // d = 2, S = 4 at rep 7
  auto data = simulate_panel(pop, 300, 99);
  std::vector<TermSpec> terms{{"x0", 0, std::make_shared<LinearSmoother>()},
                              {"x1", 1, std::make_shared<LinearSmoother>()}};

  // (a) Linear-smoother FEO backfit equals the fixed-effects LS forecaster.
  auto gam = fit_gam(data, GamMode::FEO, terms, 1e-13, 5000);
  auto fe = fit_panel(data, PanelMode::FixedEffects);
  double max_gap = 0.0;
  for (const auto& row : data.rows)
    max_gap = std::max(max_gap,
                       std::abs(gam.predict(row.features) - forecast(fe.forecaster, row.features)));
  c.require(max_gap <= 1e-6, "GAM vs FE least squares: max gap " + fmt(max_gap));

  // (b) Backfitting SSR never increases with extra sweeps.
  double prev = std::numeric_limits<double>::infinity();
  for (int sweeps = 1; sweeps <= 8; ++sweeps) {
    auto m = backfit(data, terms, /*include_bank_offsets=*/true, 1e-15, sweeps);
    c.require(m.weighted_ssr <= prev + 1e-9,
              "SSR rose from " + fmt(prev) + " to " + fmt(m.weighted_ssr) + " at sweep " +
                  std::to_string(sweeps));
    prev = m.weighted_ssr;
  }

  // (c) Weighted mean prediction preserves the weighted mean response.
  double wsum = 0.0, wy = 0.0, wp = 0.0;
  for (const auto& row : data.rows) {
    wsum += row.weight;
    wy += row.weight * row.response;
    wp += row.weight * gam.predict(row.features);
  }
  double mean_gap = std::abs(wp / wsum - wy / wsum);
  c.require(mean_gap <= 1e-8, "weighted mean prediction off by " + fmt(mean_gap));

  // (d) Residual orthogonality to within-bank-demeaned features.
  double y_mean = wy / wsum, yvar = 0.0;
  for (const auto& row : data.rows)
    yvar += row.weight * (row.response - y_mean) * (row.response - y_mean);
  double scale = std::sqrt(yvar / wsum);
  auto nl = nonlinear_misdirection_check(data, gam,
                                         Vector::Zero(static_cast<Eigen::Index>(data.rows.size())));
  double max_cov = nl.residual_feature_cov.cwiseAbs().maxCoeff();
  c.require(max_cov < 1e-6 * scale,
            "residual-feature covariance " + fmt(max_cov) + " >= 1e-6 * " + fmt(scale));
  return c;
}

// --- 12. Pipeline golden file ---------------------------------------------
Check criterion_12() {
  Check c;
  auto raw = read_raw_panel(std::string(FIXTURE_DIR) + "/raw_panel.csv");
  auto macro = read_macro_table(std::string(FIXTURE_DIR) + "/macro.csv");
  auto res = run_pipeline(raw, macro, "cre", "d_unemployment", parse_quarter("1996-Q1"),
                          parse_quarter("2014-Q4"));
  std::string body = compare_report(res.frame, CovarianceSpec::BankClustered);

  std::ifstream golden(std::string(FIXTURE_DIR) + "/golden/pipeline_compare.csv");
  c.require(golden.good(), "golden file missing");
  std::ostringstream expected;
  std::string line;
  while (std::getline(golden, line)) {
    if (!line.empty() && line[0] == '#') continue;  // header comments
    expected << line << "\n";
  }
  c.require(body == expected.str(), "pipeline output differs from the committed golden file");

  // Worst/best stress factor at equal loans is the configured ratio exactly.
  std::vector<double> pcs, ones;
  for (const auto& row : res.frame.rows) {
    pcs.push_back(res.pc1.series.at(row.time));
    ones.push_back(1.0);
  }
  auto factors = stress_weights(pcs, ones, 2.0);
  double lo = *std::min_element(factors.begin(), factors.end());
  double hi = *std::max_element(factors.begin(), factors.end());
  c.require(hi / lo == 2.0, "stress factor ratio " + fmt(hi / lo) + " != 2.0 exactly");
  return c;
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<Check()> run;
  };
  std::vector<Criterion> criteria{
      {"simpsons-paradox closed forms (1e-12, <1ms)", criterion_1},
      {"pooled = within + omitted-variable term on 1000 populations", criterion_2},
      {"Monte Carlo oracle closure within 4 SE", criterion_3},
      {"misdirection covariances positive whenever FEO is beaten", criterion_4},
      {"PTF strong / SEO weak demographic parity", criterion_5},
      {"equal-covariance SEO and PTF coincide pointwise", criterion_6},
      {"bias weighted sums vanish; pooled-FEO gap matches decomposition", criterion_7},
      {"sensitivity derivatives match finite differences; sign rules hold", criterion_8},
      {"interaction-extended fit returns the ATE", criterion_9},
      {"heterogeneity test size in (3%, 8%) and power at 10-SE gap", criterion_10},
      {"additive-model equivalences (linear, SSR, mean, orthogonality)", criterion_11},
      {"pipeline golden output byte-identical; stress ratio exact", criterion_12},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    auto t0 = std::chrono::steady_clock::now();
    Check c;
    try {
      c = criteria[i].run();
    } catch (const std::exception& e) {
      c.ok = false;
      c.detail = std::string("exception: ") + e.what();
    }
    double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s %2zu %s (%.2f s)%s%s\n", c.ok ? "PASS" : "FAIL", i + 1, criteria[i].name, s,
                c.ok ? "" : " -- ", c.ok ? "" : c.detail.c_str());
    std::fflush(stdout);
    if (!c.ok) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
