#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <numeric>

#include "fairagg/estimators.hpp"
#include "fairagg/rng.hpp"
#include "fairagg/scenarios.hpp"

using namespace fairagg;

namespace {

// Randomized scalar-or-small-d population for property sweeps.
BankPopulation random_population(SeqRng& rng, int max_d = 3, int max_banks = 6) {
  int d = 1 + static_cast<int>(rng.uniform() * max_d);
  if (d > max_d) d = max_d;
  int nb = 2 + static_cast<int>(rng.uniform() * (max_banks - 1));
  if (nb > max_banks) nb = max_banks;
  BankPopulation pop;
  Vector w(nb);
  for (int s = 0; s < nb; ++s) w[s] = 0.1 + rng.uniform();
  pop.weights = w / w.sum();
  for (int s = 0; s < nb; ++s) {
    BankModel b;
    b.intercept = rng.uniform(-2, 2);
    b.slope = Vector::NullaryExpr(d, [&](Eigen::Index) { return rng.uniform(-2, 2); });
    b.feature_mean = Vector::NullaryExpr(d, [&](Eigen::Index) { return rng.uniform(-2, 2); });
    Matrix a = Matrix::NullaryExpr(d, d, [&](Eigen::Index, Eigen::Index) { return rng.uniform(-1, 1); });
    b.feature_cov = a * a.transpose() + 0.1 * Matrix::Identity(d, d);
    b.noise_var = rng.uniform(0, 1);
    pop.banks.push_back(std::move(b));
  }
  return pop;
}

}  // namespace

TEST_CASE("sim-a population moments") {
  auto m = population_moments(scenarios::sim_a());
  CHECK(m.bar_mu[0] == Catch::Approx(1.0).margin(1e-14));
  CHECK(m.var_x(0, 0) == Catch::Approx(2.0).margin(1e-14));
  CHECK(m.cov_alpha_mu[0] == Catch::Approx(0.5).margin(1e-14));
  CHECK(m.mean_loss == Catch::Approx(0.5).margin(1e-14));
  CHECK(m.within_cov(0, 0) == Catch::Approx(1.0).margin(1e-14));
}

TEST_CASE("sim-b population moments") {
  auto m = population_moments(scenarios::sim_b());
  CHECK(m.bar_mu[0] == Catch::Approx(0.0).margin(1e-14));
  CHECK(m.var_x(0, 0) == Catch::Approx(2.0).margin(1e-14));
  CHECK(m.cov_alpha_mu[0] == Catch::Approx(0.0).margin(1e-14));
  CHECK(m.mean_loss == Catch::Approx(0.0).margin(1e-14));
}

TEST_CASE("identical banks have zero between-bank covariance") {
  BankPopulation pop;
  pop.banks = {scenarios::scalar_bank(0.3, 1.2, 0.7, 2.0),
               scenarios::scalar_bank(0.3, 1.2, 0.7, 2.0)};
  pop.weights = Vector::Constant(2, 0.5);
  auto m = population_moments(pop);
  CHECK(m.cov_alpha_mu[0] == Catch::Approx(0.0).margin(1e-14));
  CHECK(m.var_x(0, 0) == Catch::Approx(2.0).margin(1e-14));
}

TEST_CASE("moments match monte carlo on randomized populations") {
  SeqRng rng(11);
  for (int rep = 0; rep < 5; ++rep) {
    BankPopulation pop = random_population(rng);
    auto m = population_moments(pop);
    const int n = 200000;
    const Eigen::Index d = pop.dim();
    // Sample X_S from the mixture, accumulate moments.
    Vector sum = Vector::Zero(d);
    Matrix sumsq = Matrix::Zero(d, d);
    std::vector<Matrix> roots;
    for (const auto& b : pop.banks) roots.push_back(detail::sym_sqrt(b.feature_cov));
    for (int i = 0; i < n; ++i) {
      double u = rng.uniform(), acc = 0.0;
      std::size_t s = 0;
      for (; s + 1 < pop.size(); ++s) {
        acc += pop.weights[s];
        if (u < acc) break;
      }
      Vector z = Vector::NullaryExpr(d, [&](Eigen::Index) { return rng.normal(); });
      Vector x = pop.banks[s].feature_mean + roots[s] * z;
      sum += x;
      sumsq += x * x.transpose();
    }
    Vector mean = sum / n;
    Matrix cov = sumsq / n - mean * mean.transpose();
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = 0; j < d; ++j) {
        double se = 4.0 * std::sqrt((m.var_x(i, i) * m.var_x(j, j) + m.var_x(i, j) * m.var_x(i, j)) / n);
        CHECK(std::abs(cov(i, j) - m.var_x(i, j)) < se + 1e-9);
      }
  }
}

TEST_CASE("moments invariant to bank permutation") {
  SeqRng rng(5);
  BankPopulation pop = random_population(rng);
  auto m1 = population_moments(pop);
  BankPopulation perm;
  std::vector<std::size_t> idx(pop.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::reverse(idx.begin(), idx.end());
  perm.weights = Vector(pop.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    perm.banks.push_back(pop.banks[idx[i]]);
    perm.weights[i] = pop.weights[idx[i]];
  }
  auto m2 = population_moments(perm);
  CHECK((m1.var_x - m2.var_x).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((m1.bar_mu - m2.bar_mu).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(m1.mean_loss == Catch::Approx(m2.mean_loss).margin(1e-12));
}

TEST_CASE("forecast dispatch and equal treatment") {
  auto pop = scenarios::sim_a();
  auto feo = fit_feo(pop);
  Vector x7 = Vector::Constant(1, 7.0);
  CHECK(forecast(feo, x7) == Catch::Approx(0.5).margin(1e-12));
  auto pooled = fit_pooled(pop);
  Vector x1 = Vector::Constant(1, 1.0);
  CHECK(forecast(pooled, x1) == Catch::Approx(0.5).margin(1e-12));
  CHECK_THROWS_AS(forecast(pooled, x1, 0), invalid_input);

  // Identical banks: every aggregator reproduces the common model at mu.
  BankPopulation same;
  same.banks = {scenarios::scalar_bank(0.4, 1.5, 0.6, 1.3),
                scenarios::scalar_bank(0.4, 1.5, 0.6, 1.3)};
  same.weights = Vector::Constant(2, 0.5);
  Vector mu = Vector::Constant(1, 0.6);
  double want = 0.4 + 1.5 * 0.6;
  CHECK(forecast(fit_pooled(same), mu) == Catch::Approx(want).margin(1e-12));
  CHECK(forecast(fit_feo(same), mu) == Catch::Approx(want).margin(1e-12));
  CHECK(forecast(fit_seo(same), mu, 1) == Catch::Approx(want).margin(1e-12));
  CHECK(fit_ptf(same)(mu, 0) == Catch::Approx(want).margin(1e-12));
  CHECK(forecast(fit_wate(same), mu) == Catch::Approx(want).margin(1e-12));
}

TEST_CASE("mixture mean loss") {
  CHECK(mixture_mean_loss(scenarios::sim_a()) == Catch::Approx(0.5).margin(1e-14));
  CHECK(mixture_mean_loss(scenarios::sim_c()) == Catch::Approx(0.5).margin(1e-14));
  BankPopulation pop;
  pop.banks = {scenarios::scalar_bank(0, 1, 0, 1), scenarios::scalar_bank(0, 2, 0, 1)};
  pop.weights = Vector::Constant(2, 0.5);
  CHECK(mixture_mean_loss(pop) == Catch::Approx(0.0).margin(1e-14));
}

TEST_CASE("validation errors name the offending structure") {
  BankPopulation pop = scenarios::sim_a();
  pop.weights[0] = 0.7;  // no longer sums to 1
  CHECK_THROWS_AS(pop.validate(), invalid_input);

  BankModel bad = scenarios::scalar_bank(0, 0, 0, -1.0);  // negative variance
  CHECK_THROWS_AS(bad.validate(), invalid_input);

  BankPopulation dims = scenarios::sim_a();
  dims.banks[1].slope = Vector::Zero(2);
  dims.banks[1].feature_mean = Vector::Zero(2);
  dims.banks[1].feature_cov = Matrix::Identity(2, 2);
  CHECK_THROWS_WITH(dims.validate(), Catch::Matchers::ContainsSubstring("bank 1"));
}

TEST_CASE("population mse closed form matches simulation") {
  auto pop = scenarios::sim_b();
  double intercept = 0.1;
  Vector slope = Vector::Constant(1, 2.0);
  double exact = population_mse(pop, intercept, slope);
  SeqRng rng(99);
  const int n = 400000;
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    std::size_t s = rng.uniform() < 0.5 ? 0 : 1;
    const BankModel& b = pop.banks[s];
    double x = b.feature_mean[0] + std::sqrt(b.feature_cov(0, 0)) * rng.normal();
    double y = b.intercept + b.slope[0] * x + std::sqrt(b.noise_var) * rng.normal();
    double e = y - (intercept + slope[0] * x);
    acc += e * e;
  }
  CHECK(acc / n == Catch::Approx(exact).epsilon(0.03));
}
