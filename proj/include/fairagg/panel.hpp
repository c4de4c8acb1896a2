#pragma once

// Finite-sample counterparts of the population estimators: weighted least
// squares, fixed-effects panel fits, clustered sandwich covariances, Wald
// heterogeneity tests, the stacked pooled-vs-FEO comparison, and AR fits.

#include <algorithm>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/QR>

#include "fairagg/common.hpp"
#include "fairagg/forecaster.hpp"
#include "fairagg/special.hpp"

namespace fairagg {

struct PanelRow {
  std::string bank_id;
  int time = 0;  // quarter index
  double response = 0.0;
  Vector features;
  double weight = 1.0;
};

struct PanelDataset {
  std::vector<PanelRow> rows;
  std::vector<std::string> feature_names;

  Eigen::Index feature_dim() const {
    return rows.empty() ? static_cast<Eigen::Index>(feature_names.size())
                        : rows.front().features.size();
  }

  /// Distinct bank ids in first-appearance order.
  std::vector<std::string> bank_ids() const {
    std::vector<std::string> ids;
    std::set<std::string> seen;
    for (const auto& r : rows)
      if (seen.insert(r.bank_id).second) ids.push_back(r.bank_id);
    return ids;
  }

  /// Weight share of each bank (empirical p_s), aligned with bank_ids().
  Vector bank_weight_shares(const std::vector<std::string>& ids) const {
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < ids.size(); ++i) index[ids[i]] = i;
    Vector w = Vector::Zero(ids.size());
    for (const auto& r : rows) w[index.at(r.bank_id)] += r.weight;
    return w / w.sum();
  }

  void validate() const {
    std::set<std::pair<std::string, int>> keys;
    for (const auto& r : rows) {
      if (r.weight <= 0.0)
        throw invalid_input("PanelDataset: nonpositive weight for bank " + r.bank_id);
      if (r.features.size() != feature_dim())
        throw invalid_input("PanelDataset: inconsistent feature dimension for bank " + r.bank_id);
      if (!keys.insert({r.bank_id, r.time}).second)
        throw invalid_input("PanelDataset: duplicate (bank, time) pair (" + r.bank_id + ", " +
                            std::to_string(r.time) + ")");
    }
  }
};

enum class CovarianceSpec { BankClustered, TimeClustered };

inline const char* to_string(CovarianceSpec s) {
  return s == CovarianceSpec::BankClustered ? "BankClustered" : "TimeClustered";
}

struct RegressionFit {
  Vector coefficients;
  Vector residuals;
  std::vector<std::string> design_labels;
  double weighted_ssr = 0.0;
  long dof = 0;  // rows - columns
  std::optional<Matrix> covariance;
  std::optional<CovarianceSpec> covariance_spec;
  std::vector<std::string> warnings;
};

struct WaldResult {
  double statistic = 0.0;
  long dof = 0;
  double p_value = 1.0;
};

/// Minimizes sum w_i (y_i - x_i'b)^2 via QR of the sqrt(w)-scaled design.
inline RegressionFit weighted_least_squares(const Matrix& design, const Vector& response,
                                            const Vector& weights,
                                            std::vector<std::string> labels = {}) {
  const Eigen::Index n = design.rows(), k = design.cols();
  if (response.size() != n || weights.size() != n)
    throw invalid_input("weighted_least_squares: row-count mismatch");
  if (n < k) throw invalid_input("weighted_least_squares: fewer rows than columns");
  if (weights.minCoeff() <= 0.0)
    throw invalid_input("weighted_least_squares: weights must be positive");
  if (labels.empty())
    for (Eigen::Index j = 0; j < k; ++j) labels.push_back("col" + std::to_string(j));

  Vector sw = weights.array().sqrt();
  Matrix xs = sw.asDiagonal() * design;
  Vector ys = sw.asDiagonal() * response;
  Eigen::ColPivHouseholderQR<Matrix> qr(xs);
  qr.setThreshold(1e-10);
  if (qr.rank() < k) {
    // The columns pivoted past the rank boundary are the dependent ones.
    Eigen::Index bad = qr.colsPermutation().indices()[qr.rank()];
    throw numeric_error("weighted_least_squares: design is rank-deficient; column '" +
                        labels[bad] + "' is linearly dependent");
  }
  RegressionFit fit;
  fit.coefficients = qr.solve(ys);
  fit.residuals = response - design * fit.coefficients;
  fit.design_labels = std::move(labels);
  fit.weighted_ssr = (weights.array() * fit.residuals.array().square()).sum();
  fit.dof = n - k;
  return fit;
}

/// Column i of the result holds U_i(s) = 1{s = i} - p_i for each row's bank.
inline Matrix centered_dummies(const std::vector<std::size_t>& row_banks,
                               const Vector& weights_by_bank) {
  const std::size_t nb = static_cast<std::size_t>(weights_by_bank.size());
  if (nb < 2) throw invalid_input("centered_dummies: need at least 2 banks");
  Matrix u(row_banks.size(), nb - 1);
  for (std::size_t r = 0; r < row_banks.size(); ++r) {
    if (row_banks[r] >= nb) throw invalid_input("centered_dummies: unknown bank index");
    for (std::size_t i = 0; i + 1 < nb; ++i)
      u(r, i) = (row_banks[r] == i ? 1.0 : 0.0) - weights_by_bank[i];
  }
  return u;
}

enum class PanelMode { Pooled, FixedEffects };

namespace detail {

struct PanelIndex {
  std::vector<std::string> ids;
  std::vector<std::size_t> row_banks;
  Vector shares;
};

inline PanelIndex index_panel(const PanelDataset& data) {
  PanelIndex idx;
  idx.ids = data.bank_ids();
  std::unordered_map<std::string, std::size_t> map;
  for (std::size_t i = 0; i < idx.ids.size(); ++i) map[idx.ids[i]] = i;
  idx.row_banks.reserve(data.rows.size());
  for (const auto& r : data.rows) idx.row_banks.push_back(map.at(r.bank_id));
  idx.shares = data.bank_weight_shares(idx.ids);
  return idx;
}

inline Matrix features_matrix(const PanelDataset& data) {
  Matrix x(data.rows.size(), data.feature_dim());
  for (std::size_t r = 0; r < data.rows.size(); ++r) x.row(r) = data.rows[r].features;
  return x;
}

inline Vector responses(const PanelDataset& data) {
  Vector y(data.rows.size());
  for (std::size_t r = 0; r < data.rows.size(); ++r) y[r] = data.rows[r].response;
  return y;
}

inline Vector row_weights(const PanelDataset& data) {
  Vector w(data.rows.size());
  for (std::size_t r = 0; r < data.rows.size(); ++r) w[r] = data.rows[r].weight;
  return w;
}

}  // namespace detail

struct PanelFit {
  LinearForecaster forecaster;
  RegressionFit regression;
  Matrix design;   // retained for covariance estimation
  Vector weights;  // row weights aligned with design
};

/// Pooled regresses response on (1, features). FixedEffects adds centered
/// bank dummies and then discards them in the returned forecaster —
/// centering guarantees the mean forecast is preserved; the discarded
/// delta-hat stays available in the regression output and payload.
inline PanelFit fit_panel(const PanelDataset& data, PanelMode mode) {
  data.validate();
  if (data.rows.empty()) throw invalid_input("fit_panel: empty dataset");
  auto idx = detail::index_panel(data);
  const Eigen::Index n = static_cast<Eigen::Index>(data.rows.size());
  const Eigen::Index d = data.feature_dim();
  const std::size_t nb = idx.ids.size();

  std::vector<std::string> labels{"intercept"};
  Eigen::Index k = 1 + d;
  Eigen::Index dummy_cols = 0;
  if (mode == PanelMode::FixedEffects) {
    if (nb < 2) throw invalid_input("fit_panel: FixedEffects needs at least 2 banks");
    dummy_cols = static_cast<Eigen::Index>(nb) - 1;
    k += dummy_cols;
    for (Eigen::Index i = 0; i < dummy_cols; ++i) labels.push_back("fe:" + idx.ids[i]);
  }
  for (Eigen::Index j = 0; j < d; ++j)
    labels.push_back(j < static_cast<Eigen::Index>(data.feature_names.size())
                         ? data.feature_names[j]
                         : "x" + std::to_string(j));

  Matrix design(n, k);
  design.col(0).setOnes();
  if (dummy_cols > 0)
    design.middleCols(1, dummy_cols) = centered_dummies(idx.row_banks, idx.shares);
  design.rightCols(d) = detail::features_matrix(data);

  PanelFit out;
  out.weights = detail::row_weights(data);
  out.regression = weighted_least_squares(design, detail::responses(data), out.weights, labels);
  out.design = std::move(design);

  if (mode == PanelMode::FixedEffects) {
    std::vector<std::size_t> counts(nb, 0);
    for (std::size_t b : idx.row_banks) ++counts[b];
    for (std::size_t s = 0; s < nb; ++s)
      if (counts[s] < 2)
        out.regression.warnings.push_back("bank " + idx.ids[s] +
                                          " has fewer than 2 observations");
  }

  out.forecaster.kind = mode == PanelMode::Pooled ? ForecastKind::Pooled : ForecastKind::FEO;
  out.forecaster.intercept = out.regression.coefficients[0];
  out.forecaster.slope = out.regression.coefficients.tail(d);
  if (mode == PanelMode::FixedEffects) {
    FixedEffectsPayload payload;
    payload.delta = out.regression.coefficients.segment(1, dummy_cols);
    payload.weights = idx.shares;
    out.forecaster.per_bank = std::move(payload);
  }
  return out;
}

/// Cluster-robust sandwich covariance with the conventional small-sample
/// factor G/(G-1) * (N-1)/(N-K).
inline Matrix clustered_covariance(const RegressionFit& fit, const Matrix& design,
                                   const Vector& weights,
                                   const std::vector<std::string>& clusters) {
  const Eigen::Index n = design.rows(), k = design.cols();
  if (fit.residuals.size() != n || weights.size() != n ||
      static_cast<Eigen::Index>(clusters.size()) != n)
    throw invalid_input("clustered_covariance: size mismatch with design");
  std::map<std::string, std::vector<Eigen::Index>> groups;
  for (Eigen::Index i = 0; i < n; ++i) groups[clusters[i]].push_back(i);
  const double g = static_cast<double>(groups.size());
  if (groups.size() < 2) throw invalid_input("clustered_covariance: need at least 2 clusters");

  Matrix bread = design.transpose() * weights.asDiagonal() * design;
  Matrix meat = Matrix::Zero(k, k);
  for (const auto& [label, rows] : groups) {
    Vector score = Vector::Zero(k);
    for (Eigen::Index i : rows) score += weights[i] * fit.residuals[i] * design.row(i).transpose();
    meat += score * score.transpose();
  }
  double factor = g / (g - 1.0) * (static_cast<double>(n) - 1.0) / (static_cast<double>(n) - k);
  Eigen::LDLT<Matrix> ldlt(bread);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
    throw numeric_error("clustered_covariance: singular X'WX");
  Matrix inv_bread = ldlt.solve(Matrix::Identity(k, k));
  return factor * inv_bread * meat * inv_bread;
}

/// Cluster labels for the dataset under the chosen spec.
inline std::vector<std::string> cluster_labels(const PanelDataset& data, CovarianceSpec spec) {
  std::vector<std::string> labels;
  labels.reserve(data.rows.size());
  for (const auto& r : data.rows)
    labels.push_back(spec == CovarianceSpec::BankClustered ? r.bank_id
                                                           : "t" + std::to_string(r.time));
  return labels;
}

/// Wald statistic (R theta - r)' (R cov R')^{-1} (R theta - r), chi-square
/// p-value with dof = rows(R).
inline WaldResult wald_linear_restrictions(const Vector& theta, const Matrix& r_mat,
                                           const Vector& r_vec, const Matrix& cov) {
  if (r_mat.cols() != theta.size() || r_vec.size() != r_mat.rows())
    throw invalid_input("wald_linear_restrictions: dimension mismatch");
  Eigen::ColPivHouseholderQR<Matrix> rank_check(r_mat);
  rank_check.setThreshold(1e-10);
  if (rank_check.rank() < r_mat.rows())
    throw invalid_input("wald_linear_restrictions: restrictions not full row rank");
  Vector gap = r_mat * theta - r_vec;
  Matrix middle = r_mat * cov * r_mat.transpose();
  Eigen::LDLT<Matrix> ldlt(middle);
  if (ldlt.info() != Eigen::Success || ldlt.vectorD().minCoeff() <= 0.0)
    throw numeric_error("wald_linear_restrictions: singular restriction covariance");
  WaldResult out;
  out.statistic = std::max(gap.dot(ldlt.solve(gap)), 0.0);
  out.dof = r_mat.rows();
  out.p_value = chi2_sf(out.statistic, static_cast<double>(out.dof));
  return out;
}

namespace detail {

/// Within-bank HAC (Bartlett kernel) sandwich. Used for bank-level error
/// correlation when the design is block-diagonal by bank: there the
/// bank-clustered sandwich is identically singular (within-cluster scores
/// vanish by the normal equations), so across-quarter correlation is
/// handled by Newey-West truncation instead. Lag per bank follows the
/// Newey-West (1994) rule floor(4 (T/100)^{2/9}).
inline Matrix hac_within_bank_covariance(const RegressionFit& fit, const Matrix& design,
                                         const Vector& weights,
                                         const std::vector<std::size_t>& row_banks,
                                         const std::vector<long>& times, std::size_t n_banks) {
  const Eigen::Index n = design.rows(), k = design.cols();
  std::vector<std::vector<Eigen::Index>> by_bank(n_banks);
  for (Eigen::Index i = 0; i < n; ++i) by_bank[row_banks[i]].push_back(i);
  for (auto& rows : by_bank)
    std::sort(rows.begin(), rows.end(),
              [&](Eigen::Index a, Eigen::Index b) { return times[a] < times[b]; });

  Matrix meat = Matrix::Zero(k, k);
  for (const auto& rows : by_bank) {
    const long t_s = static_cast<long>(rows.size());
    if (t_s == 0) continue;
    long lag = static_cast<long>(std::floor(4.0 * std::pow(t_s / 100.0, 2.0 / 9.0)));
    lag = std::min(lag, t_s - 1);
    Matrix scores(t_s, k);
    for (long t = 0; t < t_s; ++t) {
      Eigen::Index i = rows[t];
      scores.row(t) = weights[i] * fit.residuals[i] * design.row(i);
    }
    meat += scores.transpose() * scores;
    for (long l = 1; l <= lag; ++l) {
      double bartlett = 1.0 - static_cast<double>(l) / (lag + 1.0);
      Matrix gamma = scores.topRows(t_s - l).transpose() * scores.bottomRows(t_s - l);
      meat += bartlett * (gamma + gamma.transpose());
    }
  }
  double factor = (static_cast<double>(n) - 1.0) / (static_cast<double>(n) - k);
  Matrix bread = design.transpose() * weights.asDiagonal() * design;
  Eigen::LDLT<Matrix> ldlt(bread);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
    throw numeric_error("hac_within_bank_covariance: singular bread matrix");
  Matrix inv_bread = ldlt.solve(Matrix::Identity(k, k));
  return factor * inv_bread * meat * inv_bread;
}

}  // namespace detail

struct HeterogeneityTarget {
  enum class Kind { Intercepts, Slope } kind = Kind::Intercepts;
  Eigen::Index feature = 0;

  static HeterogeneityTarget intercepts() { return {Kind::Intercepts, 0}; }
  static HeterogeneityTarget slope_of(Eigen::Index j) { return {Kind::Slope, j}; }
};

/// Equality-across-banks Wald test on the block-diagonal unrestricted
/// system diag(X_1, ..., X_S): each bank gets its own intercept and
/// slopes, and H0 imposes S-1 difference restrictions on the target.
inline WaldResult heterogeneity_test(const PanelDataset& data, HeterogeneityTarget target,
                                     CovarianceSpec spec) {
  data.validate();
  auto idx = detail::index_panel(data);
  const std::size_t nb = idx.ids.size();
  if (nb < 2) throw invalid_input("heterogeneity_test: need at least 2 banks");
  const Eigen::Index n = static_cast<Eigen::Index>(data.rows.size());
  const Eigen::Index d = data.feature_dim();
  const Eigen::Index per_bank = 1 + d;
  if (target.kind == HeterogeneityTarget::Kind::Slope &&
      (target.feature < 0 || target.feature >= d))
    throw invalid_input("heterogeneity_test: feature index out of range");

  Matrix design = Matrix::Zero(n, per_bank * static_cast<Eigen::Index>(nb));
  std::vector<std::string> labels(per_bank * nb);
  for (std::size_t s = 0; s < nb; ++s) {
    labels[per_bank * s] = idx.ids[s] + ":intercept";
    for (Eigen::Index j = 0; j < d; ++j)
      labels[per_bank * s + 1 + j] = idx.ids[s] + ":x" + std::to_string(j);
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index base = per_bank * static_cast<Eigen::Index>(idx.row_banks[i]);
    design(i, base) = 1.0;
    design.row(i).segment(base + 1, d) = data.rows[i].features;
  }
  Vector w = detail::row_weights(data);
  RegressionFit fit = weighted_least_squares(design, detail::responses(data), w, labels);
  // TimeClustered: ordinary cluster sandwich (time clusters cut across the
  // blocks). BankClustered: within-bank HAC — see the note on
  // hac_within_bank_covariance.
  Matrix cov;
  if (spec == CovarianceSpec::TimeClustered) {
    cov = clustered_covariance(fit, design, w, cluster_labels(data, spec));
  } else {
    std::vector<long> times;
    times.reserve(data.rows.size());
    for (const auto& r : data.rows) times.push_back(r.time);
    cov = detail::hac_within_bank_covariance(fit, design, w, idx.row_banks, times, nb);
  }

  const Eigen::Index offset =
      target.kind == HeterogeneityTarget::Kind::Intercepts ? 0 : 1 + target.feature;
  Matrix r_mat = Matrix::Zero(nb - 1, design.cols());
  for (std::size_t s = 0; s + 1 < nb; ++s) {
    r_mat(s, per_bank * s + offset) = 1.0;
    r_mat(s, per_bank * (nb - 1) + offset) = -1.0;
  }
  return wald_linear_restrictions(fit.coefficients, r_mat, Vector::Zero(nb - 1), cov);
}

struct PooledVsFeoResult {
  WaldResult wald;
  double beta_pool_hat = 0.0;
  double beta_f_hat = 0.0;
  double diff_feo_minus_pooled = 0.0;
  double diff_pooled_minus_feo = 0.0;
};

/// Stacked system diag(X_Pool, X_FE) with the response duplicated; tests
/// H0: beta_Pool,j = beta_F,j. Duplicated rows share cluster labels, so
/// bank clustering keeps both copies of a bank in one cluster.
inline PooledVsFeoResult pooled_vs_feo_test(const PanelDataset& data, Eigen::Index feature,
                                            CovarianceSpec spec) {
  data.validate();
  auto idx = detail::index_panel(data);
  const std::size_t nb = idx.ids.size();
  if (nb < 2) throw invalid_input("pooled_vs_feo_test: need at least 2 banks");
  const Eigen::Index n = static_cast<Eigen::Index>(data.rows.size());
  const Eigen::Index d = data.feature_dim();
  if (feature < 0 || feature >= d)
    throw invalid_input("pooled_vs_feo_test: feature index out of range");

  const Eigen::Index k_pool = 1 + d;
  const Eigen::Index k_fe = 1 + static_cast<Eigen::Index>(nb) - 1 + d;
  Matrix design = Matrix::Zero(2 * n, k_pool + k_fe);
  Matrix x = detail::features_matrix(data);
  Matrix u = centered_dummies(idx.row_banks, idx.shares);
  design.block(0, 0, n, 1).setOnes();
  design.block(0, 1, n, d) = x;
  design.block(n, k_pool, n, 1).setOnes();
  design.block(n, k_pool + 1, n, nb - 1) = u;
  design.block(n, k_pool + static_cast<Eigen::Index>(nb), n, d) = x;

  Vector y(2 * n), w(2 * n);
  y << detail::responses(data), detail::responses(data);
  w << detail::row_weights(data), detail::row_weights(data);
  std::vector<std::string> labels;
  labels.push_back("pool:intercept");
  for (Eigen::Index j = 0; j < d; ++j) labels.push_back("pool:x" + std::to_string(j));
  labels.push_back("feo:intercept");
  for (std::size_t s = 0; s + 1 < nb; ++s) labels.push_back("feo:fe:" + idx.ids[s]);
  for (Eigen::Index j = 0; j < d; ++j) labels.push_back("feo:x" + std::to_string(j));

  RegressionFit fit = weighted_least_squares(design, y, w, labels);
  auto base_clusters = cluster_labels(data, spec);
  std::vector<std::string> clusters(base_clusters);
  clusters.insert(clusters.end(), base_clusters.begin(), base_clusters.end());
  Matrix cov = clustered_covariance(fit, design, w, clusters);

  Matrix r_mat = Matrix::Zero(1, design.cols());
  r_mat(0, 1 + feature) = 1.0;
  r_mat(0, k_pool + static_cast<Eigen::Index>(nb) + feature) = -1.0;

  PooledVsFeoResult out;
  out.wald = wald_linear_restrictions(fit.coefficients, r_mat, Vector::Zero(1), cov);
  out.beta_pool_hat = fit.coefficients[1 + feature];
  out.beta_f_hat = fit.coefficients[k_pool + static_cast<Eigen::Index>(nb) + feature];
  out.diff_feo_minus_pooled = out.beta_f_hat - out.beta_pool_hat;
  out.diff_pooled_minus_feo = -out.diff_feo_minus_pooled;
  return out;
}

struct RelativeDifferences {
  double mean = 0.0;
  double median = 0.0;
  std::vector<double> per_row;
  std::size_t excluded = 0;  // rows with |response| below the floor
};

/// Per-row |(Yhat_A - Yhat_B) / y|; rows with |y| < 1e-12 are skipped
/// and counted.
inline RelativeDifferences relative_prediction_differences(const PanelDataset& data,
                                                           const LinearForecaster& fa,
                                                           const LinearForecaster& fb) {
  data.validate();
  auto idx = detail::index_panel(data);
  auto eval = [&](const LinearForecaster& f, std::size_t row) {
    bool needs_bank = f.kind == ForecastKind::SEO || f.kind == ForecastKind::PTF;
    return forecast(f, data.rows[row].features,
                    needs_bank ? std::optional<std::size_t>(idx.row_banks[row]) : std::nullopt);
  };
  RelativeDifferences out;
  for (std::size_t i = 0; i < data.rows.size(); ++i) {
    double y = data.rows[i].response;
    if (std::abs(y) < 1e-12) {
      ++out.excluded;
      continue;
    }
    out.per_row.push_back(std::abs((eval(fa, i) - eval(fb, i)) / y));
  }
  if (out.per_row.empty())
    throw invalid_input("relative_prediction_differences: all rows excluded");
  out.mean = 0.0;
  for (double v : out.per_row) out.mean += v;
  out.mean /= static_cast<double>(out.per_row.size());
  std::vector<double> sorted = out.per_row;
  std::sort(sorted.begin(), sorted.end());
  std::size_t m = sorted.size();
  out.median = m % 2 == 1 ? sorted[m / 2] : 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]);
  return out;
}

enum class LagMode { OneQuarter, FourQuarterAverage };

/// Autoregressive panel fit: response on (intercept or bank fixed effects,
/// lagged response, features). Rows lacking the lag are dropped.
inline PanelFit ar_panel_fit(const PanelDataset& data, LagMode lag_mode, PanelMode mode) {
  data.validate();
  std::map<std::pair<std::string, int>, double> resp;
  for (const auto& r : data.rows) resp[{r.bank_id, r.time}] = r.response;

  PanelDataset lagged;
  lagged.feature_names.push_back("lag_response");
  for (const auto& nm : data.feature_names) lagged.feature_names.push_back(nm);
  for (const auto& r : data.rows) {
    double lag = 0.0;
    bool ok = true;
    if (lag_mode == LagMode::OneQuarter) {
      auto it = resp.find({r.bank_id, r.time - 1});
      ok = it != resp.end();
      if (ok) lag = it->second;
    } else {
      for (int l = 1; l <= 4 && ok; ++l) {
        auto it = resp.find({r.bank_id, r.time - l});
        ok = it != resp.end();
        if (ok) lag += 0.25 * it->second;
      }
    }
    if (!ok) continue;
    PanelRow row = r;
    row.features = Vector(r.features.size() + 1);
    row.features[0] = lag;
    row.features.tail(r.features.size()) = r.features;
    lagged.rows.push_back(std::move(row));
  }
  if (lagged.rows.empty()) throw invalid_input("ar_panel_fit: no rows after lag construction");
  return fit_panel(lagged, mode);
}

}  // namespace fairagg
