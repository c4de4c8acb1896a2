#pragma once

// Backfitting additive models: pluggable univariate smoothers, pooled and
// fixed-effects GAMs (bank offsets fitted then discarded), a nested F-test,
// and the nonlinear misdirection diagnostics.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "fairagg/panel.hpp"
#include "fairagg/special.hpp"

namespace fairagg {

/// A fitted univariate smooth, weighted-mean-centered on its training x.
struct SmoothFunction {
  std::function<double(double)> eval;
  double dof = 1.0;

  double operator()(double x) const { return eval(x); }
};

struct Smoother {
  virtual ~Smoother() = default;
  virtual SmoothFunction fit(const Vector& x, const Vector& partial_residual,
                             const Vector& weights) const = 0;
};

/// Weighted simple regression; the centered smooth is b (x - weighted mean).
struct LinearSmoother final : Smoother {
  SmoothFunction fit(const Vector& x, const Vector& r, const Vector& w) const override {
    double wsum = w.sum();
    double xbar = w.dot(x) / wsum;
    double rbar = w.dot(r) / wsum;
    double sxx = (w.array() * (x.array() - xbar).square()).sum();
    if (sxx <= 0.0) throw numeric_error("LinearSmoother: feature is constant");
    double b = (w.array() * (x.array() - xbar) * (r.array() - rbar)).sum() / sxx;
    SmoothFunction f;
    f.dof = 1.0;
    f.eval = [b, xbar](double xv) { return b * (xv - xbar); };
    return f;
  }
};

/// Equal-count bins by training quantiles; value = weighted mean of the
/// partial residual in the bin, then centered.
struct RunningMeanBins final : Smoother {
  explicit RunningMeanBins(int bins) : bins_(bins) {
    if (bins < 2) throw invalid_input("RunningMeanBins: need at least 2 bins");
  }

  SmoothFunction fit(const Vector& x, const Vector& r, const Vector& w) const override {
    const Eigen::Index n = x.size();
    std::vector<double> sorted(x.data(), x.data() + n);
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> edges;  // upper edges of bins 0..bins-2
    for (int b = 1; b < bins_; ++b)
      edges.push_back(sorted[std::min<std::size_t>(n - 1, n * b / bins_)]);
    auto bin_of = [edges](double xv) {
      return static_cast<int>(std::upper_bound(edges.begin(), edges.end(), xv) - edges.begin());
    };
    std::vector<double> num(bins_, 0.0), den(bins_, 0.0);
    for (Eigen::Index i = 0; i < n; ++i) {
      int b = bin_of(x[i]);
      num[b] += w[i] * r[i];
      den[b] += w[i];
    }
    std::vector<double> level(bins_, 0.0);
    for (int b = 0; b < bins_; ++b) level[b] = den[b] > 0 ? num[b] / den[b] : 0.0;
    // Center on the training sample.
    double mean = 0.0, wsum = w.sum();
    for (Eigen::Index i = 0; i < n; ++i) mean += w[i] * level[bin_of(x[i])];
    mean /= wsum;
    for (double& v : level) v -= mean;
    SmoothFunction f;
    f.dof = bins_ - 1.0;
    f.eval = [level, bin_of](double xv) { return level[bin_of(xv)]; };
    return f;
  }

 private:
  int bins_;
};

namespace detail {

/// Cubic B-spline basis value for basis function i over knot vector t.
inline double bspline_basis(const std::vector<double>& t, std::size_t i, int k, double x) {
  if (k == 0) return (x >= t[i] && x < t[i + 1]) ? 1.0 : 0.0;
  double left = 0.0, right = 0.0;
  double dl = t[i + k] - t[i];
  if (dl > 0) left = (x - t[i]) / dl * bspline_basis(t, i, k - 1, x);
  double dr = t[i + k + 1] - t[i + 1];
  if (dr > 0) right = (t[i + k + 1] - x) / dr * bspline_basis(t, i + 1, k - 1, x);
  return left + right;
}

}  // namespace detail

/// Penalized cubic B-spline (quantile interior knots, second-difference
/// coefficient penalty). The penalty is tuned by bisection until the trace
/// of the smoother matrix matches the target effective dof within 0.01.
struct CubicSplinePenalized final : Smoother {
  explicit CubicSplinePenalized(double target_edof = 4.0, int interior_knots = 20)
      : target_(target_edof), interior_(interior_knots) {
    if (target_edof < 1.5) throw invalid_input("CubicSplinePenalized: target dof too small");
  }

  SmoothFunction fit(const Vector& x, const Vector& r, const Vector& w) const override {
    const Eigen::Index n = x.size();
    std::vector<double> sorted(x.data(), x.data() + n);
    std::sort(sorted.begin(), sorted.end());
    double lo = sorted.front(), hi = sorted.back();
    if (hi <= lo) throw numeric_error("CubicSplinePenalized: feature is constant");
    // Pad the domain slightly so boundary points evaluate cleanly.
    double pad = 1e-6 * (hi - lo);
    lo -= pad;
    hi += pad;
    int m = std::min<int>(interior_, static_cast<int>(n / 4));
    m = std::max(m, 2);
    std::vector<double> knots;
    for (int i = 0; i < 4; ++i) knots.push_back(lo);
    for (int j = 1; j <= m; ++j) {
      double q = sorted[std::min<std::size_t>(n - 1, static_cast<std::size_t>(
                                                         n * static_cast<double>(j) / (m + 1)))];
      q = std::min(std::max(q, lo), hi);
      if (q > knots.back()) knots.push_back(q);
    }
    for (int i = 0; i < 4; ++i) knots.push_back(hi);
    const std::size_t nb = knots.size() - 4;  // cubic basis count

    Matrix basis(n, nb);
    for (Eigen::Index i = 0; i < n; ++i)
      for (std::size_t j = 0; j < nb; ++j)
        basis(i, j) = detail::bspline_basis(knots, j, 3, std::min(x[i], hi - 1e-12 * (hi - lo)));

    Matrix diff = Matrix::Zero(nb - 2, nb);
    for (std::size_t i = 0; i + 2 < nb; ++i) {
      diff(i, i) = 1.0;
      diff(i, i + 1) = -2.0;
      diff(i, i + 2) = 1.0;
    }
    Matrix penalty = diff.transpose() * diff;
    Matrix btwb = basis.transpose() * w.asDiagonal() * basis;
    Vector btwr = basis.transpose() * (w.asDiagonal() * r);

    auto edof_at = [&](double lambda) {
      Matrix sys = btwb + lambda * penalty;
      return (sys.ldlt().solve(btwb)).trace();
    };
    double target = std::min(target_, static_cast<double>(nb) - 0.5);
    double log_lo = -12.0, log_hi = 12.0;
    // edof decreases in lambda; expand until bracketed.
    while (edof_at(std::pow(10.0, log_lo)) < target && log_lo > -30) log_lo -= 4;
    while (edof_at(std::pow(10.0, log_hi)) > target && log_hi < 30) log_hi += 4;
    double lambda = 1.0;
    for (int it = 0; it < 200; ++it) {
      double mid = 0.5 * (log_lo + log_hi);
      lambda = std::pow(10.0, mid);
      double e = edof_at(lambda);
      if (std::abs(e - target) < 0.01) break;
      (e > target ? log_lo : log_hi) = mid;
    }
    Vector coef = (btwb + lambda * penalty).ldlt().solve(btwr);

    double wsum = w.sum();
    double mean = w.dot(basis * coef) / wsum;
    std::vector<double> cvec(coef.data(), coef.data() + coef.size());
    double clamp_hi = hi - 1e-12 * (hi - lo);
    SmoothFunction f;
    f.dof = target_;
    f.eval = [knots, cvec, mean, lo, clamp_hi](double xv) {
      double xc = std::min(std::max(xv, lo), clamp_hi);
      double acc = -mean;
      for (std::size_t j = 0; j < cvec.size(); ++j)
        acc += cvec[j] * detail::bspline_basis(knots, j, 3, xc);
      return acc;
    };
    return f;
  }

 private:
  double target_;
  int interior_;
};

struct TermSpec {
  std::string label;
  Eigen::Index feature = 0;  // index into PanelRow::features
  std::shared_ptr<Smoother> smoother;
};

struct FittedTerm {
  std::string label;
  Eigen::Index feature = 0;
  SmoothFunction fn;
};

struct AdditiveModel {
  double f0 = 0.0;
  std::vector<FittedTerm> terms;
  std::map<std::string, double> bank_offsets;  // empty unless requested
  bool converged = false;
  int sweeps = 0;
  double max_change_last_sweep = 0.0;
  double weighted_ssr = 0.0;  // includes offsets when fitted
  long n_rows = 0;
  double residual_dof = 0.0;  // N - 1 - sum(term dof) - (S-1 if offsets)

  /// Equal-treatment forecast: offsets discarded.
  double predict(const Vector& features) const {
    double acc = f0;
    for (const auto& t : terms) acc += t.fn(features[t.feature]);
    return acc;
  }

  /// Full fitted value including the bank offset.
  double fitted(const PanelRow& row) const {
    double acc = predict(row.features);
    auto it = bank_offsets.find(row.bank_id);
    if (it != bank_offsets.end()) acc += it->second;
    return acc;
  }
};

/// Cyclic backfitting: f0 is the weighted response mean; each sweep refits
/// every term on its partial residual, and (optionally) the per-bank
/// offsets as centered within-bank weighted means. Stops when the largest
/// weighted-RMS change of any component falls below tol.
inline AdditiveModel backfit(const PanelDataset& data, const std::vector<TermSpec>& terms,
                             bool include_bank_offsets, double tol = 1e-8,
                             int max_sweeps = 200) {
  data.validate();
  if (terms.empty()) throw invalid_input("backfit: need at least one term");
  if (tol <= 0.0) throw invalid_input("backfit: tol must be positive");
  const Eigen::Index n = static_cast<Eigen::Index>(data.rows.size());
  Vector y = detail::responses(data);
  Vector w = detail::row_weights(data);
  const double wsum = w.sum();

  AdditiveModel model;
  model.n_rows = n;
  model.f0 = w.dot(y) / wsum;
  for (const auto& t : terms) {
    if (t.feature < 0 || t.feature >= data.feature_dim())
      throw invalid_input("backfit: term '" + t.label + "' has an out-of-range feature index");
    model.terms.push_back({t.label, t.feature, SmoothFunction{[](double) { return 0.0; }, 0.0}});
  }

  std::vector<Vector> term_values(terms.size(), Vector::Zero(n));
  std::vector<Vector> xcols(terms.size());
  for (std::size_t j = 0; j < terms.size(); ++j) {
    xcols[j] = Vector(n);
    for (Eigen::Index i = 0; i < n; ++i) xcols[j][i] = data.rows[i].features[terms[j].feature];
  }
  auto idx = detail::index_panel(data);
  Vector offset_values = Vector::Zero(n);
  std::vector<double> offsets(idx.ids.size(), 0.0);

  Vector resid = y.array() - model.f0;

  for (int sweep = 1; sweep <= max_sweeps; ++sweep) {
    double max_change = 0.0;
    for (std::size_t j = 0; j < terms.size(); ++j) {
      Vector partial = resid + term_values[j];
      SmoothFunction fn = terms[j].smoother->fit(xcols[j], partial, w);
      Vector updated(n);
      for (Eigen::Index i = 0; i < n; ++i) updated[i] = fn(xcols[j][i]);
      double change =
          std::sqrt((w.array() * (updated - term_values[j]).array().square()).sum() / wsum);
      max_change = std::max(max_change, change);
      resid = partial - updated;
      term_values[j] = std::move(updated);
      model.terms[j].fn = std::move(fn);
      if (!resid.allFinite())
        throw numeric_error("backfit: non-finite values in sweep " + std::to_string(sweep));
    }
    if (include_bank_offsets) {
      Vector partial = resid + offset_values;
      std::vector<double> num(idx.ids.size(), 0.0), den(idx.ids.size(), 0.0);
      for (Eigen::Index i = 0; i < n; ++i) {
        num[idx.row_banks[i]] += w[i] * partial[i];
        den[idx.row_banks[i]] += w[i];
      }
      double grand = 0.0;
      for (std::size_t s = 0; s < idx.ids.size(); ++s) {
        offsets[s] = den[s] > 0 ? num[s] / den[s] : 0.0;
        grand += den[s] / wsum * offsets[s];
      }
      for (double& o : offsets) o -= grand;
      Vector updated(n);
      for (Eigen::Index i = 0; i < n; ++i) updated[i] = offsets[idx.row_banks[i]];
      double change =
          std::sqrt((w.array() * (updated - offset_values).array().square()).sum() / wsum);
      max_change = std::max(max_change, change);
      resid = partial - updated;
      offset_values = std::move(updated);
    }
    model.sweeps = sweep;
    model.max_change_last_sweep = max_change;
    if (max_change < tol) {
      model.converged = true;
      break;
    }
  }

  if (include_bank_offsets)
    for (std::size_t s = 0; s < idx.ids.size(); ++s) model.bank_offsets[idx.ids[s]] = offsets[s];
  model.weighted_ssr = (w.array() * resid.array().square()).sum();
  double term_dof = 0.0;
  for (const auto& t : model.terms) term_dof += t.fn.dof;
  model.residual_dof = static_cast<double>(n) - 1.0 - term_dof -
                       (include_bank_offsets ? static_cast<double>(idx.ids.size()) - 1.0 : 0.0);
  return model;
}

enum class GamMode { Pooled, FEO };

/// Default term specification: smooths of the first two features and their
/// product (appended as a derived feature). FEO mode fits bank offsets and
/// discards them in the equal-treatment forecast.
inline std::vector<TermSpec> default_gam_terms(double spline_dof = 4.0) {
  return {
      {"s(x0)", 0, std::make_shared<CubicSplinePenalized>(spline_dof)},
      {"s(x1)", 1, std::make_shared<CubicSplinePenalized>(spline_dof)},
      {"s(x0*x1)", 2, std::make_shared<CubicSplinePenalized>(spline_dof)},
  };
}

/// Appends the product feature x0*x1 used by the default term spec.
inline PanelDataset with_product_feature(const PanelDataset& data) {
  if (data.feature_dim() < 2)
    throw invalid_input("with_product_feature: need at least 2 features");
  PanelDataset out = data;
  out.feature_names.push_back(
      (data.feature_names.size() > 1 ? data.feature_names[0] + "*" + data.feature_names[1]
                                     : "x0*x1"));
  for (auto& r : out.rows) {
    Vector f(r.features.size() + 1);
    f.head(r.features.size()) = r.features;
    f[r.features.size()] = r.features[0] * r.features[1];
    r.features = std::move(f);
  }
  return out;
}

inline AdditiveModel fit_gam(const PanelDataset& data, GamMode mode,
                             std::vector<TermSpec> term_spec = {}, double tol = 1e-8,
                             int max_sweeps = 200) {
  if (term_spec.empty()) {
    PanelDataset augmented = with_product_feature(data);
    return backfit(augmented, default_gam_terms(), mode == GamMode::FEO, tol, max_sweeps);
  }
  if (mode == GamMode::FEO && data.bank_ids().size() < 2)
    throw invalid_input("fit_gam: FEO mode needs at least 2 banks");
  return backfit(data, term_spec, mode == GamMode::FEO, tol, max_sweeps);
}

struct NestedFResult {
  double f_stat = 0.0;
  double dof1 = 0.0;
  double dof2 = 0.0;
  double p_value = 1.0;
};

/// F = ((SSR_small - SSR_big)/ddof) / (SSR_big/residual dof of big), with
/// penalized terms contributing their target dof.
inline NestedFResult nested_f_test(const AdditiveModel& small, const AdditiveModel& big) {
  if (small.n_rows != big.n_rows)
    throw invalid_input("nested_f_test: models fitted on different datasets");
  for (const auto& t : small.terms) {
    bool found = false;
    for (const auto& tb : big.terms)
      if (tb.label == t.label) found = true;
    if (!found)
      throw invalid_input("nested_f_test: small model term '" + t.label +
                          "' missing from big model");
  }
  if (big.weighted_ssr > small.weighted_ssr + 1e-8 * std::max(1.0, small.weighted_ssr))
    throw numeric_error("nested_f_test: big model has larger SSR; nesting violated");
  NestedFResult out;
  out.dof1 = small.residual_dof - big.residual_dof;
  out.dof2 = big.residual_dof;
  if (out.dof1 <= 0.0) throw invalid_input("nested_f_test: models have identical complexity");
  double num = std::max(small.weighted_ssr - big.weighted_ssr, 0.0) / out.dof1;
  double den = big.weighted_ssr / out.dof2;
  out.f_stat = den > 0 ? num / den : 0.0;
  out.p_value = f_sf(out.f_stat, out.dof1, out.dof2);
  return out;
}

struct NonlinearMisdirection {
  double mse_feo = 0.0;
  double mse_gamma = 0.0;
  Vector residual_feature_cov;  // cov(Yhat_F - y, x - within-bank mean), per feature
  double cov_a = 0.0;  // cov(gamma, estimated E[f1(S) | X])
  double cov_b = 0.0;  // cov(within-bank mean of gamma, f1(S))
};

/// Sample analogs of the nonlinear misdirection covariances. The
/// feature-implied bank effect E[f1(S)|X] is estimated by backfitting the
/// per-row offsets on the model's own smooth terms.
inline NonlinearMisdirection nonlinear_misdirection_check(const PanelDataset& data,
                                                          const AdditiveModel& feo,
                                                          const Vector& gamma) {
  if (feo.bank_offsets.empty())
    throw invalid_input("nonlinear_misdirection_check: model has no bank offsets");
  data.validate();
  const Eigen::Index n = static_cast<Eigen::Index>(data.rows.size());
  if (gamma.size() != n)
    throw invalid_input("nonlinear_misdirection_check: gamma must have one value per row");
  Vector w = detail::row_weights(data);
  const double wsum = w.sum();
  auto idx = detail::index_panel(data);

  NonlinearMisdirection out;
  Vector err(n), f1_row(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    err[i] = feo.predict(data.rows[i].features) - data.rows[i].response;
    f1_row[i] = feo.bank_offsets.at(data.rows[i].bank_id);
  }
  out.mse_feo = (w.array() * err.array().square()).sum() / wsum;
  out.mse_gamma = (w.array() * (err + gamma).array().square()).sum() / wsum;

  // cov(error, within-bank-demeaned feature) per feature.
  const Eigen::Index d = data.feature_dim();
  out.residual_feature_cov = Vector::Zero(d);
  double err_mean = w.dot(err) / wsum;
  for (Eigen::Index j = 0; j < d; ++j) {
    std::vector<double> bank_wx(idx.ids.size(), 0.0), bank_w(idx.ids.size(), 0.0);
    for (Eigen::Index i = 0; i < n; ++i) {
      bank_wx[idx.row_banks[i]] += w[i] * data.rows[i].features[j];
      bank_w[idx.row_banks[i]] += w[i];
    }
    double acc = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      double within = data.rows[i].features[j] - bank_wx[idx.row_banks[i]] / bank_w[idx.row_banks[i]];
      acc += w[i] * (err[i] - err_mean) * within;
    }
    out.residual_feature_cov[j] = acc / wsum;
  }

  // Estimate E[f1(S)|X] by backfitting the row-level offsets on the same
  // terms, then correlate with gamma.
  PanelDataset f1_data = data;
  for (Eigen::Index i = 0; i < n; ++i) f1_data.rows[i].response = f1_row[i];
  std::vector<TermSpec> specs;
  for (const auto& t : feo.terms)
    specs.push_back({t.label, t.feature, std::make_shared<RunningMeanBins>(20)});
  AdditiveModel f1_given_x = backfit(f1_data, specs, /*include_bank_offsets=*/false);
  Vector f1_hat(n);
  for (Eigen::Index i = 0; i < n; ++i) f1_hat[i] = f1_given_x.predict(data.rows[i].features);

  double gm = w.dot(gamma) / wsum, fm = w.dot(f1_hat) / wsum;
  out.cov_a = (w.array() * (gamma.array() - gm) * (f1_hat.array() - fm)).sum() / wsum;

  // cov over banks of the within-bank mean of gamma with f1(S).
  std::vector<double> gnum(idx.ids.size(), 0.0), gden(idx.ids.size(), 0.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    gnum[idx.row_banks[i]] += w[i] * gamma[i];
    gden[idx.row_banks[i]] += w[i];
  }
  double acc = 0.0, f1_mean = 0.0;
  for (std::size_t s = 0; s < idx.ids.size(); ++s)
    f1_mean += gden[s] / wsum * feo.bank_offsets.at(idx.ids[s]);
  for (std::size_t s = 0; s < idx.ids.size(); ++s) {
    double gbar = gden[s] > 0 ? gnum[s] / gden[s] : 0.0;
    acc += gden[s] / wsum * (gbar - gm) * (feo.bank_offsets.at(idx.ids[s]) - f1_mean);
  }
  out.cov_b = acc;
  return out;
}

}  // namespace fairagg
