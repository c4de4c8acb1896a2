#pragma once

// Plain-text report builders shared by the command-line tool and the
// golden-file tests. All numbers are formatted with 6 significant digits
// and LF line endings so identical inputs yield byte-identical tables.

#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "fairagg/additive.hpp"
#include "fairagg/diagnostics.hpp"
#include "fairagg/panel.hpp"
#include "fairagg/pipeline.hpp"

namespace fairagg {

inline std::string format_sig6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

inline std::string feature_label(const PanelDataset& data, Eigen::Index j) {
  return j < static_cast<Eigen::Index>(data.feature_names.size()) ? data.feature_names[j]
                                                                  : "x" + std::to_string(j);
}

inline void write_frame_csv(std::ostream& out, const PanelDataset& data) {
  out << "bank_id,time,weight,y";
  for (const auto& nm : data.feature_names) out << "," << nm;
  out << "\n";
  for (const auto& r : data.rows) {
    out << r.bank_id << "," << r.time << "," << format_sig6(r.weight) << ","
        << format_sig6(r.response);
    for (Eigen::Index j = 0; j < r.features.size(); ++j) out << "," << format_sig6(r.features[j]);
    out << "\n";
  }
}

/// Frame CSV with optional leading '#' comment lines; header
/// bank_id,time,weight,y,<features...>.
inline PanelDataset read_frame_csv(std::istream& in, const std::string& name) {
  std::string line;
  do {
    if (!std::getline(in, line)) throw invalid_input("panel file '" + name + "' is empty");
  } while (!line.empty() && line[0] == '#');
  auto header = detail::split_csv_line(line);
  if (header.size() < 5 || header[0] != "bank_id" || header[1] != "time" ||
      header[2] != "weight" || header[3] != "y")
    throw invalid_input("panel file '" + name + "': header must start with bank_id,time,weight,y");
  PanelDataset data;
  data.feature_names.assign(header.begin() + 4, header.end());
  const std::size_t d = data.feature_names.size();
  long lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    auto fields = detail::split_csv_line(line);
    if (fields.size() != header.size())
      throw invalid_input("panel file '" + name + "' line " + std::to_string(lineno) +
                          ": wrong field count");
    PanelRow r;
    r.bank_id = fields[0];
    r.time = std::stol(fields[1]);
    r.weight = std::stod(fields[2]);
    r.response = std::stod(fields[3]);
    r.features = Vector(d);
    for (std::size_t j = 0; j < d; ++j) r.features[j] = std::stod(fields[4 + j]);
    data.rows.push_back(std::move(r));
  }
  data.validate();
  return data;
}

/// Coefficient table: pooled and fixed-effects fits with clustered SEs.
inline std::string fit_report(const PanelDataset& data, CovarianceSpec spec) {
  std::ostringstream out;
  out << "model,term,estimate,std_error\n";
  for (auto mode : {PanelMode::Pooled, PanelMode::FixedEffects}) {
    auto fit = fit_panel(data, mode);
    Matrix cov = clustered_covariance(fit.regression, fit.design, fit.weights,
                                      cluster_labels(data, spec));
    const char* name = mode == PanelMode::Pooled ? "pooled" : "feo";
    for (Eigen::Index i = 0; i < fit.regression.coefficients.size(); ++i)
      out << name << "," << fit.regression.design_labels[i] << ","
          << format_sig6(fit.regression.coefficients[i]) << ","
          << format_sig6(std::sqrt(cov(i, i))) << "\n";
  }
  return out.str();
}

/// Per-feature pooled-vs-FEO comparison plus the relative-difference
/// summary of the two forecasters.
inline std::string compare_report(const PanelDataset& data, CovarianceSpec spec) {
  std::ostringstream out;
  out << "feature,beta_pool,beta_f,diff,p_value\n";
  for (Eigen::Index j = 0; j < data.feature_dim(); ++j) {
    auto res = pooled_vs_feo_test(data, j, spec);
    out << feature_label(data, j) << "," << format_sig6(res.beta_pool_hat) << ","
        << format_sig6(res.beta_f_hat) << "," << format_sig6(res.diff_pooled_minus_feo) << ","
        << format_sig6(res.wald.p_value) << "\n";
  }
  auto pooled = fit_panel(data, PanelMode::Pooled);
  auto feo = fit_panel(data, PanelMode::FixedEffects);
  auto rel = relative_prediction_differences(data, pooled.forecaster, feo.forecaster);
  out << "metric,value\n";
  out << "mean_relative_diff," << format_sig6(rel.mean) << "\n";
  out << "median_relative_diff," << format_sig6(rel.median) << "\n";
  out << "excluded_rows," << rel.excluded << "\n";
  return out.str();
}

/// Heterogeneity tests for the intercepts and every slope under both
/// clustering specs.
inline std::string heterogeneity_report(const PanelDataset& data) {
  std::ostringstream out;
  out << "target,cov_spec,statistic,dof,p_value\n";
  std::vector<std::pair<std::string, HeterogeneityTarget>> targets;
  targets.emplace_back("intercepts", HeterogeneityTarget::intercepts());
  for (Eigen::Index j = 0; j < data.feature_dim(); ++j)
    targets.emplace_back("slope:" + feature_label(data, j), HeterogeneityTarget::slope_of(j));
  for (const auto& [name, target] : targets)
    for (auto spec : {CovarianceSpec::BankClustered, CovarianceSpec::TimeClustered}) {
      auto res = heterogeneity_test(data, target, spec);
      out << name << "," << to_string(spec) << "," << format_sig6(res.statistic) << "," << res.dof
          << "," << format_sig6(res.p_value) << "\n";
    }
  return out.str();
}

/// Derivative/sign report over every method, parameter, bank, and target
/// (point forecast at x, per-bank mean forecasts, per-bank biases).
inline std::string sensitivity_report_table(const BankPopulation& pop, double x) {
  std::ostringstream out;
  out << "method,parameter,bank,target,value,sign_rule\n";
  std::vector<SensTarget> targets{SensTarget::point(x)};
  std::vector<std::string> target_names{"point"};
  for (std::size_t l = 0; l < pop.size(); ++l) {
    targets.push_back(SensTarget::mean_forecast(l));
    target_names.push_back("mean:b" + std::to_string(l));
    targets.push_back(SensTarget::bias(l));
    target_names.push_back("bias:b" + std::to_string(l));
  }
  for (auto method : {SensMethod::FEO, SensMethod::Pooled})
    for (auto param : {SensParameter::Mu, SensParameter::Alpha, SensParameter::Beta})
      for (std::size_t s = 0; s < pop.size(); ++s)
        for (std::size_t t = 0; t < targets.size(); ++t) {
          auto rep = sensitivity(pop, method, param, s, targets[t]);
          out << (method == SensMethod::FEO ? "feo" : "pooled") << ","
              << (param == SensParameter::Mu      ? "mu"
                  : param == SensParameter::Alpha ? "alpha"
                                                  : "beta")
              << ",b" << s << "," << target_names[t] << "," << format_sig6(rep.value) << ","
              << to_string(rep.sign) << "\n";
        }
  return out.str();
}

/// Pooled/FEO GAM comparison: nested F-test statistics plus the per-bank
/// offset table of the FEO fit.
inline std::string gam_report(const PanelDataset& data) {
  auto pooled = fit_gam(data, GamMode::Pooled);
  auto feo = fit_gam(data, GamMode::FEO);
  auto f = nested_f_test(pooled, feo);
  std::ostringstream out;
  out << "statistic,value\n";
  out << "f_stat," << format_sig6(f.f_stat) << "\n";
  out << "dof1," << format_sig6(f.dof1) << "\n";
  out << "dof2," << format_sig6(f.dof2) << "\n";
  out << "p_value," << format_sig6(f.p_value) << "\n";
  out << "pooled_ssr," << format_sig6(pooled.weighted_ssr) << "\n";
  out << "feo_ssr," << format_sig6(feo.weighted_ssr) << "\n";
  out << "bank,offset\n";
  for (const auto& [bank, offset] : feo.bank_offsets)
    out << bank << "," << format_sig6(offset) << "\n";
  return out.str();
}

}  // namespace fairagg
