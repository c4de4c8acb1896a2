#pragma once

// CSV ingestion and the regression-frame pipeline: loss/past-due/allowance
// rates, cleaning rules with an exclusion report, the macro first principal
// component, stress weights, and the lagged regression frame.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "fairagg/panel.hpp"

namespace fairagg {

/// Quarter index: year * 4 + (n - 1) for "YYYY-Qn".
inline int parse_quarter(const std::string& text) {
  if (text.size() != 7 || text[4] != '-' || (text[5] != 'Q' && text[5] != 'q'))
    throw invalid_input("quarter '" + text + "' is not in YYYY-Qn form");
  int year = std::stoi(text.substr(0, 4));
  int q = text[6] - '0';
  if (q < 1 || q > 4) throw invalid_input("quarter '" + text + "' is not in YYYY-Qn form");
  return year * 4 + (q - 1);
}

inline std::string format_quarter(int index) {
  return std::to_string(index / 4) + "-Q" + std::to_string(index % 4 + 1);
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline std::optional<double> parse_optional_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  std::size_t pos = 0;
  double v = std::stod(s, &pos);
  if (pos != s.size()) throw invalid_input("malformed numeric field '" + s + "'");
  return v;
}

/// Winsorization cutoff at probability p. Equals the type-7 quantile when
/// (n-1)p is integral; otherwise takes the nearest order statistic inward
/// (ceil for the lower tail, floor for the upper), which makes clamping a
/// fixed point and hence winsorization idempotent.
inline double winsor_bound(std::vector<double> v, double p, bool lower_tail) {
  if (v.empty()) throw invalid_input("winsor_bound of empty sample");
  std::sort(v.begin(), v.end());
  double h = (static_cast<double>(v.size()) - 1.0) * p;
  double idx = lower_tail ? std::ceil(h) : std::floor(h);
  return v[static_cast<std::size_t>(idx)];
}

}  // namespace detail

struct RawRow {
  std::string bank_id;
  int quarter = 0;
  std::string category;
  std::optional<double> charge_offs, recoveries, loans, past_due, allowances;
};

struct RawPanelTable {
  std::vector<RawRow> rows;
};

/// Reads the bank panel CSV (columns: bank_id, quarter, category,
/// charge_offs, recoveries, loans, past_due, allowances; empty = missing).
inline RawPanelTable read_raw_panel(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw invalid_input("panel CSV: missing header row");
  auto header = detail::split_csv_line(line);
  const std::vector<std::string> expected{"bank_id",    "quarter", "category", "charge_offs",
                                          "recoveries", "loans",   "past_due", "allowances"};
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const auto& name : expected)
    if (!col.count(name)) throw invalid_input("panel CSV: missing column '" + name + "'");

  RawPanelTable out;
  long lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto fields = detail::split_csv_line(line);
    if (fields.size() < header.size())
      throw invalid_input("panel CSV line " + std::to_string(lineno) + ": too few fields");
    RawRow r;
    r.bank_id = fields[col["bank_id"]];
    r.quarter = parse_quarter(fields[col["quarter"]]);
    r.category = fields[col["category"]];
    r.charge_offs = detail::parse_optional_double(fields[col["charge_offs"]]);
    r.recoveries = detail::parse_optional_double(fields[col["recoveries"]]);
    r.loans = detail::parse_optional_double(fields[col["loans"]]);
    r.past_due = detail::parse_optional_double(fields[col["past_due"]]);
    r.allowances = detail::parse_optional_double(fields[col["allowances"]]);
    if (r.loans && *r.loans < 0.0)
      throw invalid_input("panel CSV line " + std::to_string(lineno) + ": negative loans");
    out.rows.push_back(std::move(r));
  }
  return out;
}

inline RawPanelTable read_raw_panel(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw invalid_input("cannot open panel CSV '" + path + "'");
  return read_raw_panel(in);
}

struct RateRow {
  std::string bank_id;
  int quarter = 0;
  std::string category;
  double loss_rate = 0.0;
  double past_due_rate = 0.0;
  double allowance_rate = 0.0;
  double loans = 0.0;  // current-quarter loans, used downstream for weights
};

struct RatePanel {
  std::vector<RateRow> rows;
};

using ExclusionReport = std::map<std::string, long>;

inline std::string exclusion_report_json(const ExclusionReport& report) {
  std::ostringstream out;
  out << "{";
  bool first = true;
  for (const auto& [rule, count] : report) {
    if (!first) out << ",";
    first = false;
    out << "\"" << rule << "\":" << count;
  }
  out << "}";
  return out.str();
}

/// LossRate_t = (charge_offs_t - recoveries_t) / loans_{t-1}; PastDueRate
/// normalized the same way; AllowanceRate by total current loans across
/// categories. Rows without the prior-quarter denominator are dropped.
inline std::pair<RatePanel, ExclusionReport> compute_rates(const RawPanelTable& raw) {
  std::map<std::tuple<std::string, std::string, int>, double> loans_at;
  std::map<std::pair<std::string, int>, double> total_loans_at;
  for (const auto& r : raw.rows)
    if (r.loans) {
      loans_at[{r.bank_id, r.category, r.quarter}] = *r.loans;
      total_loans_at[{r.bank_id, r.quarter}] += *r.loans;
    }

  RatePanel out;
  ExclusionReport excluded;
  for (const auto& r : raw.rows) {
    auto prior = loans_at.find({r.bank_id, r.category, r.quarter - 1});
    if (prior == loans_at.end() || prior->second == 0.0) {
      ++excluded["missing_prior_loans"];
      continue;
    }
    if (!r.charge_offs || !r.recoveries || !r.past_due || !r.allowances || !r.loans) {
      ++excluded["missing_fields"];
      continue;
    }
    double total = total_loans_at[{r.bank_id, r.quarter}];
    if (total == 0.0) {
      ++excluded["zero_total_loans"];
      continue;
    }
    RateRow row;
    row.bank_id = r.bank_id;
    row.quarter = r.quarter;
    row.category = r.category;
    row.loss_rate = (*r.charge_offs - *r.recoveries) / prior->second;
    row.past_due_rate = *r.past_due / prior->second;
    row.allowance_rate = *r.allowances / total;
    row.loans = *r.loans;
    out.rows.push_back(std::move(row));
  }
  return {out, excluded};
}

/// Cleaning rules, applied in order: drop |LossRate| > 0.5; drop
/// PastDueRate > 0.2; winsorize PastDueRate at the 5th/95th percentiles
/// (type-7, per category); drop banks with fewer than 72 quarters.
inline std::pair<RatePanel, ExclusionReport> clean(const RatePanel& input) {
  ExclusionReport excluded;
  RatePanel kept;
  for (const auto& r : input.rows) {
    if (r.loss_rate < -0.5 || r.loss_rate > 0.5) {
      ++excluded["loss_rate_out_of_range"];
      continue;
    }
    if (r.past_due_rate > 0.2) {
      ++excluded["past_due_rate_above_20pct"];
      continue;
    }
    kept.rows.push_back(r);
  }

  // Winsorize PastDueRate per category.
  std::map<std::string, std::vector<double>> by_category;
  for (const auto& r : kept.rows) by_category[r.category].push_back(r.past_due_rate);
  std::map<std::string, std::pair<double, double>> bounds;
  for (auto& [cat, values] : by_category)
    bounds[cat] = {detail::winsor_bound(values, 0.05, true),
                   detail::winsor_bound(values, 0.95, false)};
  long winsorized = 0;
  for (auto& r : kept.rows) {
    auto [lo, hi] = bounds[r.category];
    double clamped = std::min(std::max(r.past_due_rate, lo), hi);
    if (clamped != r.past_due_rate) ++winsorized;
    r.past_due_rate = clamped;
  }
  if (winsorized > 0) excluded["past_due_rate_winsorized"] = winsorized;

  // Minimum-history rule: banks need 72 distinct quarters.
  std::map<std::string, std::set<int>> quarters;
  for (const auto& r : kept.rows) quarters[r.bank_id].insert(r.quarter);
  RatePanel out;
  for (const auto& r : kept.rows) {
    if (quarters[r.bank_id].size() < 72) {
      ++excluded["bank_history_below_72_quarters"];
      continue;
    }
    out.rows.push_back(r);
  }
  if (out.rows.empty()) throw invalid_input("clean: no rows survive the cleaning rules");
  return {out, excluded};
}

struct MacroTable {
  std::vector<int> quarters;          // ascending, no gaps
  std::vector<std::string> columns;
  Matrix values;                      // quarters x columns

  void validate() const {
    if (values.rows() != static_cast<Eigen::Index>(quarters.size()) ||
        values.cols() != static_cast<Eigen::Index>(columns.size()))
      throw invalid_input("MacroTable: shape mismatch");
    for (std::size_t i = 1; i < quarters.size(); ++i)
      if (quarters[i] != quarters[i - 1] + 1)
        throw invalid_input("MacroTable: gap in the quarter index at " +
                            format_quarter(quarters[i - 1] + 1));
  }
};

/// Reads the macro CSV: column `quarter` plus one column per macro series.
inline MacroTable read_macro_table(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw invalid_input("macro CSV: missing header row");
  auto header = detail::split_csv_line(line);
  if (header.empty() || header[0] != "quarter")
    throw invalid_input("macro CSV: first column must be 'quarter'");
  MacroTable out;
  out.columns.assign(header.begin() + 1, header.end());
  std::vector<Vector> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto fields = detail::split_csv_line(line);
    if (fields.size() != header.size())
      throw invalid_input("macro CSV: row with wrong field count");
    out.quarters.push_back(parse_quarter(fields[0]));
    Vector v(out.columns.size());
    for (std::size_t j = 0; j < out.columns.size(); ++j) {
      auto parsed = detail::parse_optional_double(fields[j + 1]);
      if (!parsed) throw invalid_input("macro CSV: missing value in column " + out.columns[j]);
      v[j] = *parsed;
    }
    rows.push_back(std::move(v));
  }
  out.values = Matrix(rows.size(), out.columns.size());
  for (std::size_t i = 0; i < rows.size(); ++i) out.values.row(i) = rows[i];
  out.validate();
  return out;
}

inline MacroTable read_macro_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw invalid_input("cannot open macro CSV '" + path + "'");
  return read_macro_table(in);
}

struct MacroPc1 {
  Vector loadings;                 // unit norm, one per macro column
  double top_eigenvalue = 0.0;     // of the fit-range correlation matrix
  std::map<int, double> series;    // quarter -> PC1 score (frozen loadings)
};

/// Standardizes each column over fit_range, takes the top eigenvector of
/// the correlation matrix, fixes the sign so the designated column's
/// loading is positive, and extends the series over the full table with
/// frozen loadings and standardization. Scores are scaled to unit variance
/// over the fit range.
inline MacroPc1 macro_pc1(const MacroTable& macro, int fit_lo, int fit_hi,
                          const std::string& sign_column) {
  macro.validate();
  std::vector<Eigen::Index> fit_rows;
  for (std::size_t i = 0; i < macro.quarters.size(); ++i)
    if (macro.quarters[i] >= fit_lo && macro.quarters[i] <= fit_hi)
      fit_rows.push_back(static_cast<Eigen::Index>(i));
  if (fit_rows.size() < 2) throw invalid_input("macro_pc1: fit range covers fewer than 2 quarters");
  const Eigen::Index k = macro.values.cols();
  Eigen::Index sign_idx = -1;
  for (Eigen::Index j = 0; j < k; ++j)
    if (macro.columns[j] == sign_column) sign_idx = j;
  if (sign_idx < 0) throw invalid_input("macro_pc1: sign column '" + sign_column + "' not found");

  Matrix fit(fit_rows.size(), k);
  for (std::size_t i = 0; i < fit_rows.size(); ++i) fit.row(i) = macro.values.row(fit_rows[i]);
  Vector mean = fit.colwise().mean();
  Vector sd(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    double var = (fit.col(j).array() - mean[j]).square().sum() / (fit.rows() - 1.0);
    if (var <= 0.0)
      throw numeric_error("macro_pc1: column '" + macro.columns[j] + "' has zero variance");
    sd[j] = std::sqrt(var);
  }
  Matrix z = (fit.rowwise() - mean.transpose()).array().rowwise() / sd.transpose().array();
  Matrix corr = z.transpose() * z / (fit.rows() - 1.0);
  Eigen::SelfAdjointEigenSolver<Matrix> es(corr);
  if (es.info() != Eigen::Success) throw numeric_error("macro_pc1: eigendecomposition failed");
  Vector top = es.eigenvectors().col(k - 1);  // eigenvalues ascending
  if (top[sign_idx] < 0.0) top = -top;
  double lambda_max = es.eigenvalues()[k - 1];
  if (lambda_max <= 0.0) throw numeric_error("macro_pc1: degenerate correlation matrix");

  MacroPc1 out;
  out.loadings = top;
  out.top_eigenvalue = lambda_max;
  double scale = 1.0 / std::sqrt(lambda_max);
  for (std::size_t i = 0; i < macro.quarters.size(); ++i) {
    Vector zi = (macro.values.row(i).transpose() - mean).array() / sd.array();
    out.series[macro.quarters[i]] = scale * top.dot(zi);
  }
  return out;
}

/// Weights proportional to exp(lambda * pc) * loans with
/// lambda = ln(ratio) / (max - min of pc). Computed as
/// ratio^((pc - min) / (max - min)) * loans — the same up to a constant
/// positive factor (irrelevant to any weighted fit) — so the
/// worst-to-best weight ratio at equal loans is exactly `ratio`.
inline std::vector<double> stress_weights(const std::vector<double>& macro_pc,
                                          const std::vector<double>& loans, double ratio = 2.0) {
  if (macro_pc.size() != loans.size())
    throw invalid_input("stress_weights: series length mismatch");
  if (ratio <= 1.0) throw invalid_input("stress_weights: ratio must exceed 1");
  double lo = *std::min_element(macro_pc.begin(), macro_pc.end());
  double hi = *std::max_element(macro_pc.begin(), macro_pc.end());
  if (hi <= lo) throw invalid_input("stress_weights: macro series is constant");
  std::vector<double> out(macro_pc.size());
  for (std::size_t i = 0; i < macro_pc.size(); ++i)
    out[i] = std::pow(ratio, (macro_pc[i] - lo) / (hi - lo)) * loans[i];
  return out;
}

/// Joins LossRate at t with (PastDueRate, MacroPC) at t - lag per bank for
/// one loan category; attaches stress weights computed at t.
inline std::pair<PanelDataset, ExclusionReport> build_regression_frame(
    const RatePanel& rates, const std::string& category, const std::map<int, double>& macro_pc,
    int lag = 4, double stress_ratio = 2.0) {
  if (lag < 0) throw invalid_input("build_regression_frame: lag must be nonnegative");
  std::map<std::pair<std::string, int>, const RateRow*> lookup;
  for (const auto& r : rates.rows)
    if (r.category == category) lookup[{r.bank_id, r.quarter}] = &r;
  if (lookup.empty())
    throw invalid_input("build_regression_frame: no rows for category '" + category + "'");

  ExclusionReport excluded;
  struct Pending {
    PanelRow row;
    double pc_at_t = 0.0;
    double loans = 0.0;
  };
  std::vector<Pending> pending;
  for (const auto& [key, r] : lookup) {
    auto lagged = lookup.find({r->bank_id, r->quarter - lag});
    if (lagged == lookup.end()) {
      ++excluded["missing_lagged_feature"];
      continue;
    }
    auto pc_lag = macro_pc.find(r->quarter - lag);
    auto pc_now = macro_pc.find(r->quarter);
    if (pc_lag == macro_pc.end() || pc_now == macro_pc.end()) {
      ++excluded["missing_macro_value"];
      continue;
    }
    Pending p;
    p.row.bank_id = r->bank_id;
    p.row.time = r->quarter;
    p.row.response = r->loss_rate;
    p.row.features = Vector(2);
    p.row.features << lagged->second->past_due_rate, pc_lag->second;
    p.pc_at_t = pc_now->second;
    p.loans = r->loans;
    pending.push_back(std::move(p));
  }
  if (pending.empty()) throw invalid_input("build_regression_frame: empty frame");

  std::vector<double> pcs, loans;
  for (const auto& p : pending) {
    pcs.push_back(p.pc_at_t);
    loans.push_back(p.loans);
  }
  std::vector<double> weights = stress_weights(pcs, loans, stress_ratio);
  PanelDataset out;
  out.feature_names = {"PastDueRate_lag", "MacroPC_lag"};
  for (std::size_t i = 0; i < pending.size(); ++i) {
    pending[i].row.weight = weights[i];
    out.rows.push_back(std::move(pending[i].row));
  }
  out.validate();
  return {out, excluded};
}

struct PipelineResult {
  PanelDataset frame;
  MacroPc1 pc1;
  ExclusionReport exclusions;  // merged across stages
};

/// Full chain: compute_rates -> clean -> macro_pc1 -> stress-weighted
/// regression frame for one loan category.
inline PipelineResult run_pipeline(const RawPanelTable& raw, const MacroTable& macro,
                                   const std::string& category, const std::string& sign_column,
                                   int fit_lo, int fit_hi, int lag = 4, double stress_ratio = 2.0) {
  PipelineResult out;
  auto [rates, ex_rates] = compute_rates(raw);
  auto [cleaned, ex_clean] = clean(rates);
  out.pc1 = macro_pc1(macro, fit_lo, fit_hi, sign_column);
  auto [frame, ex_frame] = build_regression_frame(cleaned, category, out.pc1.series, lag,
                                                  stress_ratio);
  out.frame = std::move(frame);
  for (const auto* ex : {&ex_rates, &ex_clean, &ex_frame})
    for (const auto& [rule, count] : *ex) out.exclusions[rule] += count;
  return out;
}

}  // namespace fairagg
