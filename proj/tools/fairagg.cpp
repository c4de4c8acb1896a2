// fairagg: command-line front end for the fair-aggregation toolkit.
//
// Subcommands: simulate, fit, compare, test, sensitivity, gam. Configuration
// comes from a flat key=value file with one section per subcommand; flags
// override file values. All numeric output uses 6 significant digits and LF
// endings so reruns are byte-identical. Errors go to stderr as single-line
// JSON; exit codes: 0 success, 1 data/numeric error, 2 usage error.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fairagg/additive.hpp"
#include "fairagg/diagnostics.hpp"
#include "fairagg/estimators.hpp"
#include "fairagg/panel.hpp"
#include "fairagg/pipeline.hpp"
#include "fairagg/report.hpp"
#include "fairagg/scenarios.hpp"
#include "fairagg/simulation.hpp"

namespace {

constexpr const char* kVersion = "1.0.0";

struct usage_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------- config ---

using Config = std::map<std::string, std::string>;

/// Flat key=value lines; [section] headers prefix subsequent keys with
/// "section.". '#' starts a comment.
Config parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw fairagg::invalid_input("cannot open config file '" + path + "'");
  Config cfg;
  std::string line, section;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    auto last = line.find_last_not_of(" \t");
    line = line.substr(first, last - first + 1);
    if (line.front() == '[' && line.back() == ']') {
      section = line.substr(1, line.size() - 2);
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw usage_error("config line " + std::to_string(lineno) + ": expected key=value");
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    auto trim = [](std::string& s) {
      auto a = s.find_first_not_of(" \t");
      auto b = s.find_last_not_of(" \t");
      s = a == std::string::npos ? "" : s.substr(a, b - a + 1);
    };
    trim(key);
    trim(value);
    if (key.empty()) throw usage_error("config line " + std::to_string(lineno) + ": empty key");
    cfg[section.empty() ? key : section + "." + key] = value;
  }
  return cfg;
}

/// Keys relevant to `section`: bare keys and "section.key" entries, the
/// latter winning. Rejects keys for unknown sections or outside the valid
/// set.
Config section_config(const Config& cfg, const std::string& section,
                      const std::vector<std::string>& valid_keys) {
  static const std::vector<std::string> kSections{"simulate", "fit",         "compare",
                                                 "test",     "sensitivity", "gam"};
  auto is_valid = [&](const std::string& k) {
    for (const auto& v : valid_keys)
      if (k == v) return true;
    return false;
  };
  Config out;
  for (const auto& [key, value] : cfg) {
    auto dot = key.find('.');
    std::string sec = dot == std::string::npos ? "" : key.substr(0, dot);
    std::string bare = dot == std::string::npos ? key : key.substr(dot + 1);
    if (!sec.empty()) {
      bool known = false;
      for (const auto& s : kSections) known = known || sec == s;
      if (!known) throw usage_error("unknown config section '" + sec + "'");
      if (sec != section) continue;  // other subcommands' settings are fine
    }
    if (!is_valid(bare)) {
      std::string valid;
      for (const auto& v : valid_keys) valid += (valid.empty() ? "" : ", ") + v;
      throw usage_error("unknown config key '" + key + "' for subcommand '" + section +
                        "'; valid keys: " + valid);
    }
    if (sec == section || !out.count(bare)) out[bare] = value;
  }
  return out;
}

/// FNV-1a over the sorted effective settings. Path-valued keys are skipped
/// so the hash identifies the analysis configuration, not file locations.
std::uint64_t config_hash(const Config& cfg) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ULL;
    }
  };
  for (const auto& [key, value] : cfg) {
    if (key == "panel" || key == "raw_panel" || key == "macro") continue;
    mix(key);
    mix("=");
    mix(value);
    mix("\n");
  }
  return h;
}

double to_double(const Config& cfg, const std::string& key, double fallback) {
  auto it = cfg.find(key);
  if (it == cfg.end()) return fallback;
  try {
    std::size_t pos = 0;
    double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw usage_error("config key '" + key + "': expected a number, got '" + it->second + "'");
  }
}

long to_long(const Config& cfg, const std::string& key, long fallback) {
  double v = to_double(cfg, key, static_cast<double>(fallback));
  long out = static_cast<long>(v);
  if (static_cast<double>(out) != v)
    throw usage_error("config key '" + key + "': expected an integer");
  return out;
}

std::string get_or(const Config& cfg, const std::string& key, const std::string& fallback) {
  auto it = cfg.find(key);
  return it == cfg.end() ? fallback : it->second;
}

std::vector<double> parse_list(const std::string& text, const std::string& key) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw usage_error("config key '" + key + "': malformed list entry '" + item + "'");
    }
  }
  if (out.empty()) throw usage_error("config key '" + key + "': empty list");
  return out;
}

// ---------------------------------------------------------------- output ---

struct OutputTable {
  std::ostringstream body;

  std::string finish(std::uint64_t seed, std::uint64_t hash) const {
    std::ostringstream out;
    char hex[32];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(hash));
    out << "# fairagg " << kVersion << "\n# seed=" << seed << "\n# config_hash=" << hex << "\n";
    out << body.str();
    return out.str();
  }
};

void write_output(const std::string& path, const std::string& content) {
  if (path.empty() || path == "-") {
    std::cout << content;
    return;
  }
  std::ofstream out(path, std::ios::binary);  // binary: keep LF endings everywhere
  if (!out) throw fairagg::invalid_input("cannot open output file '" + path + "'");
  out << content;
}

// ------------------------------------------------------------- panel CSV ---

fairagg::PanelDataset load_frame(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw fairagg::invalid_input("cannot open panel file '" + path + "'");
  return fairagg::read_frame_csv(in, path);
}

fairagg::CovarianceSpec parse_cov_spec(const std::string& name) {
  if (name == "bank") return fairagg::CovarianceSpec::BankClustered;
  if (name == "time") return fairagg::CovarianceSpec::TimeClustered;
  throw usage_error("cov must be 'bank' or 'time', got '" + name + "'");
}

// ----------------------------------------------------------- subcommands ---

int cmd_simulate(const Config& eff, const std::string& out_path) {
  std::uint64_t seed = static_cast<std::uint64_t>(to_long(eff, "seed", 1));
  long rows = to_long(eff, "rows_per_bank", 1000);
  std::string scenario = get_or(eff, "scenario", "sim-a");

  fairagg::BankPopulation pop;
  if (scenario == "sim-a") pop = fairagg::scenarios::sim_a();
  else if (scenario == "sim-b") pop = fairagg::scenarios::sim_b();
  else if (scenario == "sim-c") pop = fairagg::scenarios::sim_c();
  else if (scenario == "random") {
    fairagg::SimConfig cfg;
    cfg.n_banks = static_cast<int>(to_long(eff, "n_banks", 3));
    cfg.feature_dim = static_cast<int>(to_long(eff, "feature_dim", 2));
    cfg.seed = seed;
    pop = fairagg::sample_population(cfg);
  } else {
    throw usage_error("scenario must be sim-a, sim-b, sim-c, or random; got '" + scenario + "'");
  }

  auto panel = fairagg::simulate_panel(pop, rows, seed);
  OutputTable table;
  fairagg::write_frame_csv(table.body, panel);
  write_output(out_path, table.finish(seed, config_hash(eff)));
  return 0;
}

int cmd_fit(const Config& eff, const std::string& out_path) {
  auto data = load_frame(get_or(eff, "panel", ""));
  auto spec = parse_cov_spec(get_or(eff, "cov", "bank"));
  OutputTable table;
  table.body << fairagg::fit_report(data, spec);
  write_output(out_path, table.finish(0, config_hash(eff)));
  return 0;
}

int cmd_compare(const Config& eff, const std::string& out_path) {
  auto spec = parse_cov_spec(get_or(eff, "cov", "bank"));
  fairagg::PanelDataset data;
  if (eff.count("raw_panel")) {
    // Pipeline path: raw bank panel + macro table -> regression frame.
    auto raw = fairagg::read_raw_panel(get_or(eff, "raw_panel", ""));
    auto macro = fairagg::read_macro_table(get_or(eff, "macro", ""));
    auto category = get_or(eff, "category", "cre");
    auto sign_column = get_or(eff, "sign_column", "d_unemployment");
    int fit_lo = fairagg::parse_quarter(get_or(eff, "fit_lo", ""));
    int fit_hi = fairagg::parse_quarter(get_or(eff, "fit_hi", ""));
    int lag = static_cast<int>(to_long(eff, "lag", 4));
    double ratio = to_double(eff, "stress_ratio", 2.0);
    auto result = fairagg::run_pipeline(raw, macro, category, sign_column, fit_lo, fit_hi, lag,
                                        ratio);
    std::cerr << fairagg::exclusion_report_json(result.exclusions) << "\n";
    data = std::move(result.frame);
  } else {
    data = load_frame(get_or(eff, "panel", ""));
  }
  OutputTable table;
  table.body << fairagg::compare_report(data, spec);
  write_output(out_path, table.finish(0, config_hash(eff)));
  return 0;
}

int cmd_test(const Config& eff, const std::string& out_path) {
  auto data = load_frame(get_or(eff, "panel", ""));
  OutputTable table;
  table.body << fairagg::heterogeneity_report(data);
  write_output(out_path, table.finish(0, config_hash(eff)));
  return 0;
}

fairagg::BankPopulation sensitivity_population(const Config& eff) {
  std::string scenario = get_or(eff, "scenario", "");
  if (scenario == "sim-a") return fairagg::scenarios::sim_a();
  if (scenario == "sim-b") return fairagg::scenarios::sim_b();
  if (!scenario.empty())
    throw usage_error("sensitivity scenario must be sim-a or sim-b; got '" + scenario + "'");
  auto weights = parse_list(get_or(eff, "weights", "0.5,0.5"), "weights");
  auto alpha = parse_list(get_or(eff, "alpha", "0,0"), "alpha");
  auto beta = parse_list(get_or(eff, "beta", "1,1"), "beta");
  auto mu = parse_list(get_or(eff, "mu", "0,0"), "mu");
  auto sigma2 = parse_list(get_or(eff, "sigma2", "1,1"), "sigma2");
  auto noise = parse_list(get_or(eff, "noise", "0.25,0.25"), "noise");
  std::size_t nb = weights.size();
  if (alpha.size() != nb || beta.size() != nb || mu.size() != nb || sigma2.size() != nb ||
      noise.size() != nb)
    throw usage_error("sensitivity population lists must all have the same length");
  fairagg::BankPopulation pop;
  pop.weights = fairagg::Vector(nb);
  for (std::size_t s = 0; s < nb; ++s) {
    pop.weights[s] = weights[s];
    pop.banks.push_back(
        fairagg::scenarios::scalar_bank(alpha[s], beta[s], mu[s], sigma2[s], noise[s]));
  }
  pop.validate();
  return pop;
}

int cmd_sensitivity(const Config& eff, const std::string& out_path) {
  auto pop = sensitivity_population(eff);
  double x = to_double(eff, "x", 1.0);
  OutputTable table;
  table.body << fairagg::sensitivity_report_table(pop, x);
  write_output(out_path, table.finish(0, config_hash(eff)));
  return 0;
}

int cmd_gam(const Config& eff, const std::string& out_path) {
  auto data = load_frame(get_or(eff, "panel", ""));
  OutputTable table;
  table.body << fairagg::gam_report(data);
  write_output(out_path, table.finish(0, config_hash(eff)));
  return 0;
}

// ------------------------------------------------------------------ main ---

struct SubArgs {
  std::string config_path;
  std::string out_path;
  std::vector<std::string> overrides;  // key=value from --set
};

void add_common(CLI::App* sub, SubArgs& args) {
  sub->add_option("--config", args.config_path, "key=value configuration file");
  sub->add_option("--out", args.out_path, "output file ('-' or empty for stdout)");
  sub->add_option("--set", args.overrides, "override a config key (key=value, repeatable)");
}

Config effective_config(const SubArgs& args, const std::string& section,
                        const std::vector<std::string>& valid_keys,
                        const std::vector<std::pair<std::string, std::string>>& flag_values) {
  Config file_cfg;
  if (!args.config_path.empty()) file_cfg = parse_config_file(args.config_path);
  Config eff = section_config(file_cfg, section, valid_keys);
  auto apply = [&](const std::string& key, const std::string& value) {
    bool ok = false;
    for (const auto& v : valid_keys) ok = ok || key == v;
    if (!ok) {
      std::string valid;
      for (const auto& v : valid_keys) valid += (valid.empty() ? "" : ", ") + v;
      throw usage_error("unknown config key '" + key + "' for subcommand '" + section +
                        "'; valid keys: " + valid);
    }
    eff[key] = value;
  };
  for (const auto& o : args.overrides) {
    auto eq = o.find('=');
    if (eq == std::string::npos) throw usage_error("--set expects key=value, got '" + o + "'");
    apply(o.substr(0, eq), o.substr(eq + 1));
  }
  for (const auto& [key, value] : flag_values)
    if (!value.empty()) apply(key, value);
  return eff;
}

int run(int argc, char** argv) {
  if (const char* threads = std::getenv("FAIRAGG_THREADS")) {
    int n = std::atoi(threads);
    if (n > 0) Eigen::setNbThreads(n);
  }

  CLI::App app{"fair-model-aggregation toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("fairagg ") + kVersion);

  std::map<std::string, SubArgs> args;
  std::map<std::string, std::string> panel_flag, cov_flag;
  std::string scenario_flag, seed_flag, rows_flag, x_flag;

  auto* simulate = app.add_subcommand("simulate", "write a synthetic panel CSV");
  add_common(simulate, args["simulate"]);
  simulate->add_option("--scenario", scenario_flag, "sim-a | sim-b | sim-c | random");
  simulate->add_option("--seed", seed_flag, "RNG seed");
  simulate->add_option("--rows-per-bank", rows_flag, "rows per bank");

  auto* fit = app.add_subcommand("fit", "pooled and fixed-effects coefficient table");
  add_common(fit, args["fit"]);
  fit->add_option("--panel", panel_flag["fit"], "panel CSV path");
  fit->add_option("--cov", cov_flag["fit"], "bank | time clustering");

  auto* compare = app.add_subcommand("compare", "pooled vs fixed-effects comparison table");
  add_common(compare, args["compare"]);
  compare->add_option("--panel", panel_flag["compare"], "panel CSV path");
  compare->add_option("--cov", cov_flag["compare"], "bank | time clustering");
  std::string raw_flag, macro_flag;
  compare->add_option("--raw-panel", raw_flag, "raw bank panel CSV (pipeline mode)");
  compare->add_option("--macro", macro_flag, "macro CSV (pipeline mode)");

  auto* test = app.add_subcommand("test", "heterogeneity tests under both clusterings");
  add_common(test, args["test"]);
  test->add_option("--panel", panel_flag["test"], "panel CSV path");

  auto* sens = app.add_subcommand("sensitivity", "derivative and sign-rule report");
  add_common(sens, args["sensitivity"]);
  sens->add_option("--x", x_flag, "evaluation point for the point-forecast target");

  auto* gam = app.add_subcommand("gam", "pooled and fixed-effects GAM fits plus F-test");
  add_common(gam, args["gam"]);
  gam->add_option("--panel", panel_flag["gam"], "panel CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    nlohmann::json err{{"error", e.what()}, {"kind", "usage"}};
    std::cerr << err.dump() << "\n";
    return 2;
  }

  if (simulate->parsed()) {
    auto eff = effective_config(args["simulate"], "simulate",
                                {"scenario", "seed", "rows_per_bank", "n_banks", "feature_dim"},
                                {{"scenario", scenario_flag},
                                 {"seed", seed_flag},
                                 {"rows_per_bank", rows_flag}});
    return cmd_simulate(eff, args["simulate"].out_path);
  }
  if (fit->parsed()) {
    auto eff = effective_config(args["fit"], "fit", {"panel", "cov"},
                                {{"panel", panel_flag["fit"]}, {"cov", cov_flag["fit"]}});
    return cmd_fit(eff, args["fit"].out_path);
  }
  if (compare->parsed()) {
    auto eff = effective_config(args["compare"], "compare",
                                {"panel", "cov", "raw_panel", "macro", "category", "sign_column",
                                 "fit_lo", "fit_hi", "lag", "stress_ratio"},
                                {{"panel", panel_flag["compare"]},
                                 {"cov", cov_flag["compare"]},
                                 {"raw_panel", raw_flag},
                                 {"macro", macro_flag}});
    return cmd_compare(eff, args["compare"].out_path);
  }
  if (test->parsed()) {
    auto eff =
        effective_config(args["test"], "test", {"panel"}, {{"panel", panel_flag["test"]}});
    return cmd_test(eff, args["test"].out_path);
  }
  if (sens->parsed()) {
    auto eff = effective_config(
        args["sensitivity"], "sensitivity",
        {"scenario", "weights", "alpha", "beta", "mu", "sigma2", "noise", "x"}, {{"x", x_flag}});
    return cmd_sensitivity(eff, args["sensitivity"].out_path);
  }
  if (gam->parsed()) {
    auto eff = effective_config(args["gam"], "gam", {"panel"}, {{"panel", panel_flag["gam"]}});
    return cmd_gam(eff, args["gam"].out_path);
  }
  return 2;  // unreachable given require_subcommand
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const usage_error& e) {
    nlohmann::json err{{"error", e.what()}, {"kind", "usage"}};
    std::cerr << err.dump() << "\n";
    return 2;
  } catch (const std::exception& e) {
    nlohmann::json err{{"error", e.what()}, {"kind", "data"}};
    std::cerr << err.dump() << "\n";
    return 1;
  }
}
