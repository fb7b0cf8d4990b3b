#ifndef CARA_CONFIG_HPP
#define CARA_CONFIG_HPP

#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cara/engine.hpp"

namespace cara {

struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ScenarioLabel {
  int m0 = 0;
  double t0 = 0.0;
  double eta = 0.0;
  bool vary_t = false;
  bool vary_eta = false;

  std::string id() const {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "m0=%d,T0=%g,eta=%g,T0V=%c,etaV=%c", m0, t0, eta,
                  vary_t ? 'Y' : 'N', vary_eta ? 'Y' : 'N');
    return buf;
  }
};

struct RunConfig {
  TrueModel model;
  std::optional<ContrastSpec> contrast;
  std::vector<int> m0_grid;
  std::vector<double> t0_grid;
  std::vector<double> eta_grid;
  std::vector<bool> vary_t_grid{false};
  std::vector<bool> vary_eta_grid{false};
  StoppingConfig stopping;
  JKind j = JKind::logistic;
  std::pair<double, double> t_bounds{0.1, 10.0};
  std::pair<double, double> eta_bounds{0.0, 10.0};
  int replications = 500;
  uint64_t master_seed = 1;
  std::string output_path = "summaries.csv";
  std::string output_format = "csv";
};

namespace detail {

using json = nlohmann::json;

// Rejects duplicate object keys during parsing.
struct DuplicateKeyGuard {
  std::vector<std::set<std::string>> stack;

  bool operator()(int /*depth*/, json::parse_event_t event, json& parsed) {
    if (event == json::parse_event_t::object_start) {
      stack.emplace_back();
    } else if (event == json::parse_event_t::object_end) {
      stack.pop_back();
    } else if (event == json::parse_event_t::key) {
      const std::string key = parsed.get<std::string>();
      if (!stack.back().insert(key).second) throw config_error("duplicate key: " + key);
    }
    return true;
  }
};

inline void check_keys(const json& obj, const std::string& where, const std::set<std::string>& allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!allowed.count(it.key())) throw config_error("unknown key in " + where + ": " + it.key());
}

template <typename T>
T require(const json& obj, const std::string& where, const std::string& key) {
  if (!obj.contains(key)) throw config_error("missing key in " + where + ": " + key);
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw config_error("bad value for " + where + "." + key);
  }
}

template <typename T>
T optional_or(const json& obj, const std::string& where, const std::string& key, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw config_error("bad value for " + where + "." + key);
  }
}

}  // namespace detail

inline RunConfig parse_config(const std::string& text) {
  using detail::json;
  detail::DuplicateKeyGuard guard;
  json doc;
  try {
    doc = json::parse(text, std::ref(guard));
  } catch (const json::exception& e) {
    throw config_error(std::string("config parse error: ") + e.what());
  }
  if (!doc.is_object()) throw config_error("config must be a JSON object");
  detail::check_keys(doc, "config",
                     {"schema_version", "model", "grid", "stopping", "contrast", "allocation",
                      "replications", "master_seed", "output"});
  RunConfig cfg;

  const json& model = doc.contains("model") ? doc.at("model") : throw config_error("missing key: model");
  detail::check_keys(model, "model", {"arms", "covariate_mixture", "link"});
  const auto arms = detail::require<std::vector<std::vector<double>>>(model, "model", "arms");
  for (const auto& a : arms) {
    ArmCoefficients c;
    c.values = a;
    cfg.model.params.arms.push_back(c);
  }
  cfg.model.params.validate();
  const std::string link = detail::optional_or<std::string>(model, "model", "link", "logit");
  if (link != "logit") throw config_error("model.link: only 'logit' is supported");
  cfg.model.link = Link::logit;
  const json& mix = model.contains("covariate_mixture")
                        ? model.at("covariate_mixture")
                        : throw config_error("missing key: model.covariate_mixture");
  for (const auto& comp : mix) {
    detail::check_keys(comp, "covariate_mixture component", {"mean", "sd", "weight"});
    cfg.model.covariate_dist.components.push_back(
        {detail::require<double>(comp, "component", "mean"),
         detail::require<double>(comp, "component", "sd"),
         detail::require<double>(comp, "component", "weight")});
  }
  cfg.model.covariate_dist.validate();

  const json& grid = doc.contains("grid") ? doc.at("grid") : throw config_error("missing key: grid");
  detail::check_keys(grid, "grid", {"m0", "t0", "eta", "vary_t", "vary_eta"});
  cfg.m0_grid = detail::require<std::vector<int>>(grid, "grid", "m0");
  cfg.t0_grid = detail::require<std::vector<double>>(grid, "grid", "t0");
  cfg.eta_grid = detail::require<std::vector<double>>(grid, "grid", "eta");
  cfg.vary_t_grid = detail::optional_or<std::vector<bool>>(grid, "grid", "vary_t", {false});
  cfg.vary_eta_grid = detail::optional_or<std::vector<bool>>(grid, "grid", "vary_eta", {false});
  if (cfg.m0_grid.empty() || cfg.t0_grid.empty() || cfg.eta_grid.empty())
    throw config_error("grid must be nonempty");
  for (int m0 : cfg.m0_grid)
    if (m0 < 1) throw config_error("grid.m0: values must be >= 1");

  cfg.stopping.alpha = 0.05;
  cfg.stopping.delta = 0.3;
  cfg.stopping.max_n = 5000;
  cfg.stopping.n0 = 0;  // derived as K*m0 per scenario
  cfg.stopping.dof = 0;
  if (doc.contains("stopping")) {
    const json& stop = doc.at("stopping");
    detail::check_keys(stop, "stopping", {"alpha", "delta", "max_n", "n0"});
    cfg.stopping.alpha = detail::optional_or<double>(stop, "stopping", "alpha", 0.05);
    cfg.stopping.delta = detail::optional_or<double>(stop, "stopping", "delta", 0.3);
    cfg.stopping.max_n = detail::optional_or<int>(stop, "stopping", "max_n", 5000);
    cfg.stopping.n0 = detail::optional_or<int>(stop, "stopping", "n0", 0);
    if (!(cfg.stopping.alpha > 0.0 && cfg.stopping.alpha < 1.0))
      throw config_error("stopping.alpha: must be in (0,1)");
    if (!(cfg.stopping.delta > 0.0)) throw config_error("stopping.delta: must be > 0");
  }

  if (doc.contains("contrast")) {
    const json& con = doc.at("contrast");
    detail::check_keys(con, "contrast", {"rows"});
    const auto rows = detail::require<std::vector<std::vector<double>>>(con, "contrast", "rows");
    ContrastSpec spec;
    spec.h_columns = rows;  // rows of H' are columns of H
    spec.validate();
    cfg.contrast = spec;
  }

  if (doc.contains("allocation")) {
    const json& alloc = doc.at("allocation");
    detail::check_keys(alloc, "allocation", {"j", "t_bounds", "eta_bounds"});
    const std::string j = detail::optional_or<std::string>(alloc, "allocation", "j", "logistic");
    if (j == "logistic")
      cfg.j = JKind::logistic;
    else if (j == "normal")
      cfg.j = JKind::normal_cdf;
    else
      throw config_error("allocation.j: must be 'logistic' or 'normal'");
    const auto tb = detail::optional_or<std::vector<double>>(alloc, "allocation", "t_bounds", {0.1, 10.0});
    const auto eb = detail::optional_or<std::vector<double>>(alloc, "allocation", "eta_bounds", {0.0, 10.0});
    if (tb.size() != 2 || eb.size() != 2) throw config_error("allocation bounds must have two entries");
    cfg.t_bounds = {tb[0], tb[1]};
    cfg.eta_bounds = {eb[0], eb[1]};
  }

  cfg.replications = detail::optional_or<int>(doc, "config", "replications", 500);
  if (cfg.replications < 1) throw config_error("replications: must be >= 1");
  cfg.master_seed = detail::optional_or<uint64_t>(doc, "config", "master_seed", 1);

  if (doc.contains("output")) {
    const json& out = doc.at("output");
    detail::check_keys(out, "output", {"path", "format"});
    cfg.output_path = detail::optional_or<std::string>(out, "output", "path", "summaries.csv");
    cfg.output_format = detail::optional_or<std::string>(out, "output", "format", "csv");
    if (cfg.output_format != "csv" && cfg.output_format != "json")
      throw config_error("output.format: must be 'csv' or 'json'");
  }
  return cfg;
}

inline RunConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot read config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

struct LabeledScenario {
  ScenarioLabel label;
  ScenarioRun run;
};

// Grid order: m0, then T0, then eta, then the vary flags. Varying eta = 0 is
// a no-op, so those rows are dropped (matching the Table 1 layout).
inline std::vector<LabeledScenario> expand_grid(const RunConfig& cfg) {
  std::vector<LabeledScenario> out;
  for (int m0 : cfg.m0_grid)
    for (double t0 : cfg.t0_grid)
      for (double eta : cfg.eta_grid)
        for (bool vt : cfg.vary_t_grid)
          for (bool ve : cfg.vary_eta_grid) {
            if (eta == 0.0 && ve) continue;
            ScenarioLabel label{m0, t0, eta, vt, ve};
            TrialSpec spec;
            spec.model = cfg.model;
            spec.contrast = cfg.contrast;
            spec.stopping = cfg.stopping;
            spec.m0 = m0;
            spec.j = cfg.j;
            spec.tuning.t0 = t0;
            spec.tuning.eta0 = eta;
            spec.tuning.vary_t = vt;
            spec.tuning.vary_eta = ve;
            spec.tuning.t_bounds = cfg.t_bounds;
            spec.tuning.eta_bounds = cfg.eta_bounds;
            out.push_back({label, {label.id(), spec}});
          }
  if (out.empty()) throw config_error("grid expansion produced no scenarios");
  return out;
}

// Filter expression: comma-separated key=value terms over
// m0, t0, eta, vary_t, vary_eta (e.g. "m0=5,eta=0").
inline bool scenario_matches(const ScenarioLabel& label, const std::string& expr) {
  if (expr.empty()) return true;
  std::stringstream ss(expr);
  std::string term;
  while (std::getline(ss, term, ',')) {
    const auto eq = term.find('=');
    if (eq == std::string::npos) throw config_error("bad filter term: " + term);
    const std::string key = term.substr(0, eq);
    const std::string val = term.substr(eq + 1);
    const auto close = [](double a, double b) { return std::fabs(a - b) < 1e-9; };
    if (key == "m0") {
      if (label.m0 != std::stoi(val)) return false;
    } else if (key == "t0") {
      if (!close(label.t0, std::stod(val))) return false;
    } else if (key == "eta") {
      if (!close(label.eta, std::stod(val))) return false;
    } else if (key == "vary_t") {
      if (label.vary_t != (val == "true" || val == "Y" || val == "1")) return false;
    } else if (key == "vary_eta") {
      if (label.vary_eta != (val == "true" || val == "Y" || val == "1")) return false;
    } else {
      throw config_error("unknown filter key: " + key);
    }
  }
  return true;
}

namespace detail {

inline std::string fmt4(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

}  // namespace detail

inline std::string render_csv(const std::vector<ScenarioLabel>& labels,
                              const std::vector<MonteCarloSummary>& summaries, uint64_t seed) {
  std::string out =
      "m0,T0,eta,T0_varies,eta_varies,mean_tau,sd_tau,CP,CAP,censor_rate,failure_rate,"
      "replications,seed\n";
  for (size_t i = 0; i < summaries.size(); ++i) {
    const ScenarioLabel& l = labels[i];
    const MonteCarloSummary& s = summaries[i];
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%d,%s,%s,%c,%c,", l.m0, detail::fmt4(l.t0).c_str(),
                  detail::fmt4(l.eta).c_str(), l.vary_t ? 'Y' : 'N', l.vary_eta ? 'Y' : 'N');
    out += buf;
    out += detail::fmt4(s.mean_tau) + "," + detail::fmt4(s.sd_tau) + "," +
           detail::fmt4(s.coverage_probability) + "," +
           detail::fmt4(s.correct_allocation_probability) + "," + detail::fmt4(s.censor_rate) +
           "," + detail::fmt4(s.failure_rate) + "," + std::to_string(s.replications) + "," +
           std::to_string(seed) + "\n";
  }
  return out;
}

inline std::string render_json(const std::vector<ScenarioLabel>& labels,
                               const std::vector<MonteCarloSummary>& summaries, uint64_t seed) {
  detail::json arr = detail::json::array();
  for (size_t i = 0; i < summaries.size(); ++i) {
    const ScenarioLabel& l = labels[i];
    const MonteCarloSummary& s = summaries[i];
    detail::json row;
    row["m0"] = l.m0;
    row["T0"] = l.t0;
    row["eta"] = l.eta;
    row["T0_varies"] = l.vary_t;
    row["eta_varies"] = l.vary_eta;
    row["mean_tau"] = s.mean_tau;
    row["sd_tau"] = s.sd_tau;
    row["CP"] = s.coverage_probability;
    row["CAP"] = s.correct_allocation_probability;
    row["censor_rate"] = s.censor_rate;
    row["failure_rate"] = s.failure_rate;
    row["replications"] = s.replications;
    row["seed"] = seed;
    arr.push_back(row);
  }
  return arr.dump(2) + "\n";
}

inline void emit_summaries(const std::vector<ScenarioLabel>& labels,
                           const std::vector<MonteCarloSummary>& summaries, uint64_t seed,
                           const std::string& format, const std::string& path) {
  if (summaries.empty()) throw invalid_input("emit_summaries: no summaries");
  const std::string text =
      format == "json" ? render_json(labels, summaries, seed) : render_csv(labels, summaries, seed);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write output file: " + path);
  out << text;
  if (!out) throw io_error("write failed: " + path);
}

// The simulation setup of the source study: two logistic arms with equal
// intercepts and opposite slopes, a symmetric two-component normal covariate
// mixture, difference contrasts, and the full tuning grid.
inline std::string paper_preset_text() {
  return R"({
  "schema_version": 1,
  "model": {
    "arms": [[0.1, -1.0], [0.1, 1.0]],
    "covariate_mixture": [
      {"mean": 2.0, "sd": 1.0, "weight": 0.5},
      {"mean": -2.0, "sd": 1.0, "weight": 0.5}
    ],
    "link": "logit"
  },
  "grid": {
    "m0": [5, 10, 15],
    "t0": [0.5, 1.0, 2.0],
    "eta": [0.0, 0.1, 1.0],
    "vary_t": [false, true],
    "vary_eta": [false, true]
  },
  "stopping": {"alpha": 0.05, "delta": 0.3, "max_n": 5000},
  "contrast": {"rows": [[1, 0, -1, 0], [0, 1, 0, -1]]},
  "allocation": {"j": "logistic", "t_bounds": [0.1, 10.0], "eta_bounds": [0.0, 10.0]},
  "replications": 500,
  "master_seed": 20110101,
  "output": {"path": "table1.csv", "format": "csv"}
}
)";
}

}  // namespace cara

#endif  // CARA_CONFIG_HPP
