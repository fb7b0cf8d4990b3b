// Command-line front end: expand a scenario grid from a JSON config, run the
// Monte Carlo harness, and write a deterministic CSV/JSON summary table.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "cara/config.hpp"
#include "cara/engine.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitIo = 3;

constexpr double kFailureRateThreshold = 0.01;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sequential CARA trial simulator"};

  std::string config_path;
  std::string preset;
  std::string filter;
  std::string format_override;
  std::string out_override;
  int replications_override = -1;
  long long seed_override = -1;
  int jobs = static_cast<int>(std::thread::hardware_concurrency());
  if (jobs < 1) jobs = 1;
  bool emit_config_only = false;

  app.add_option("--config", config_path, "Path to a JSON run configuration");
  app.add_option("--preset", preset, "Built-in configuration preset ('paper')");
  app.add_option("--replications", replications_override, "Override replication count");
  app.add_option("--seed", seed_override, "Override master seed");
  app.add_option("--scenario-filter", filter, "Subset the grid, e.g. 'm0=5,eta=0'");
  app.add_option("--format", format_override, "Output format: csv or json");
  app.add_option("--out", out_override, "Output path");
  app.add_option("--jobs", jobs, "Worker thread count");
  app.add_flag("--emit-config", emit_config_only, "Print the effective config and exit");

  CLI11_PARSE(app, argc, argv);

  try {
    std::string text;
    if (!preset.empty()) {
      if (preset != "paper") {
        std::cerr << "unknown preset: " << preset << "\n";
        return kExitValidation;
      }
      text = cara::paper_preset_text();
    } else if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) {
        std::cerr << "cannot read config file: " << config_path << "\n";
        return kExitIo;
      }
      std::stringstream ss;
      ss << in.rdbuf();
      text = ss.str();
    } else {
      std::cerr << "one of --config or --preset is required\n";
      return kExitValidation;
    }

    if (emit_config_only) {
      std::cout << text;
      return kExitOk;
    }

    cara::RunConfig cfg = cara::parse_config(text);
    if (replications_override > 0) cfg.replications = replications_override;
    if (seed_override >= 0) cfg.master_seed = static_cast<uint64_t>(seed_override);
    if (!format_override.empty()) {
      if (format_override != "csv" && format_override != "json") {
        std::cerr << "--format must be csv or json\n";
        return kExitValidation;
      }
      cfg.output_format = format_override;
    }
    if (!out_override.empty()) cfg.output_path = out_override;

    std::vector<cara::LabeledScenario> grid = cara::expand_grid(cfg);
    std::vector<cara::ScenarioLabel> labels;
    std::vector<cara::ScenarioRun> runs;
    for (const auto& s : grid) {
      if (!cara::scenario_matches(s.label, filter)) continue;
      labels.push_back(s.label);
      runs.push_back(s.run);
    }
    if (runs.empty()) {
      std::cerr << "scenario filter matched nothing\n";
      return kExitValidation;
    }

    const std::vector<cara::MonteCarloSummary> summaries =
        cara::run_monte_carlo(runs, cfg.replications, cfg.master_seed, jobs);
    cara::emit_summaries(labels, summaries, cfg.master_seed, cfg.output_format, cfg.output_path);

    for (const auto& s : summaries) {
      if (s.failure_rate > kFailureRateThreshold) {
        std::cerr << "failure rate " << s.failure_rate << " in scenario " << s.scenario_id
                  << " exceeds threshold " << kFailureRateThreshold << "\n";
        return kExitRuntime;
      }
    }
    std::cout << "wrote " << summaries.size() << " scenario rows to " << cfg.output_path << "\n";
    return kExitOk;
  } catch (const cara::io_error& e) {
    std::cerr << e.what() << "\n";
    return kExitIo;
  } catch (const cara::config_error& e) {
    std::cerr << e.what() << "\n";
    return kExitValidation;
  } catch (const cara::invalid_input& e) {
    std::cerr << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return kExitRuntime;
  }
}
