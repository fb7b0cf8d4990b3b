#include <catch_amalgamated.hpp>

#include <cmath>

#include "cara/config.hpp"

using namespace cara;

namespace {

std::string minimal_config(const std::string& extra = "") {
  return R"({
    "model": {
      "arms": [[0.1, -1.0], [0.1, 1.0]],
      "covariate_mixture": [{"mean": 0.0, "sd": 1.0, "weight": 1.0}]
    },
    "grid": {"m0": [10], "t0": [1.0], "eta": [0.0]})" +
         extra + "\n}";
}

}  // namespace

TEST_CASE("defaults for a minimal config") {
  const RunConfig cfg = parse_config(minimal_config());
  CHECK(cfg.stopping.alpha == Catch::Approx(0.05));
  CHECK(cfg.stopping.delta == Catch::Approx(0.3));
  CHECK(cfg.stopping.max_n == 5000);
  CHECK(cfg.replications == 500);
  CHECK(cfg.master_seed == 1);
  CHECK(cfg.output_format == "csv");
  CHECK(cfg.j == JKind::logistic);
  CHECK_FALSE(cfg.contrast.has_value());
  CHECK(expand_grid(cfg).size() == 1);
}

TEST_CASE("the bundled preset expands to the full ninety-scenario grid") {
  const RunConfig cfg = parse_config(paper_preset_text());
  REQUIRE(cfg.contrast.has_value());
  CHECK(cfg.master_seed == 20110101);
  CHECK(cfg.replications == 500);
  CHECK(cfg.stopping.delta == Catch::Approx(0.3));
  const auto scenarios = expand_grid(cfg);
  // 3 m0 x 3 T0 x (1 eta=0 with 2 vary_t rows + 2 eta>0 with 4 vary rows)
  CHECK(scenarios.size() == 90);
  // no row varies eta when eta = 0
  for (const auto& sc : scenarios)
    if (sc.label.eta == 0.0) CHECK_FALSE(sc.label.vary_eta);
  // grid order: m0 outermost
  CHECK(scenarios.front().label.m0 == 5);
  CHECK(scenarios.back().label.m0 == 15);
  // ids are distinct
  std::set<std::string> ids;
  for (const auto& sc : scenarios) ids.insert(sc.label.id());
  CHECK(ids.size() == scenarios.size());
  // scenario specs inherit the grid cell
  CHECK(scenarios.front().run.spec.m0 == 5);
  CHECK(scenarios.front().run.spec.tuning.t0 == Catch::Approx(0.5));
}

TEST_CASE("error reporting names the offending key") {
  CHECK_THROWS_WITH(parse_config(minimal_config(R"(, "bogus": 1)")),
                    Catch::Matchers::ContainsSubstring("bogus"));
  CHECK_THROWS_WITH(parse_config(minimal_config(R"(, "stopping": {"delta": -0.3})")),
                    Catch::Matchers::ContainsSubstring("delta"));
  CHECK_THROWS_WITH(parse_config(minimal_config(R"(, "stopping": {"alpha": 1.5})")),
                    Catch::Matchers::ContainsSubstring("alpha"));
  CHECK_THROWS_WITH(parse_config(R"({"grid": {"m0": [10], "t0": [1.0], "eta": [0.0]}})"),
                    Catch::Matchers::ContainsSubstring("model"));
  CHECK_THROWS_AS(parse_config("not json"), config_error);
  CHECK_THROWS_AS(parse_config(minimal_config(R"(, "replications": 0)")), config_error);
  CHECK_THROWS_AS(parse_config(minimal_config(R"(, "output": {"format": "xml"})")), config_error);
}

TEST_CASE("duplicate keys are rejected") {
  const std::string dup = R"({
    "model": {
      "arms": [[0.1, -1.0], [0.1, 1.0]],
      "covariate_mixture": [{"mean": 0.0, "sd": 1.0, "weight": 1.0}]
    },
    "grid": {"m0": [10], "t0": [1.0], "eta": [0.0]},
    "replications": 5,
    "replications": 7
  })";
  CHECK_THROWS_WITH(parse_config(dup), Catch::Matchers::ContainsSubstring("replications"));
}

TEST_CASE("scenario filters") {
  ScenarioLabel l{5, 0.5, 0.0, false, true};
  CHECK(scenario_matches(l, ""));
  CHECK(scenario_matches(l, "m0=5"));
  CHECK(scenario_matches(l, "m0=5,eta=0"));
  CHECK(scenario_matches(l, "t0=0.5,vary_eta=true"));
  CHECK_FALSE(scenario_matches(l, "m0=10"));
  CHECK_FALSE(scenario_matches(l, "vary_t=true"));
  CHECK_THROWS_AS(scenario_matches(l, "bogus=1"), config_error);
  CHECK_THROWS_AS(scenario_matches(l, "m0"), config_error);

  const auto scenarios = expand_grid(parse_config(paper_preset_text()));
  size_t hits = 0;
  for (const auto& sc : scenarios)
    if (scenario_matches(sc.label, "m0=5,eta=0")) ++hits;
  CHECK(hits == 3 * 2);  // 3 T0 values x 2 vary_t flags
}

TEST_CASE("csv rendering is fixed-format and deterministic") {
  ScenarioLabel l{10, 1.0, 0.1, true, false};
  MonteCarloSummary s;
  s.replications = 500;
  s.mean_tau = 53.1234567;
  s.sd_tau = 9.87654;
  s.coverage_probability = 0.952;
  s.correct_allocation_probability = 0.861;
  s.censor_rate = 0.0;
  s.failure_rate = 0.002;
  const std::string text = render_csv({l}, {s}, 20110101);
  const std::string expected =
      "m0,T0,eta,T0_varies,eta_varies,mean_tau,sd_tau,CP,CAP,censor_rate,failure_rate,"
      "replications,seed\n"
      "10,1.0000,0.1000,Y,N,53.1235,9.8765,0.9520,0.8610,0.0000,0.0020,500,20110101\n";
  CHECK(text == expected);
  CHECK(render_csv({l}, {s}, 20110101) == text);

  // NaN summaries render as empty fields
  MonteCarloSummary nan_s = s;
  nan_s.mean_tau = std::numeric_limits<double>::quiet_NaN();
  const std::string nan_text = render_csv({l}, {nan_s}, 1);
  CHECK(nan_text.find(",,") != std::string::npos);

  const std::string js = render_json({l}, {s}, 20110101);
  CHECK(js.find("\"mean_tau\"") != std::string::npos);
  CHECK(js.find("\"seed\": 20110101") != std::string::npos);
}

TEST_CASE("config file round trip") {
  const std::string path = "roundtrip_config.json";
  {
    std::ofstream out(path);
    out << paper_preset_text();
  }
  const RunConfig a = parse_config(paper_preset_text());
  const RunConfig b = parse_config_file(path);
  CHECK(a.master_seed == b.master_seed);
  CHECK(expand_grid(a).size() == expand_grid(b).size());
  CHECK_THROWS_AS(parse_config_file("no_such_file.json"), io_error);
  std::remove(path.c_str());
}
