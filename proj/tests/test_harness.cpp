#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cmtrl/harness.hpp"

using namespace cmtrl;

namespace {

nlohmann::json tiny_problem_json(std::uint64_t seed) {
  RngStream rng(seed, 321);
  const int S = 3, A = 2, N = 2;
  MultiTaskProblem p;
  p.n_states = S;
  p.n_actions = A;
  p.n_tasks = N;
  p.gamma = 0.9;
  p.transition.resize(S * A, S);
  for (int r = 0; r < S * A; ++r) {
    Eigen::VectorXd row(S);
    for (int s = 0; s < S; ++s) row(s) = rng.next_double() + 0.1;
    p.transition.row(r) = row / row.sum();
  }
  for (int i = 0; i < N; ++i) {
    Eigen::MatrixXd table(S, A);
    for (int s = 0; s < S; ++s) {
      for (int a = 0; a < A; ++a) table(s, a) = rng.next_double();
    }
    p.rewards.push_back(table);
  }
  p.rho = Eigen::VectorXd::Constant(S, 1.0 / S);
  p.lower_bounds = Eigen::VectorXd::Constant(N, kNegInf);
  p.upper_bounds = Eigen::VectorXd::Constant(N, kPosInf);
  p.slater_margin = 0.5;
  return p.to_json();
}

std::string base_config(const std::string& algorithm, int k) {
  nlohmann::json j = {{"algorithm", algorithm},
                      {"problem", tiny_problem_json(5)},
                      {"graph", {{"preset", "complete"}, {"n", 2}}},
                      {"mode", "decentral"},
                      {"K", k},
                      {"beta0", 4.0},
                      {"eval_every", 10},
                      {"seed", 42}};
  if (algorithm == "lfa") j["T"] = 4;
  return j.dump(2);
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("config parsing rejects unknown keys with pointer paths") {
  nlohmann::json j = nlohmann::json::parse(base_config("pdnpg", 10));
  j["alpha"] = 0.1;  // not a key
  CHECK_THROWS_WITH_AS(RunConfig::parse(j.dump()), doctest::Contains("/alpha"),
                       ConfigError);
}

TEST_CASE("config validation catches bad fields before running") {
  nlohmann::json j = nlohmann::json::parse(base_config("pdnpg", 10));

  SUBCASE("missing K") {
    j.erase("K");
    CHECK_THROWS_WITH_AS(RunConfig::parse(j.dump()), doctest::Contains("/K"), ConfigError);
  }
  SUBCASE("alpha0 and alpha_scale are mutually exclusive") {
    j["alpha0"] = 0.5;
    j["alpha_scale"] = 2.0;
    CHECK_THROWS_WITH_AS(RunConfig::parse(j.dump()), doctest::Contains("alpha_scale"),
                         ConfigError);
  }
  SUBCASE("nonpositive step constants") {
    j["eta0"] = 0.0;
    CHECK_THROWS_WITH_AS(RunConfig::parse(j.dump()), doctest::Contains("/eta0"), ConfigError);
  }
  SUBCASE("central lfa is rejected") {
    j["algorithm"] = "lfa";
    j["T"] = 5;
    j["mode"] = "central";
    CHECK_THROWS_WITH_AS(RunConfig::parse(j.dump()), doctest::Contains("/mode"), ConfigError);
  }
  SUBCASE("lfa requires T") {
    j["algorithm"] = "lfa";
    CHECK_THROWS_WITH_AS(RunConfig::parse(j.dump()), doctest::Contains("/T"), ConfigError);
  }
  SUBCASE("unknown algorithm") {
    j["algorithm"] = "sac";
    CHECK_THROWS_WITH_AS(RunConfig::parse(j.dump()), doctest::Contains("/algorithm"),
                         ConfigError);
  }
  SUBCASE("malformed problem reports its pointer") {
    j["problem"] = {{"n_states", 2}};
    CHECK_THROWS_WITH_AS(RunConfig::parse(j.dump()), doctest::Contains("/problem"),
                         ConfigError);
  }
  SUBCASE("disconnected graph is rejected") {
    j["graph"] = {{"edges", {{0, 1}}}, {"n", 3}};
    CHECK_THROWS_WITH_AS(RunConfig::parse(j.dump()), doctest::Contains("/graph"),
                         ConfigError);
  }
}

TEST_CASE("config hash tracks the raw bytes") {
  const std::string text = base_config("pdnpg", 10);
  const RunConfig a = RunConfig::parse(text);
  const RunConfig b = RunConfig::parse(text);
  CHECK(a.config_hash == b.config_hash);
  const RunConfig c = RunConfig::parse(text + " ");
  CHECK(c.config_hash != a.config_hash);
}

TEST_CASE("CMTRL_SEED overrides the configured seed") {
  setenv("CMTRL_SEED", "777", 1);
  const RunConfig c = RunConfig::parse(base_config("pdnac", 10));
  unsetenv("CMTRL_SEED");
  CHECK(c.seed == 777);
  CHECK(RunConfig::parse(base_config("pdnac", 10)).seed == 42);
}

TEST_CASE("identical config and seed produce byte-identical trace files") {
  const auto dir = std::filesystem::temp_directory_path() / "cmtrl_determinism";
  std::filesystem::create_directories(dir);
  const RunConfig config = RunConfig::parse(base_config("pdnac", 300));
  const std::string path1 = (dir / "a.csv").string();
  const std::string path2 = (dir / "b.csv").string();
  REQUIRE(run_experiment(config, path1) == kExitOk);
  REQUIRE(run_experiment(config, path2) == kExitOk);
  const std::string bytes1 = slurp(path1);
  CHECK(!bytes1.empty());
  CHECK(bytes1 == slurp(path2));
}

TEST_CASE("written traces parse back losslessly") {
  const auto dir = std::filesystem::temp_directory_path() / "cmtrl_roundtrip";
  std::filesystem::create_directories(dir);
  const RunConfig config = RunConfig::parse(base_config("pdnac", 100));
  const std::string path = (dir / "t.csv").string();
  MetricsTrace live;
  REQUIRE(run_experiment(config, path, &live) == kExitOk);

  std::ifstream in(path);
  const MetricsTrace parsed = read_trace_csv(in);
  REQUIRE(parsed.rows.size() == live.rows.size());
  CHECK(parsed.header.config_hash == live.header.config_hash);
  CHECK(parsed.header.b_lambda == live.header.b_lambda);
  CHECK(parsed.header.stream_ids == live.header.stream_ids);
  for (std::size_t i = 0; i < parsed.rows.size(); ++i) {
    CHECK(parsed.rows[i].k == live.rows[i].k);
    CHECK(parsed.rows[i].agent == live.rows[i].agent);
    CHECK(parsed.rows[i].v0 == live.rows[i].v0);  // 17 digits round-trip exactly
    CHECK(parsed.rows[i].violation == live.rows[i].violation);
    CHECK(parsed.rows[i].lambda == live.rows[i].lambda);
  }
  CHECK(parsed.footer.samples == live.footer.samples);
}

TEST_CASE("score_trace verdicts") {
  const RunConfig config = RunConfig::parse(base_config("pdnpg", 60));
  MetricsTrace trace;
  REQUIRE(run_experiment(config, "", &trace) == kExitOk);
  const MultiTaskProblem problem = config.build_problem();

  SUBCASE("a satisfied threshold set passes") {
    nlohmann::json thresholds = {{"max_final_violation", 1e9}};
    const auto verdict = score_trace(trace, problem, thresholds);
    CHECK(verdict.at("pass").get<bool>());
  }
  SUBCASE("a failing predicate is named") {
    nlohmann::json thresholds = {{"min_final_v0", 1e9}};
    const auto verdict = score_trace(trace, problem, thresholds);
    CHECK(!verdict.at("pass").get<bool>());
    bool found = false;
    for (const auto& check : verdict.at("checks")) {
      if (check.at("name") == "min_final_v0") {
        found = true;
        CHECK(!check.at("pass").get<bool>());
      }
    }
    CHECK(found);
  }
  SUBCASE("threshold files round-trip through JSON") {
    nlohmann::json thresholds = {{"max_final_violation", 0.25},
                                 {"require_duals_in_bounds", true}};
    const nlohmann::json reparsed = nlohmann::json::parse(thresholds.dump());
    CHECK(reparsed == thresholds);
    CHECK(score_trace(trace, problem, reparsed).contains("checks"));
  }
  SUBCASE("unknown threshold keys are rejected") {
    CHECK_THROWS_AS(score_trace(trace, problem, {{"max_violations", 1}}), ConfigError);
  }
}

TEST_CASE("rate sweep on the all-zero problem reports identically zero metrics") {
  nlohmann::json problem = tiny_problem_json(31);
  for (auto& table : problem.at("rewards")) {
    for (auto& row : table) {
      for (auto& cell : row) cell = 0.0;
    }
  }
  nlohmann::json j = {{"algorithm", "pdnpg"}, {"problem", problem},
                      {"graph", {{"preset", "complete"}, {"n", 2}}},
                      {"K", 50},      {"eval_every", 5},
                      {"seed", 1}};
  const RunConfig base = RunConfig::parse(j.dump());
  const SweepSummary summary = rate_sweep(base, {25, 50});
  for (const auto& row : summary.rows) {
    CHECK(row.best_running_avg == 0.0);
    CHECK(row.oracle_used);
  }
}

TEST_CASE("sweep csv has the documented schema") {
  SweepSummary summary;
  summary.rows = {{500, 0.5, true, 1.0, 0.01}, {2000, 0.25, true, 1.0, 0.01}};
  summary.rate_slope = -0.5;
  std::ostringstream os;
  write_sweep_csv(summary, os);
  CHECK(os.str().rfind("K,best_running_avg,oracle_used,oracle_value,oracle_refine_gain\n",
                       0) == 0);
  CHECK(os.str().find("# rate_slope=-0.5") != std::string::npos);
}
