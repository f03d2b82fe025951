#include "cmtrl/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <thread>

namespace cmtrl {

namespace {

void reject_unknown_keys(const nlohmann::json& j, const std::set<std::string>& known,
                         const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) {
      throw ConfigError("/" + where + it.key() + ": unknown key");
    }
  }
}

double require_positive(const nlohmann::json& j, const char* key, double fallback) {
  if (!j.contains(key)) return fallback;
  const double v = j.at(key).get<double>();
  if (!(v > 0.0)) throw ConfigError(std::string("/") + key + ": must be > 0");
  return v;
}

}  // namespace

RunConfig RunConfig::parse(const std::string& bytes) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("/: config must be a JSON object");

  static const std::set<std::string> known = {
      "algorithm", "problem",  "graph",   "mode",     "K",       "T",
      "eval_every", "alpha0",  "alpha_scale", "eta0", "beta0",   "eps0",
      "eps_max",   "mu_lower", "features", "seed"};
  reject_unknown_keys(j, known, "");

  RunConfig c;
  c.config_hash = fnv1a64(bytes);

  if (!j.contains("algorithm")) throw ConfigError("/algorithm: required");
  c.algorithm = j.at("algorithm").get<std::string>();
  if (c.algorithm != "pdnpg" && c.algorithm != "pdnac" && c.algorithm != "lfa") {
    throw ConfigError("/algorithm: must be one of pdnpg, pdnac, lfa");
  }

  if (!j.contains("problem")) throw ConfigError("/problem: required");
  c.problem_json = j.at("problem");
  if (j.contains("graph")) c.graph_json = j.at("graph");

  c.mode = j.value("mode", std::string("decentral"));
  if (c.mode != "central" && c.mode != "decentral") {
    throw ConfigError("/mode: must be central or decentral");
  }
  if (c.algorithm == "lfa" && c.mode == "central") {
    throw ConfigError("/mode: lfa runs decentralized only");
  }

  if (!j.contains("K")) throw ConfigError("/K: required");
  c.iterations = j.at("K").get<int>();
  if (c.iterations < 1) throw ConfigError("/K: must be >= 1");

  c.inner_steps = j.value("T", 1);
  if (c.inner_steps < 1) throw ConfigError("/T: must be >= 1");
  if (c.algorithm == "lfa" && !j.contains("T")) throw ConfigError("/T: required for lfa");

  c.eval_every = j.value("eval_every", 1);
  if (c.eval_every < 1) throw ConfigError("/eval_every: must be >= 1");

  if (j.contains("alpha0")) {
    if (j.contains("alpha_scale")) {
      throw ConfigError("/alpha_scale: give either alpha0 or alpha_scale, not both");
    }
    c.alpha0 = j.at("alpha0").get<double>();
    if (!(*c.alpha0 > 0.0)) throw ConfigError("/alpha0: must be > 0");
  } else {
    c.alpha_scale = require_positive(j, "alpha_scale", 1.0);
  }
  c.eta0 = require_positive(j, "eta0", 1.0);
  c.beta0 = require_positive(j, "beta0", 1.0);
  c.eps0 = require_positive(j, "eps0", 1.0);
  if (j.contains("eps_max")) {
    c.eps_max = j.at("eps_max").get<double>();
    if (c.eps_max < 0.0) throw ConfigError("/eps_max: must be >= 0");
  }
  if (j.contains("mu_lower")) {
    const double v = j.at("mu_lower").get<double>();
    if (!(v > 0.0)) throw ConfigError("/mu_lower: must be > 0");
    c.mu_lower = v;
  }
  c.features = j.value("features", std::string("identity"));
  c.seed = j.value("seed", std::uint64_t{0});
  if (const char* env = std::getenv("CMTRL_SEED")) {
    c.seed = std::strtoull(env, nullptr, 10);
  }

  // Problem and graph are validated eagerly so a bad config never starts.
  const MultiTaskProblem problem = c.build_problem();
  if (c.mode == "decentral") c.build_graph(problem.n_tasks);
  if (c.algorithm == "lfa") make_features(c.features, problem, c.seed);
  return c;
}

MultiTaskProblem RunConfig::build_problem() const {
  try {
    MultiTaskProblem p;
    if (problem_json.is_object() && problem_json.contains("preset")) {
      const std::string preset = problem_json.at("preset").get<std::string>();
      if (preset == "three_bridges") {
        p = build_gridworld(three_bridges_maze(true));
      } else if (preset == "three_bridges_unconstrained") {
        p = build_gridworld(three_bridges_maze(false));
      } else {
        throw ConfigError("/problem/preset: unknown preset " + preset);
      }
    } else if (problem_json.is_object() && problem_json.contains("grid")) {
      p = build_gridworld(MazeSpec::from_json(problem_json));
    } else if (problem_json.is_object()) {
      p = MultiTaskProblem::from_json(problem_json);
    } else {
      throw ConfigError("/problem: must be an object");
    }
    const auto bad = validate(p);
    if (!bad.empty()) throw ConfigError("/problem: " + bad.front());
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("/problem: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("/problem: ") + e.what());
  }
}

CommGraph RunConfig::build_graph(int n_tasks) const {
  try {
    if (graph_json.is_null()) {
      return CommGraph::complete(n_tasks);  // default topology
    }
    const CommGraph g = CommGraph::from_json(graph_json);
    if (!g.connected()) throw ConfigError("/graph: graph must be connected");
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("/graph: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("/graph: ") + e.what());
  }
}

namespace {

RunResult dispatch(const RunConfig& c, const MultiTaskProblem& problem,
                   TraceWriter* sink) {
  const CommGraph graph = c.mode == "decentral" ? c.build_graph(problem.n_tasks)
                                                : CommGraph::complete(1);
  if (c.algorithm == "pdnpg") {
    PdnpgOptions opt;
    opt.iterations = c.iterations;
    opt.alpha0 = c.alpha0;
    opt.alpha_scale = c.alpha_scale;
    opt.eta0 = c.eta0;
    opt.mode = c.mode == "central" ? Mode::kCentral : Mode::kDecentral;
    opt.eval_every = c.eval_every;
    opt.seed = c.seed;
    opt.config_hash = c.config_hash;
    return run_pdnpg(problem, graph, opt, sink);
  }
  if (c.algorithm == "pdnac") {
    PdnacOptions opt;
    opt.iterations = c.iterations;
    opt.alpha0 = c.alpha0;
    opt.alpha_scale = c.alpha_scale;
    opt.beta0 = c.beta0;
    opt.eta0 = c.eta0;
    opt.eps0 = c.eps0;
    opt.mu_lower = c.mu_lower;
    opt.mode = c.mode == "central" ? Mode::kCentral : Mode::kDecentral;
    opt.eval_every = c.eval_every;
    opt.seed = c.seed;
    opt.config_hash = c.config_hash;
    return run_pdnac(problem, graph, opt, sink);
  }
  LfaOptions opt;
  opt.iterations = c.iterations;
  opt.inner_steps = c.inner_steps;
  opt.alpha0 = c.alpha0;
  opt.alpha_scale = c.alpha_scale;
  opt.beta0 = c.beta0;
  opt.eta0 = c.eta0;
  opt.eps0 = c.eps0;
  opt.eps_max = c.eps_max;
  opt.eval_every = c.eval_every;
  opt.seed = c.seed;
  opt.config_hash = c.config_hash;
  const FeatureSet features = make_features(c.features, problem, c.seed);
  return run_lfa(problem, graph, features, opt, sink);
}

}  // namespace

int run_experiment(const RunConfig& config, const std::string& out_path,
                   MetricsTrace* trace_out, RunResult* result_out) {
  MultiTaskProblem problem;
  try {
    problem = config.build_problem();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  }

  std::ofstream file;
  if (!out_path.empty()) {
    file.open(out_path, std::ios::binary | std::ios::trunc);
    if (!file) {
      std::cerr << "config error: cannot open output path " << out_path << "\n";
      return kExitConfig;
    }
  }
  TraceWriter writer(file);
  TraceWriter* sink = out_path.empty() ? nullptr : &writer;

  try {
    RunResult result = dispatch(config, problem, sink);
    if (trace_out) *trace_out = result.trace;
    if (result_out) *result_out = std::move(result);
    return kExitOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::runtime_error& e) {
    // Keep whatever was streamed and append an error footer.
    if (sink) {
      TraceFooter footer;
      footer.status = "error";
      footer.error = e.what();
      sink->write_footer(footer);
    }
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  }
}

double best_running_average(const MetricsTrace& trace, double oracle_value) {
  // Collapse rows of one iteration to the mean over agents.
  std::map<int, std::pair<double, int>> by_k;  // k -> (sum metric, count)
  for (const auto& row : trace.rows) {
    const double gap = std::isfinite(oracle_value)
                           ? std::max(0.0, oracle_value - row.v0)
                           : 0.0;
    auto& slot = by_k[row.k];
    slot.first += gap + row.violation;
    slot.second += 1;
  }
  double best = std::numeric_limits<double>::infinity();
  double cum = 0.0;
  int count = 0;
  for (const auto& [k, slot] : by_k) {
    cum += slot.first / slot.second;
    ++count;
    best = std::min(best, cum / count);
  }
  return count ? best : 0.0;
}

SweepSummary rate_sweep(const RunConfig& base, const std::vector<int>& k_list,
                        bool parallel) {
  if (k_list.size() < 2) throw ConfigError("rate_sweep needs at least two K values");
  const MultiTaskProblem problem = base.build_problem();

  bool oracle_used = false;
  double oracle_value = kNegInf;
  double refine_gain = 0.0;
  const long long sa = static_cast<long long>(problem.n_states) * problem.n_actions;
  if (sa <= 16) {
    const TinyCmdpSolution oracle = tiny_cmdp_oracle(problem);
    if (oracle.feasible) {
      oracle_used = true;
      oracle_value = oracle.value;
      refine_gain = oracle.refine_gain;
    }
  }

  SweepSummary summary;
  summary.rows.resize(k_list.size());
  auto run_one = [&](std::size_t idx) {
    RunConfig c = base;
    c.iterations = k_list[idx];
    MetricsTrace trace;
    RunResult result;
    const int code = run_experiment(c, "", &trace, &result);
    if (code != kExitOk) throw std::runtime_error("sweep run failed");
    SweepRow row;
    row.iterations = k_list[idx];
    row.oracle_used = oracle_used;
    row.oracle_value = oracle_value;
    row.oracle_refine_gain = refine_gain;
    row.best_running_avg = best_running_average(trace, oracle_used ? oracle_value : kNegInf);
    summary.rows[idx] = row;
  };

  if (parallel) {
    std::vector<std::thread> workers;
    for (std::size_t i = 0; i < k_list.size(); ++i) workers.emplace_back(run_one, i);
    for (auto& t : workers) t.join();
  } else {
    for (std::size_t i = 0; i < k_list.size(); ++i) run_one(i);
  }

  // Least-squares slope of log(metric) vs log(K).
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int m = 0;
  for (const auto& row : summary.rows) {
    if (!(row.best_running_avg > 0.0)) continue;
    const double x = std::log(static_cast<double>(row.iterations));
    const double y = std::log(row.best_running_avg);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    ++m;
  }
  summary.rate_slope = m >= 2 ? (m * sxy - sx * sy) / (m * sxx - sx * sx) : 0.0;
  return summary;
}

void write_sweep_csv(const SweepSummary& summary, std::ostream& os) {
  os << "K,best_running_avg,oracle_used,oracle_value,oracle_refine_gain\n";
  for (const auto& row : summary.rows) {
    os << row.iterations << "," << format_g17(row.best_running_avg) << ","
       << (row.oracle_used ? 1 : 0) << "," << format_g17(row.oracle_value) << ","
       << format_g17(row.oracle_refine_gain) << "\n";
  }
  os << "# rate_slope=" << format_g17(summary.rate_slope) << "\n";
}

nlohmann::json score_trace(const MetricsTrace& trace, const MultiTaskProblem& problem,
                           const nlohmann::json& thresholds) {
  static const std::set<std::string> known = {
      "max_final_violation", "min_final_v0", "require_duals_in_bounds",
      "require_consensus_envelope", "require_monotone_rows"};
  reject_unknown_keys(thresholds, known, "thresholds/");

  nlohmann::json checks = nlohmann::json::array();
  bool pass = true;
  auto add = [&](const std::string& name, bool ok, double value, double threshold) {
    checks.push_back({{"name", name}, {"pass", ok}, {"value", value}, {"threshold", threshold}});
    pass = pass && ok;
  };

  if (trace.rows.empty()) {
    add("nonempty_trace", false, 0.0, 1.0);
  } else {
    const int last_k = trace.rows.back().k;
    double final_violation = 0.0;
    double final_v0 = kNegInf;
    int finals = 0;
    for (const auto& row : trace.rows) {
      if (row.k != last_k) continue;
      final_violation = std::max(final_violation, row.violation);
      final_v0 = std::max(final_v0, row.v0);
      ++finals;
    }
    (void)finals;
    if (thresholds.contains("max_final_violation")) {
      const double thr = thresholds.at("max_final_violation").get<double>();
      add("max_final_violation", final_violation <= thr, final_violation, thr);
    }
    if (thresholds.contains("min_final_v0")) {
      const double thr = thresholds.at("min_final_v0").get<double>();
      add("min_final_v0", final_v0 >= thr, final_v0, thr);
    }
  }

  if (thresholds.value("require_duals_in_bounds", true)) {
    bool ok = trace.footer.duals_in_bounds;
    const double box = trace.header.b_lambda;
    for (const auto& row : trace.rows) {
      if (row.lambda < 0.0 || row.nu < 0.0 || row.lambda > box + 1e-12 ||
          row.nu > box + 1e-12) {
        ok = false;
      }
    }
    add("duals_in_bounds", ok, trace.footer.max_dual, box);
  }
  if (thresholds.value("require_consensus_envelope", true)) {
    bool ok = trace.footer.consensus_within_envelope;
    const double env = trace.header.consensus_envelope;
    for (const auto& row : trace.rows) {
      if (row.consensus_err > env + 1e-12) ok = false;
    }
    add("consensus_within_envelope", ok, trace.footer.max_consensus_error, env);
  }
  if (thresholds.value("require_monotone_rows", true)) {
    bool ok = true;
    for (std::size_t i = 1; i < trace.rows.size(); ++i) {
      const auto& a = trace.rows[i - 1];
      const auto& b = trace.rows[i];
      if (std::pair(a.k, a.agent) >= std::pair(b.k, b.agent)) ok = false;
    }
    add("monotone_rows", ok, 0.0, 0.0);
  }
  add("status_ok", trace.footer.status == "ok", 0.0, 0.0);

  (void)problem;
  return {{"pass", pass}, {"checks", checks}};
}

}  // namespace cmtrl
