// cmtrl - constrained multi-task RL experiment runner.
//
// Subcommands: pdnpg, pdnac, lfa (run one experiment from a JSON config),
// maze-demo (the three-task bridge benchmark), sweep (rate sweep over K),
// score (threshold verdict on a trace), spectrum (consensus weights and
// sigma2 for a graph spec), measure-epsmax (suggested feature approximation
// ceiling).

#include "CLI11.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "cmtrl/harness.hpp"

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw cmtrl::ConfigError("cannot read file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_from_config(const std::string& algorithm, const std::string& config_path,
                    const std::string& out_path) {
  cmtrl::RunConfig config;
  try {
    config = cmtrl::RunConfig::parse(slurp(config_path));
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return cmtrl::kExitConfig;
  }
  if (config.algorithm != algorithm) {
    std::cerr << "config error: /algorithm: config names " << config.algorithm
              << " but the " << algorithm << " subcommand was invoked\n";
    return cmtrl::kExitConfig;
  }
  cmtrl::MetricsTrace trace;
  const int code = cmtrl::run_experiment(config, out_path, &trace);
  if (code == cmtrl::kExitOk) {
    const auto& last = trace.rows.back();
    std::cout << "done: K=" << config.iterations << " final_v0=" << last.v0
              << " final_violation=" << last.violation << " trace=" << out_path << "\n";
  }
  return code;
}

int maze_demo(const std::string& out_dir, int iterations, double alpha_scale,
              double eta0, std::uint64_t seed) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  struct Variant {
    const char* name;
    bool constrained;
  };
  const Variant variants[] = {{"constrained", true}, {"unconstrained", false}};

  // Reference: exact value of the deterministic fourth-bridge path policy,
  // the optimum of the constrained problem.
  const cmtrl::MazeSpec spec = cmtrl::three_bridges_maze(true);
  const cmtrl::MultiTaskProblem reference_problem = cmtrl::build_gridworld(spec);

  int status = cmtrl::kExitOk;
  for (const auto& variant : variants) {
    nlohmann::json config_json = {
        {"algorithm", "pdnpg"},
        {"problem",
         {{"preset", variant.constrained ? "three_bridges" : "three_bridges_unconstrained"}}},
        {"graph", {{"preset", "ring"}, {"n", 3}}},
        {"mode", "decentral"},
        {"K", iterations},
        {"alpha_scale", alpha_scale},
        {"eta0", eta0},
        {"eval_every", 25},
        {"seed", seed}};
    cmtrl::RunConfig config = cmtrl::RunConfig::parse(config_json.dump(2));
    const std::string out_path =
        (fs::path(out_dir) / (std::string("maze_") + variant.name + ".csv")).string();

    cmtrl::MetricsTrace trace;
    cmtrl::RunResult result;
    const int code = cmtrl::run_experiment(config, out_path, &trace, &result);
    if (code != cmtrl::kExitOk) return code;

    std::cout << "=== " << variant.name << " run ===\n";
    const int start_state = spec.state_of(spec.start);
    for (std::size_t j = 0; j < result.policies.size(); ++j) {
      const auto rollout = cmtrl::greedy_rollout(reference_problem, result.policies[j],
                                                 start_state, 200);
      const int bridge = cmtrl::bridge_crossed(spec, rollout.path);
      const Eigen::VectorXd values = cmtrl::task_values(reference_problem, result.policies[j]);
      std::cout << "agent " << j << ": greedy path crosses bridge "
                << (bridge >= 0 ? std::to_string(bridge + 1) : std::string("none"))
                << (rollout.reached_absorbing ? "" : " (goal not reached)")
                << ", V = [" << values.transpose() << "]"
                << ", violation vs (5,50,500) = "
                << cmtrl::constraint_violation(reference_problem, values) << "\n";
    }
    const auto& last = trace.rows.back();
    std::cout << "final v0 = " << last.v0 << ", trace = " << out_path << "\n";
  }
  return status;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"constrained multi-task RL experiments"};
  app.require_subcommand(1);

  std::string config_path, out_path, trace_path, problem_path, thresholds_path,
      graph_spec, out_dir = "maze_out", k_csv, features_spec = "identity";
  int iterations = 6000, n_policies = 20;
  double alpha_scale = 12.0, eta0 = 12.0, eps_mix = 0.2;
  std::uint64_t seed = 1;
  bool parallel = false;

  auto add_run = [&](const char* name, const char* help) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "run config JSON")->required();
    sub->add_option("--out", out_path, "trace CSV output path")->required();
    return sub;
  };
  CLI::App* cmd_pdnpg = add_run("pdnpg", "exact-gradient primal-dual natural policy gradient");
  CLI::App* cmd_pdnac = add_run("pdnac", "online single-trajectory primal-dual actor-critic");
  CLI::App* cmd_lfa = add_run("lfa", "nested-loop actor-critic with linear features");

  CLI::App* cmd_maze = app.add_subcommand("maze-demo", "three-task bridge benchmark");
  cmd_maze->add_option("--out-dir", out_dir, "directory for trace CSVs");
  cmd_maze->add_option("--k", iterations, "iterations (default 6000)");
  cmd_maze->add_option("--alpha-scale", alpha_scale, "actor step scale");
  cmd_maze->add_option("--eta0", eta0, "dual step numerator");
  cmd_maze->add_option("--seed", seed, "trace header seed");

  CLI::App* cmd_sweep = app.add_subcommand("sweep", "rerun a config over several K values");
  cmd_sweep->add_option("--config", config_path, "base run config JSON")->required();
  cmd_sweep->add_option("--k", k_csv, "comma-separated K list, e.g. 500,2000")->required();
  cmd_sweep->add_option("--out", out_path, "summary CSV output path")->required();
  cmd_sweep->add_flag("--parallel", parallel, "run the K values concurrently");

  CLI::App* cmd_score = app.add_subcommand("score", "evaluate thresholds against a trace");
  cmd_score->add_option("--trace", trace_path, "trace CSV")->required();
  cmd_score->add_option("--problem", problem_path, "problem JSON")->required();
  cmd_score->add_option("--thresholds", thresholds_path, "thresholds JSON")->required();
  cmd_score->add_option("--out", out_path, "verdict JSON output path");

  CLI::App* cmd_spectrum = app.add_subcommand("spectrum", "print consensus weights and sigma2");
  cmd_spectrum->add_option("--graph", graph_spec, "graph spec JSON (inline or @file)")
      ->required();

  CLI::App* cmd_eps = app.add_subcommand("measure-epsmax",
                                         "suggest eps_max for a feature set");
  cmd_eps->add_option("--config", config_path, "run config JSON (problem + features)")
      ->required();
  cmd_eps->add_option("--policies", n_policies, "number of random mixed policies");
  cmd_eps->add_option("--eps", eps_mix, "exploration mix of the sampled policies");

  CLI11_PARSE(app, argc, argv);

  try {
    if (cmd_pdnpg->parsed()) return run_from_config("pdnpg", config_path, out_path);
    if (cmd_pdnac->parsed()) return run_from_config("pdnac", config_path, out_path);
    if (cmd_lfa->parsed()) return run_from_config("lfa", config_path, out_path);

    if (cmd_maze->parsed()) {
      return maze_demo(out_dir, iterations, alpha_scale, eta0, seed);
    }

    if (cmd_sweep->parsed()) {
      cmtrl::RunConfig base = cmtrl::RunConfig::parse(slurp(config_path));
      std::vector<int> ks;
      std::stringstream ss(k_csv);
      std::string tok;
      while (std::getline(ss, tok, ',')) ks.push_back(std::stoi(tok));
      const cmtrl::SweepSummary summary = cmtrl::rate_sweep(base, ks, parallel);
      std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
      if (!out) throw cmtrl::ConfigError("cannot open output path " + out_path);
      cmtrl::write_sweep_csv(summary, out);
      for (std::size_t i = 1; i < summary.rows.size(); ++i) {
        const auto& a = summary.rows[i - 1];
        const auto& b = summary.rows[i];
        std::cout << "K " << a.iterations << " -> " << b.iterations << ": metric ratio "
                  << (b.best_running_avg > 0 ? a.best_running_avg / b.best_running_avg : 0.0)
                  << "\n";
      }
      std::cout << "rate slope (log-log) = " << summary.rate_slope << "\n";
      return cmtrl::kExitOk;
    }

    if (cmd_score->parsed()) {
      std::ifstream trace_in(trace_path, std::ios::binary);
      if (!trace_in) throw cmtrl::ConfigError("cannot read trace: " + trace_path);
      const cmtrl::MetricsTrace trace = cmtrl::read_trace_csv(trace_in);
      const auto problem =
          cmtrl::MultiTaskProblem::from_json(nlohmann::json::parse(slurp(problem_path)));
      const auto thresholds = nlohmann::json::parse(slurp(thresholds_path));
      const nlohmann::json verdict = cmtrl::score_trace(trace, problem, thresholds);
      const std::string text = verdict.dump(2);
      if (!out_path.empty()) {
        std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
        out << text << "\n";
      }
      std::cout << text << "\n";
      return verdict.at("pass").get<bool>() ? cmtrl::kExitOk : cmtrl::kExitScore;
    }

    if (cmd_spectrum->parsed()) {
      const std::string raw =
          graph_spec.size() && graph_spec[0] == '@' ? slurp(graph_spec.substr(1)) : graph_spec;
      const auto graph = cmtrl::CommGraph::from_json(nlohmann::json::parse(raw));
      const auto weights = cmtrl::lazy_metropolis(graph);
      cmtrl::write_weight_matrix_csv(weights, std::cout);
      std::cout << "# sigma2=" << cmtrl::format_g17(weights.sigma2)
                << " spectral_gap=" << cmtrl::format_g17(1.0 - weights.sigma2) << "\n";
      return cmtrl::kExitOk;
    }

    if (cmd_eps->parsed()) {
      const cmtrl::RunConfig config = cmtrl::RunConfig::parse(slurp(config_path));
      const auto problem = config.build_problem();
      const auto features = cmtrl::make_features(config.features, problem, config.seed);
      const double suggestion =
          cmtrl::measure_eps_max(problem, features, n_policies, eps_mix, config.seed);
      std::cout << "suggested eps_max = " << cmtrl::format_g17(suggestion) << " (over "
                << n_policies << " policies, eps = " << eps_mix << ")\n";
      return cmtrl::kExitOk;
    }
  } catch (const cmtrl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return cmtrl::kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return cmtrl::kExitConfig;
  } catch (const std::runtime_error& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return cmtrl::kExitNumerical;
  }
  return cmtrl::kExitOk;
}
