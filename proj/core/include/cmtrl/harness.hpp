#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cmtrl/lfa.hpp"
#include "cmtrl/pdnac.hpp"
#include "cmtrl/pdnpg.hpp"

namespace cmtrl {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;
inline constexpr int kExitScore = 4;

/// Configuration error with a JSON-pointer-style path to the offending key.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Fully validated run description. Unknown keys are rejected; every field is
/// checked before anything runs. The hash of the raw config bytes rides along
/// into the trace header.
struct RunConfig {
  std::string algorithm;  // pdnpg | pdnac | lfa
  nlohmann::json problem_json;
  nlohmann::json graph_json;  // may be null for central runs
  std::string mode = "decentral";
  int iterations = 0;   // K
  int inner_steps = 1;  // T (lfa)
  int eval_every = 1;
  std::optional<double> alpha0;
  double alpha_scale = 1.0;
  double eta0 = 1.0;
  double beta0 = 1.0;
  double eps0 = 1.0;
  double eps_max = 0.0;
  std::optional<double> mu_lower;
  std::string features = "identity";
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;

  /// Parses and validates raw JSON bytes. The CMTRL_SEED environment
  /// variable, when set, overrides the configured seed.
  static RunConfig parse(const std::string& bytes);

  MultiTaskProblem build_problem() const;
  CommGraph build_graph(int n_tasks) const;
};

/// Runs the configured experiment, streaming the trace to `out_path` (written
/// incrementally, flushed on completion; on a numerical failure the partial
/// trace is kept and an error footer appended). Returns a process exit code.
/// The in-memory trace/result are exposed through the optional out-params.
int run_experiment(const RunConfig& config, const std::string& out_path,
                   MetricsTrace* trace_out = nullptr, RunResult* result_out = nullptr);

struct SweepRow {
  int iterations = 0;
  double best_running_avg = 0.0;  // gap+violation when an oracle exists
  bool oracle_used = false;
  double oracle_value = 0.0;
  double oracle_refine_gain = 0.0;
};

struct SweepSummary {
  std::vector<SweepRow> rows;
  /// Log-log slope of the metric against K from a least-squares fit.
  double rate_slope = 0.0;
};

/// Re-runs the base config at each K and reports the best running average of
/// (gap-to-oracle + violation), gap measured against the grid oracle when the
/// instance is small enough, otherwise violation only.
SweepSummary rate_sweep(const RunConfig& base, const std::vector<int>& k_list,
                        bool parallel = false);

void write_sweep_csv(const SweepSummary& summary, std::ostream& os);

/// Evaluates threshold predicates against a trace. Thresholds JSON keys:
///   max_final_violation, min_final_v0 (optional numbers),
///   require_duals_in_bounds, require_consensus_envelope, require_monotone_rows
///   (optional booleans, default true for the requires).
/// Returns a machine-readable verdict {pass, checks:[{name,pass,value,threshold}]}.
nlohmann::json score_trace(const MetricsTrace& trace, const MultiTaskProblem& problem,
                           const nlohmann::json& thresholds);

/// Best (lowest) running average over k of the mean-over-agents series of
/// clamp(oracle - v0, 0) + violation. With no oracle, pass oracle = -inf to
/// score violation only.
double best_running_average(const MetricsTrace& trace, double oracle_value);

}  // namespace cmtrl
