#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <vector>

#include "cmtrl/eval.hpp"
#include "cmtrl/graph.hpp"
#include "cmtrl/mdp.hpp"
#include "cmtrl/trace.hpp"

namespace cmtrl {

/// Softmax actor parameters for one agent. The parameter is kept raw; the
/// per-state max is subtracted only inside the exponentiation, which picks a
/// numerically safe representative of the shift-invariance class.
struct TabularActorState {
  Eigen::MatrixXd theta;  // n_states x n_actions

  PolicyTable policy() const;
};

/// Dual pair for every task, kept inside [0, b_lambda] by projection. Tasks
/// with an infinite bound have their dual pinned at exactly 0.
struct DualState {
  Eigen::VectorXd lambda;
  Eigen::VectorXd nu;
  double b_lambda = 0.0;

  static DualState zeros(int n_tasks, double b_lambda);
};

/// Row-stochastic softmax of theta with per-state max subtraction. Throws on
/// non-finite parameters.
PolicyTable softmax_policy(const Eigen::MatrixXd& theta);

/// Projected dual gradient step:
///   lambda' = clamp(lambda - eta (V - lower), 0, B)
///   nu'     = clamp(nu     + eta (V - upper), 0, B)
/// Infinite bounds pin the corresponding dual to 0.
DualState dual_step(const DualState& dual, const Eigen::VectorXd& values,
                    const Eigen::VectorXd& lower, const Eigen::VectorXd& upper,
                    double eta);

/// Row-major (s*A + a) flattening used to stack per-agent tables.
Eigen::VectorXd flatten_sa(const Eigen::MatrixXd& table);
Eigen::MatrixXd unflatten_sa(const Eigen::VectorXd& flat, int n_states, int n_actions);

/// One decentralized natural-gradient actor round:
///   theta_i' = sum_j W_ij theta_j + alpha (1/N + lambda_i - nu_i) Q_i.
/// `thetas` stacks one flattened parameter vector per agent; `q_tables` holds
/// each agent's own-task critic.
Eigen::MatrixXd npg_actor_step(const Eigen::MatrixXd& thetas, const WeightMatrix& w,
                               const std::vector<Eigen::MatrixXd>& q_tables,
                               const DualState& duals, double alpha);

enum class Mode { kCentral, kDecentral };

struct PdnpgOptions {
  int iterations = 1000;  // K
  /// Step size numerator; the run uses alpha = alpha0 / sqrt(K). When absent,
  /// alpha0 = alpha_scale * sqrt(1 - sigma2) / N^(1/4).
  std::optional<double> alpha0;
  double alpha_scale = 1.0;
  /// Dual step numerator; eta = eta0 / sqrt(K).
  double eta0 = 1.0;
  Mode mode = Mode::kDecentral;
  int eval_every = 1;
  std::uint64_t seed = 0;  // recorded in the trace; the algorithm is deterministic
  std::uint64_t config_hash = 0;
};

struct RunResult {
  MetricsTrace trace;
  /// Final stacked actor parameters, one row per agent (n_agents x S*A for
  /// the tabular algorithms, n_agents x d under linear features).
  Eigen::MatrixXd thetas;
  std::vector<PolicyTable> policies;
  DualState duals;
};

/// Exact-gradient primal-dual natural policy gradient. Decentralized mode
/// runs one agent per task over the given graph; central mode keeps a single
/// parameter vector updated with the full dual-weighted gradient sum.
RunResult run_pdnpg(const MultiTaskProblem& problem, const CommGraph& graph,
                    const PdnpgOptions& options, TraceWriter* sink = nullptr);

}  // namespace cmtrl
