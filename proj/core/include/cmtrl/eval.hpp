#pragma once

#include <Eigen/Dense>

#include <iosfwd>
#include <string>
#include <vector>

#include "cmtrl/mdp.hpp"

namespace cmtrl {

/// Row-stochastic action distribution per state.
struct PolicyTable {
  Eigen::MatrixXd probs;  // n_states x n_actions

  static PolicyTable uniform(int n_states, int n_actions);
};

std::vector<std::string> validate(const PolicyTable& policy);

/// V, Q and advantage of one policy on one task, plus the value under the
/// initial distribution. advantage(s,a) = q(s,a) - v(s).
struct ValueBundle {
  Eigen::VectorXd v;          // n_states
  Eigen::MatrixXd q;          // n_states x n_actions
  Eigen::MatrixXd advantage;  // n_states x n_actions
  double v_rho = 0.0;
};

/// Exact policy evaluation by a dense direct solve of (I - gamma P^pi) V =
/// r^pi. Throws std::runtime_error if the solve residual exceeds
/// 1e-9 * max(1, R_max).
ValueBundle policy_evaluation(const MultiTaskProblem& problem, int task,
                              const PolicyTable& policy);

/// V_i(rho) for every task under one policy.
Eigen::VectorXd task_values(const MultiTaskProblem& problem, const PolicyTable& policy);

/// Arithmetic mean of the per-task values V_i(rho).
double average_value(const MultiTaskProblem& problem, const PolicyTable& policy);

/// V_0 + sum_i (lambda_i (V_i - l_i) - nu_i (V_i - u_i)); terms with infinite
/// bounds contribute 0. Negative dual entries are a contract violation.
double lagrangian_value(const MultiTaskProblem& problem, const PolicyTable& policy,
                        const Eigen::VectorXd& lambda, const Eigen::VectorXd& nu);

/// sum_i ([l_i - V_i]_+ + [V_i - u_i]_+) given precomputed task values.
double constraint_violation(const MultiTaskProblem& problem, const Eigen::VectorXd& values);
double constraint_violation(const MultiTaskProblem& problem, const PolicyTable& policy);

struct RolloutResult {
  std::vector<int> path;  // visited states, starting state first
  bool reached_absorbing = false;
  bool cycle = false;
};

/// Follows argmax_a pi(a|s) through deterministic dynamics (ties to the
/// lowest action index) until an absorbing state, a revisited state (cycle)
/// or max_steps. Throws std::invalid_argument on stochastic dynamics.
RolloutResult greedy_rollout(const MultiTaskProblem& problem, const PolicyTable& policy,
                             int start_state, int max_steps);

/// Discounted state-visitation distribution d(s) = (1-gamma) sum_k gamma^k
/// P(s_k = s), computed by solving (I - gamma (P^pi)^T) d = (1-gamma) init.
Eigen::VectorXd discounted_visitation(const MultiTaskProblem& problem,
                                      const PolicyTable& policy,
                                      const Eigen::VectorXd& initial);

struct TinyCmdpSolution {
  bool feasible = false;
  double value = kNegInf;
  PolicyTable policy;
  /// Objective improvement gained by the final fine-resolution pass; a
  /// concrete handle on the resolution-level error of this oracle.
  double refine_gain = 0.0;
  /// True when the coarse stage enumerated the full product grid; false when
  /// it fell back to multi-start coordinate sweeps (large instances).
  bool exhaustive = false;
};

struct TinyCmdpOptions {
  int coarse_resolution = 40;
  int fine_resolution = 200;
  /// Coarse product grids larger than this fall back to block-coordinate
  /// sweeps over per-state simplices with multi-start.
  long long max_grid_points = 20'000'000;
  int restarts = 24;
  std::uint64_t seed = 0;
};

/// Approximate constrained-optimum oracle for desk-size instances: searches
/// per-state action simplices on a fixed lattice, keeps the best feasible
/// point, then refines once at the fine resolution around the incumbent.
/// The result carries resolution-level error by construction.
TinyCmdpSolution tiny_cmdp_oracle(const MultiTaskProblem& problem,
                                  const TinyCmdpOptions& options = {});

/// Debug export, columns s,a,Q,A with a header row.
void write_value_bundle_csv(const ValueBundle& bundle, std::ostream& os);

}  // namespace cmtrl
