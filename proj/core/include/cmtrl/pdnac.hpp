#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <vector>

#include "cmtrl/pdnpg.hpp"
#include "cmtrl/rng.hpp"

namespace cmtrl {

/// Tabular TD(0) estimate of one task's Q function.
struct CriticTable {
  Eigen::MatrixXd q_hat;  // n_states x n_actions

  static CriticTable zeros(int n_states, int n_actions);
};

/// A single agent's position on its own continuing trajectory, with its
/// private random stream. Streams are never shared across agents.
struct SamplerCursor {
  int s = 0;
  int a = 0;
  RngStream stream;
};

/// epsilon-greedy exploration mixture: eps/|A| + (1 - eps) pi. Every entry of
/// the result is at least eps/|A|.
PolicyTable mix_behavior(const PolicyTable& policy, double eps);

struct TransitionRecord {
  int s = 0;
  int a = 0;
  int s_next = 0;
  int a_next = 0;
  double reward = 0.0;
};

/// Advances the cursor one step: s' ~ P(.|s,a) and a' ~ behavior(.|s'), both
/// by inverse-CDF on the agent's stream. Returns the consumed transition with
/// the given task's reward at (s, a).
TransitionRecord markov_step(const MultiTaskProblem& problem, int task,
                             SamplerCursor& cursor, const PolicyTable& behavior);

/// In-place TD(0) update of the single entry (s, a):
///   q(s,a) <- (1-beta) q(s,a) + beta (r + gamma q(s',a')).
void td0_update(CriticTable& critic, const TransitionRecord& rec, double beta,
                double gamma);

/// Critic-based value estimate sum_{s,a} rho(s) pi(a|s) q_hat(s,a).
double critic_value_estimate(const Eigen::VectorXd& rho, const PolicyTable& policy,
                             const CriticTable& critic);

/// Dual step driven by critic value estimates instead of exact values. The
/// target policies (not the behavior policies) weight the critics.
DualState ac_dual_step(const DualState& dual, const MultiTaskProblem& problem,
                       const std::vector<PolicyTable>& target_policies,
                       const std::vector<CriticTable>& critics, double eta);

struct PdnacOptions {
  int iterations = 1000;  // K
  /// alpha = alpha0 / K^(5/6); default alpha0 = alpha_scale sqrt(1-sigma2)/N^(1/4).
  std::optional<double> alpha0;
  double alpha_scale = 1.0;
  double beta0 = 1.0;  // beta = beta0 / sqrt(K), must land in (0, 1]
  double eta0 = 1.0;   // eta = eta0 / K^(5/6)
  double eps0 = 1.0;   // eps = min(eps0 / K^(1/6), 1)
  /// Conservative lower bound on the minimum stationary state mass, used only
  /// by the step-size premise check (warn, never abort). Default 1/(4 S).
  std::optional<double> mu_lower;
  Mode mode = Mode::kDecentral;
  int eval_every = 1;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
};

/// Online single-trajectory primal-dual natural actor-critic. Each iteration
/// consumes exactly one transition per agent, in the order: observe, critic
/// TD(0), actor consensus step, behavior refresh, dual step.
RunResult run_pdnac(const MultiTaskProblem& problem, const CommGraph& graph,
                    const PdnacOptions& options, TraceWriter* sink = nullptr);

}  // namespace cmtrl
