#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cmtrl/pdnac.hpp"

namespace cmtrl {

/// Feature matrix Phi, one row phi(s,a)^T per state-action pair (row-major
/// s*A + a), with cached extreme singular values. Rows must have norm <= 1
/// and Phi must have full column rank.
struct FeatureSet {
  Eigen::MatrixXd phi;  // (S*A) x d
  double sigma_min = 0.0;
  double sigma_max = 0.0;
  int d = 0;
  int n_states = 0;
  int n_actions = 0;

  Eigen::RowVectorXd row(int s, int a) const { return phi.row(s * n_actions + a); }

  /// Tabular features, d = S*A.
  static FeatureSet identity(int n_states, int n_actions);
  /// State-aggregation tiles of the given width: phi(s,a) indicates
  /// (tile(s), a), d = ceil(S/width)*A.
  static FeatureSet tiles(int n_states, int n_actions, int width);
  /// Random orthonormal columns, globally rescaled so every row has norm <= 1.
  static FeatureSet random_orthonormal(int n_states, int n_actions, int d,
                                       std::uint64_t seed);
  /// Wraps an explicit matrix, computing the cached singular values. Throws
  /// if a row norm exceeds 1 or the matrix is column-rank deficient.
  static FeatureSet from_matrix(Eigen::MatrixXd phi, int n_states, int n_actions);
};

std::vector<std::string> validate(const FeatureSet& features);

/// Critic projection radius
///   B_omega = (R_max sqrt(S A / (1-gamma)) + eps_max) / sigma_min(Phi).
double compute_bomega(const FeatureSet& features, double gamma, double eps_max,
                      double r_max);

/// pi(a|s) proportional to exp(phi(s,a)^T theta), per-state max-subtracted.
PolicyTable loglinear_policy(const Eigen::VectorXd& theta, const FeatureSet& features);

/// Stationary distribution of the chain induced by the policy on the given
/// (S*A) x S transition table: solves mu^T P = mu^T with normalization by a
/// direct solve. Throws std::runtime_error when the distribution is not
/// unique or not nonnegative (reducible chain); an eps-mixed policy avoids
/// this.
Eigen::VectorXd stationary_distribution(const Eigen::MatrixXd& transition,
                                        const PolicyTable& policy);

struct ProjectedModel {
  Eigen::MatrixXd h_bar;  // d x d
  Eigen::VectorXd b_bar;  // d
};

/// Exact assembly of the projected-Bellman system for one task:
///   H = Phi^T M (gamma Ptilde - I) Phi,  b = Phi^T M r,
/// with M the diagonal of stationary state-action masses mu(s) pi(a|s).
ProjectedModel assemble_hbar_bbar(const MultiTaskProblem& problem, int task,
                                  const PolicyTable& policy, const FeatureSet& features);

/// omega* = -H^{-1} b; residual checked to 1e-9 * max(1, ||b||).
Eigen::VectorXd solve_projected_bellman(const MultiTaskProblem& problem, int task,
                                        const PolicyTable& policy,
                                        const FeatureSet& features);

/// Norm-ball-projected linear critic.
struct LinearCritic {
  Eigen::VectorXd omega;
  double radius = 0.0;  // B_omega
};

/// Semi-gradient TD step followed by Euclidean projection onto the
/// B_omega ball:
///   w <- Pi_B( w + beta phi(s,a) (r + (gamma phi(s',a') - phi(s,a))^T w) ).
void projected_td_step(LinearCritic& critic, const FeatureSet& features,
                       const TransitionRecord& rec, double beta, double gamma);

struct LfaOptions {
  int iterations = 100;  // K, outer loop
  int inner_steps = 10;  // T, projected-TD steps per outer iteration
  /// All schedules are driven by the target precision delta = K^{-1/2}:
  ///   alpha = alpha0 delta sqrt(1-sigma2)/N^(1/4), beta = beta0 delta^3 /
  ///   max(log(1/delta),1), eta = eta0 delta, eps = min(eps0 delta, 1).
  /// An explicit alpha0 replaces alpha_scale * sqrt(1-sigma2)/N^(1/4).
  std::optional<double> alpha0;
  double alpha_scale = 1.0;
  double beta0 = 1.0;
  double eta0 = 1.0;
  double eps0 = 1.0;
  double eps_max = 0.0;
  int eval_every = 1;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
};

/// Nested-loop decentralized actor-critic under log-linear policies and
/// linear critics. Each outer iteration runs T projected-TD steps per agent
/// on its continuing trajectory (the cursor carries across iterations), then
/// the consensus actor step, behavior refresh and dual step.
RunResult run_lfa(const MultiTaskProblem& problem, const CommGraph& graph,
                  const FeatureSet& features, const LfaOptions& options,
                  TraceWriter* sink = nullptr);

/// Sweeps random eps-mixed policies and reports the largest observed
/// ||Phi omega*(pi) - Q^pi||_2 over tasks, a concrete suggestion for eps_max.
double measure_eps_max(const MultiTaskProblem& problem, const FeatureSet& features,
                       int n_policies, double eps, std::uint64_t seed);

/// Parses "identity", "tiles:<w>" or "random:<d>".
FeatureSet make_features(const std::string& spec, const MultiTaskProblem& problem,
                         std::uint64_t seed);

}  // namespace cmtrl
