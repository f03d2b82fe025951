#pragma once

// Shared instance builders for the test and acceptance suites.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

#include "cmtrl/eval.hpp"
#include "cmtrl/mdp.hpp"
#include "cmtrl/rng.hpp"

namespace testsupport {

inline cmtrl::MultiTaskProblem random_cmdp(int S, int A, int N, double gamma,
                                           std::uint64_t seed, double reward_scale = 1.0) {
  cmtrl::RngStream rng(seed, 4242);
  cmtrl::MultiTaskProblem p;
  p.n_states = S;
  p.n_actions = A;
  p.n_tasks = N;
  p.gamma = gamma;
  p.transition.resize(S * A, S);
  for (int r = 0; r < S * A; ++r) {
    Eigen::VectorXd row(S);
    for (int s = 0; s < S; ++s) row(s) = rng.next_double() + 0.1;
    p.transition.row(r) = row / row.sum();
  }
  for (int i = 0; i < N; ++i) {
    Eigen::MatrixXd table(S, A);
    for (int s = 0; s < S; ++s) {
      for (int a = 0; a < A; ++a) table(s, a) = reward_scale * rng.next_double();
    }
    p.rewards.push_back(table);
  }
  p.rho = Eigen::VectorXd::Constant(S, 1.0 / S);
  p.lower_bounds = Eigen::VectorXd::Constant(N, cmtrl::kNegInf);
  p.upper_bounds = Eigen::VectorXd::Constant(N, cmtrl::kPosInf);
  p.slater_margin = 0.5;
  return p;
}

inline cmtrl::PolicyTable random_policy(int S, int A, cmtrl::RngStream& rng) {
  cmtrl::PolicyTable pi;
  pi.probs.resize(S, A);
  for (int s = 0; s < S; ++s) {
    Eigen::VectorXd row(A);
    for (int a = 0; a < A; ++a) row(a) = -std::log(std::max(rng.next_double(), 1e-300));
    pi.probs.row(s) = (row / row.sum()).transpose();
  }
  return pi;
}

/// Greedy value iteration on one reward table, used to place binding bounds.
inline double optimal_value(const cmtrl::MultiTaskProblem& p, const Eigen::MatrixXd& reward) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(p.n_states);
  for (int it = 0; it < 4000; ++it) {
    Eigen::VectorXd next(p.n_states);
    for (int s = 0; s < p.n_states; ++s) {
      double best = -1e300;
      for (int a = 0; a < p.n_actions; ++a) {
        best = std::max(best, reward(s, a) +
                                  p.gamma * p.transition.row(p.sa_index(s, a)).dot(v));
      }
      next(s) = best;
    }
    if ((next - v).cwiseAbs().maxCoeff() < 1e-13) {
      v = next;
      break;
    }
    v = next;
  }
  return p.rho.dot(v);
}

/// Random two-task CMDP whose second task carries a binding lower bound.
inline cmtrl::MultiTaskProblem binding_cmdp(int S, int A, std::uint64_t seed) {
  cmtrl::MultiTaskProblem p = random_cmdp(S, A, 2, 0.9, seed);
  const double best_task2 = optimal_value(p, p.rewards[1]);
  const double base =
      cmtrl::policy_evaluation(p, 1, cmtrl::PolicyTable::uniform(S, A)).v_rho;
  p.lower_bounds(1) = base + 0.75 * (best_task2 - base);
  p.slater_margin = 0.05;
  return p;
}

}  // namespace testsupport
