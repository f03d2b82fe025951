#include "doctest.h"

#include <cmath>
#include <random>

#include "cmtrl/eval.hpp"
#include "cmtrl/mdp.hpp"
#include "cmtrl/rng.hpp"

using namespace cmtrl;

namespace {

MultiTaskProblem single_state_problem(double reward, double gamma) {
  MultiTaskProblem p;
  p.n_states = 1;
  p.n_actions = 1;
  p.n_tasks = 1;
  p.gamma = gamma;
  p.transition = Eigen::MatrixXd::Ones(1, 1);
  p.rewards = {Eigen::MatrixXd::Constant(1, 1, reward)};
  p.rho = Eigen::VectorXd::Ones(1);
  p.lower_bounds = Eigen::VectorXd::Constant(1, kNegInf);
  p.upper_bounds = Eigen::VectorXd::Constant(1, kPosInf);
  p.slater_margin = 0.5;
  return p;
}

MultiTaskProblem random_problem(int S, int A, int N, double gamma, std::uint64_t seed) {
  RngStream rng(seed, 99);
  MultiTaskProblem p;
  p.n_states = S;
  p.n_actions = A;
  p.n_tasks = N;
  p.gamma = gamma;
  p.transition.resize(S * A, S);
  for (int r = 0; r < S * A; ++r) {
    Eigen::VectorXd row(S);
    for (int s = 0; s < S; ++s) row(s) = rng.next_double() + 0.05;
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
  return p;
}

PolicyTable random_policy(int S, int A, RngStream& rng) {
  PolicyTable pi;
  pi.probs.resize(S, A);
  for (int s = 0; s < S; ++s) {
    Eigen::VectorXd row(A);
    for (int a = 0; a < A; ++a) row(a) = -std::log(std::max(rng.next_double(), 1e-300));
    pi.probs.row(s) = (row / row.sum()).transpose();
  }
  return pi;
}

}  // namespace

TEST_CASE("single-state evaluation is a geometric series") {
  const MultiTaskProblem p = single_state_problem(1.0, 0.9);
  const ValueBundle v = policy_evaluation(p, 0, PolicyTable::uniform(1, 1));
  CHECK(v.v(0) == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(v.q(0, 0) == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(v.advantage(0, 0) == doctest::Approx(0.0));
  CHECK(v.v_rho == doctest::Approx(10.0));
}

TEST_CASE("two-state chain evaluates by hand recursion") {
  // s0 -> s1 (absorbing), r(s0,.) = 0, r(s1,.) = 1, gamma = 0.5.
  MultiTaskProblem p;
  p.n_states = 2;
  p.n_actions = 1;
  p.n_tasks = 1;
  p.gamma = 0.5;
  p.transition.resize(2, 2);
  p.transition << 0, 1, 0, 1;
  Eigen::MatrixXd r(2, 1);
  r << 0, 1;
  p.rewards = {r};
  p.rho = Eigen::VectorXd::Zero(2);
  p.rho(0) = 1.0;
  p.lower_bounds = Eigen::VectorXd::Constant(1, kNegInf);
  p.upper_bounds = Eigen::VectorXd::Constant(1, kPosInf);

  const ValueBundle v = policy_evaluation(p, 0, PolicyTable::uniform(2, 1));
  CHECK(v.v(1) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(v.v(0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("evaluation agrees with a truncated Monte-Carlo oracle") {
  const double gamma = 0.9;
  const MultiTaskProblem p = random_problem(4, 3, 1, gamma, 11);
  RngStream prng(5, 1);
  const PolicyTable pi = random_policy(4, 3, prng);
  const double exact = policy_evaluation(p, 0, pi).v_rho;

  // Horizon chosen so the truncation bias is at most 1e-4 / (1 - gamma).
  const int horizon = static_cast<int>(std::ceil(std::log(1e-4) / std::log(gamma)));
  const int episodes = 100000;
  std::mt19937_64 gen(42);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  auto draw = [&](const double* w, int n, int stride) {
    const double u = unif(gen);
    double cum = 0.0;
    for (int i = 0; i < n; ++i) {
      cum += w[i * stride];
      if (u < cum) return i;
    }
    return n - 1;
  };

  double sum = 0.0, sumsq = 0.0;
  for (int e = 0; e < episodes; ++e) {
    int s = draw(p.rho.data(), 4, 1);
    double ret = 0.0, disc = 1.0;
    for (int t = 0; t < horizon; ++t) {
      const int a = draw(pi.probs.row(s).data(), 3,
                         static_cast<int>(pi.probs.colStride()));
      ret += disc * p.rewards[0](s, a);
      disc *= gamma;
      s = draw(p.transition.row(p.sa_index(s, a)).data(), 4,
               static_cast<int>(p.transition.colStride()));
    }
    sum += ret;
    sumsq += ret * ret;
  }
  const double mean = sum / episodes;
  const double stderr_mc =
      std::sqrt((sumsq / episodes - mean * mean) / episodes);
  const double truncation = 1e-4 / (1.0 - gamma);
  CHECK(std::abs(mean - exact) <= 3.0 * stderr_mc + truncation);
}

TEST_CASE("average value over tasks") {
  SUBCASE("single task equals its own value") {
    const MultiTaskProblem p = single_state_problem(0.5, 0.9);
    const PolicyTable pi = PolicyTable::uniform(1, 1);
    CHECK(average_value(p, pi) == doctest::Approx(policy_evaluation(p, 0, pi).v_rho));
  }
  SUBCASE("identical reward tables collapse to either task's value") {
    MultiTaskProblem p = random_problem(3, 2, 1, 0.8, 3);
    p.rewards.push_back(p.rewards[0]);
    p.n_tasks = 2;
    p.lower_bounds = Eigen::VectorXd::Constant(2, kNegInf);
    p.upper_bounds = Eigen::VectorXd::Constant(2, kPosInf);
    RngStream rng(7, 0);
    const PolicyTable pi = random_policy(3, 2, rng);
    CHECK(average_value(p, pi) == doctest::Approx(policy_evaluation(p, 0, pi).v_rho));
  }
}

TEST_CASE("lagrangian value") {
  MultiTaskProblem p = random_problem(4, 2, 2, 0.9, 21);
  p.lower_bounds << 1.0, 0.5;
  p.upper_bounds << 6.0, 7.5;
  RngStream rng(13, 0);
  const PolicyTable pi = random_policy(4, 2, rng);

  SUBCASE("zero duals reduce to the average value") {
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(2);
    CHECK(lagrangian_value(p, pi, zero, zero) == doctest::Approx(average_value(p, pi)));
  }
  SUBCASE("equal duals cancel to c * sum(u - l)") {
    const double c = 0.37;
    const Eigen::VectorXd cv = Eigen::VectorXd::Constant(2, c);
    const double expected =
        average_value(p, pi) + c * ((6.0 - 1.0) + (7.5 - 0.5));
    CHECK(lagrangian_value(p, pi, cv, cv) == doctest::Approx(expected).epsilon(1e-12));
  }
  SUBCASE("matches recomposition from per-task evaluations") {
    Eigen::VectorXd lambda(2), nu(2);
    lambda << 0.3, 0.0;
    nu << 0.1, 0.9;
    double expected = 0.0;
    Eigen::VectorXd values(2);
    for (int i = 0; i < 2; ++i) values(i) = policy_evaluation(p, i, pi).v_rho;
    expected = values.mean();
    for (int i = 0; i < 2; ++i) {
      expected += lambda(i) * (values(i) - p.lower_bounds(i));
      expected -= nu(i) * (values(i) - p.upper_bounds(i));
    }
    CHECK(lagrangian_value(p, pi, lambda, nu) == doctest::Approx(expected).epsilon(1e-12));
  }
  SUBCASE("negative dual input violates the contract") {
    Eigen::VectorXd lambda = Eigen::VectorXd::Constant(2, -0.1);
    CHECK_THROWS_AS(lagrangian_value(p, pi, lambda, Eigen::VectorXd::Zero(2)),
                    std::invalid_argument);
  }
  SUBCASE("duals attached to infinite bounds contribute nothing") {
    p.lower_bounds(0) = kNegInf;
    p.upper_bounds(1) = kPosInf;
    Eigen::VectorXd lambda(2), nu(2);
    lambda << 0.5, 0.0;  // lambda_0 sits on an absent lower bound
    nu << 0.0, 0.5;      // nu_1 sits on an absent upper bound
    const Eigen::VectorXd values = task_values(p, pi);
    CHECK(lagrangian_value(p, pi, lambda, nu) == doctest::Approx(values.mean()));
  }
}

TEST_CASE("constraint violation") {
  MultiTaskProblem p = single_state_problem(3.0 * (1.0 - 0.9), 0.9);  // V = 3
  SUBCASE("all bounds infinite gives zero") {
    CHECK(constraint_violation(p, PolicyTable::uniform(1, 1)) == 0.0);
  }
  SUBCASE("lower bound five against value three gives two") {
    p.lower_bounds(0) = 5.0;
    CHECK(constraint_violation(p, PolicyTable::uniform(1, 1)) ==
          doctest::Approx(2.0).epsilon(1e-9));
  }
  SUBCASE("upper bound breach counts symmetrically") {
    p.upper_bounds(0) = 2.5;
    CHECK(constraint_violation(p, PolicyTable::uniform(1, 1)) ==
          doctest::Approx(0.5).epsilon(1e-9));
  }
}

TEST_CASE("greedy rollout follows argmax with lowest-index tie-break") {
  // Vertical 2x1 corridor: start below, goal above; uniform policy ties all
  // four actions, so action 0 (up) wins and reaches the goal.
  MazeSpec m;
  m.rows = 2;
  m.cols = 1;
  m.start = {1, 0};
  m.goal = {0, 0};
  m.goal_bonus = {1.0};
  m.move_reward = {-0.1};
  m.gamma = 0.9;
  m.lower = {kNegInf};
  m.upper = {kPosInf};
  const MultiTaskProblem p = build_gridworld(m);

  const auto rollout = greedy_rollout(p, PolicyTable::uniform(2, 4), m.state_of(m.start), 10);
  REQUIRE(rollout.path.size() == 2);
  CHECK(rollout.path[1] == m.state_of(m.goal));
  CHECK(rollout.reached_absorbing);
  CHECK(!rollout.cycle);
}

TEST_CASE("greedy rollout walks a straight row and flags cycles") {
  MazeSpec m;
  m.rows = 2;
  m.cols = 4;
  m.start = {0, 0};
  m.goal = {0, 3};
  m.goal_bonus = {1.0};
  m.move_reward = {-0.1};
  m.gamma = 0.9;
  m.lower = {kNegInf};
  m.upper = {kPosInf};
  const MultiTaskProblem p = build_gridworld(m);

  PolicyTable right;
  right.probs = Eigen::MatrixXd::Zero(8, 4);
  right.probs.col(kRight).setOnes();
  const auto straight = greedy_rollout(p, right, m.state_of(m.start), 10);
  CHECK(straight.reached_absorbing);
  CHECK(straight.path == std::vector<int>{0, 1, 2, 3});

  // Ping-pong policy on the bottom row never reaches the goal.
  PolicyTable pingpong = right;
  pingpong.probs.row(m.state_of({1, 0})) << 0, 0, 0, 1;  // right
  pingpong.probs.row(m.state_of({1, 1})) << 0, 0, 1, 0;  // left
  const auto looped = greedy_rollout(p, pingpong, m.state_of({1, 0}), 10);
  CHECK(looped.cycle);
  CHECK(!looped.reached_absorbing);

  // Stochastic dynamics are rejected.
  const MultiTaskProblem rnd = random_problem(3, 2, 1, 0.9, 5);
  CHECK_THROWS_AS(greedy_rollout(rnd, PolicyTable::uniform(3, 2), 0, 5),
                  std::invalid_argument);
}

TEST_CASE("advantage is zero-mean under the evaluated policy") {
  const MultiTaskProblem p = random_problem(5, 3, 1, 0.9, 31);
  RngStream rng(17, 0);
  for (int rep = 0; rep < 10; ++rep) {
    const PolicyTable pi = random_policy(5, 3, rng);
    const ValueBundle v = policy_evaluation(p, 0, pi);
    for (int s = 0; s < 5; ++s) {
      CHECK(std::abs(pi.probs.row(s).dot(v.advantage.row(s))) <= 1e-10);
    }
  }
}

TEST_CASE("Q and V are Lipschitz in the policy") {
  const MultiTaskProblem p = random_problem(5, 3, 1, 0.9, 41);
  const double r_max = p.reward_max();
  const double sa = 15.0;
  const double full_const = r_max * sa / ((1.0 - p.gamma) * (1.0 - p.gamma));
  const double entry_const = r_max * std::sqrt(sa) / ((1.0 - p.gamma) * (1.0 - p.gamma));
  RngStream rng(19, 0);
  for (int rep = 0; rep < 100; ++rep) {
    const PolicyTable pi1 = random_policy(5, 3, rng);
    const PolicyTable pi2 = random_policy(5, 3, rng);
    const double dist = (pi1.probs - pi2.probs).norm();
    const ValueBundle v1 = policy_evaluation(p, 0, pi1);
    const ValueBundle v2 = policy_evaluation(p, 0, pi2);
    CHECK((v1.q - v2.q).norm() <= full_const * dist + 1e-12);
    CHECK((v1.q - v2.q).cwiseAbs().maxCoeff() <= entry_const * dist + 1e-12);
    CHECK((v1.v - v2.v).cwiseAbs().maxCoeff() <= entry_const * dist + 1e-12);
  }
}

TEST_CASE("performance-difference identity holds on tiny MDPs") {
  const MultiTaskProblem p = random_problem(4, 3, 1, 0.85, 51);
  RngStream rng(23, 0);
  for (int rep = 0; rep < 20; ++rep) {
    const PolicyTable pi1 = random_policy(4, 3, rng);
    const PolicyTable pi2 = random_policy(4, 3, rng);
    const ValueBundle v1 = policy_evaluation(p, 0, pi1);
    const ValueBundle v2 = policy_evaluation(p, 0, pi2);
    const Eigen::VectorXd d = discounted_visitation(p, pi1, p.rho);
    CHECK(d.sum() == doctest::Approx(1.0).epsilon(1e-10));
    double rhs = 0.0;
    for (int s = 0; s < 4; ++s) {
      rhs += d(s) * pi1.probs.row(s).dot(v2.advantage.row(s));
    }
    rhs /= 1.0 - p.gamma;
    CHECK(v1.v_rho - v2.v_rho == doctest::Approx(rhs).epsilon(1e-8));
  }
}

TEST_CASE("tiny oracle solves the unconstrained bandit exactly") {
  // One state, two actions, rewards (0.2, 0.7): the optimum sits on the
  // lattice vertex that always plays action 1.
  MultiTaskProblem p;
  p.n_states = 1;
  p.n_actions = 2;
  p.n_tasks = 1;
  p.gamma = 0.5;
  p.transition = Eigen::MatrixXd::Ones(2, 1);
  Eigen::MatrixXd r(1, 2);
  r << 0.2, 0.7;
  p.rewards = {r};
  p.rho = Eigen::VectorXd::Ones(1);
  p.lower_bounds = Eigen::VectorXd::Constant(1, kNegInf);
  p.upper_bounds = Eigen::VectorXd::Constant(1, kPosInf);

  const TinyCmdpSolution sol = tiny_cmdp_oracle(p);
  REQUIRE(sol.feasible);
  CHECK(sol.exhaustive);
  CHECK(sol.value == doctest::Approx(0.7 / 0.5).epsilon(1e-9));
  CHECK(sol.policy.probs(0, 1) == doctest::Approx(1.0));
}

TEST_CASE("tiny oracle lands on the constraint boundary when forced to mix") {
  // Task 0 prefers action 1; task 1 only pays for action 0 and its lower
  // bound forces pi(a0) >= 0.5 exactly.
  MultiTaskProblem p;
  p.n_states = 1;
  p.n_actions = 2;
  p.n_tasks = 2;
  p.gamma = 0.5;
  p.transition = Eigen::MatrixXd::Ones(2, 1);
  Eigen::MatrixXd r0(1, 2), r1(1, 2);
  r0 << 0.2, 0.7;
  r1 << 0.3, 0.0;
  p.rewards = {r0, r1};
  p.rho = Eigen::VectorXd::Ones(1);
  p.lower_bounds.resize(2);
  p.lower_bounds << kNegInf, 0.3;
  p.upper_bounds = Eigen::VectorXd::Constant(2, kPosInf);
  p.slater_margin = 0.1;

  const TinyCmdpSolution sol = tiny_cmdp_oracle(p);
  REQUIRE(sol.feasible);
  // V0 = ((0.2 p + 0.7 (1-p)) + 0.3 p) * 2 / 2 = (1.4 - 0.4 p) / 2, optimal at
  // the boundary p = 0.5 where V_task1 = 0.3.
  CHECK(sol.policy.probs(0, 0) == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(sol.value == doctest::Approx(0.6).epsilon(1e-6));
  const double boundary = policy_evaluation(p, 1, sol.policy).v_rho;
  CHECK(boundary == doctest::Approx(0.3).epsilon(1e-6));

  SUBCASE("oracle dominates every feasible lattice policy") {
    for (double q : {0.5, 0.525, 0.6, 0.75, 1.0}) {
      PolicyTable cand;
      cand.probs.resize(1, 2);
      cand.probs << q, 1.0 - q;
      if (constraint_violation(p, cand) > 0.0) continue;
      CHECK(average_value(p, cand) <= sol.value + 1e-9);
    }
  }

  SUBCASE("unreachable bound reports infeasibility") {
    p.lower_bounds(1) = 10.0;
    const TinyCmdpSolution bad = tiny_cmdp_oracle(p);
    CHECK(!bad.feasible);
  }
}

TEST_CASE("value bundle CSV export carries the header row") {
  const MultiTaskProblem p = single_state_problem(1.0, 0.9);
  const ValueBundle v = policy_evaluation(p, 0, PolicyTable::uniform(1, 1));
  std::ostringstream os;
  write_value_bundle_csv(v, os);
  CHECK(os.str().rfind("s,a,Q,A\n", 0) == 0);
  CHECK(os.str().find("0,0,10") != std::string::npos);
}
