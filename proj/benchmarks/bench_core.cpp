#include <benchmark/benchmark.h>

#include "cmtrl/lfa.hpp"
#include "cmtrl/pdnac.hpp"
#include "cmtrl/pdnpg.hpp"

namespace {

cmtrl::MultiTaskProblem maze_problem() {
  return cmtrl::build_gridworld(cmtrl::three_bridges_maze(true));
}

cmtrl::MultiTaskProblem random_problem(int S, int A, int N, std::uint64_t seed) {
  cmtrl::RngStream rng(seed, 7);
  cmtrl::MultiTaskProblem p;
  p.n_states = S;
  p.n_actions = A;
  p.n_tasks = N;
  p.gamma = 0.9;
  p.transition.resize(S * A, S);
  for (int r = 0; r < S * A; ++r) {
    Eigen::VectorXd row(S);
    for (int s = 0; s < S; ++s) row(s) = rng.next_double() + 1e-3;
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
  p.lower_bounds = Eigen::VectorXd::Constant(N, cmtrl::kNegInf);
  p.upper_bounds = Eigen::VectorXd::Constant(N, cmtrl::kPosInf);
  p.slater_margin = 0.5;
  return p;
}

void BM_PolicyEvaluationMaze(benchmark::State& state) {
  const auto problem = maze_problem();
  const auto policy = cmtrl::PolicyTable::uniform(problem.n_states, problem.n_actions);
  for (auto _ : state) {
    benchmark::DoNotOptimize(cmtrl::policy_evaluation(problem, 0, policy));
  }
}
BENCHMARK(BM_PolicyEvaluationMaze);

void BM_ConsensusStep(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const auto w = cmtrl::lazy_metropolis(cmtrl::CommGraph::ring(n));
  const Eigen::MatrixXd theta = Eigen::MatrixXd::Random(n, 400);
  for (auto _ : state) {
    benchmark::DoNotOptimize(cmtrl::consensus_step(theta, w));
  }
}
BENCHMARK(BM_ConsensusStep)->Arg(4)->Arg(16)->Arg(64);

void BM_LazyMetropolisSigma2(benchmark::State& state) {
  const auto graph = cmtrl::CommGraph::ring(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(cmtrl::lazy_metropolis(graph));
  }
}
BENCHMARK(BM_LazyMetropolisSigma2)->Arg(8)->Arg(64)->Arg(128);

void BM_Td0Update(benchmark::State& state) {
  const auto problem = random_problem(10, 4, 1, 3);
  auto critic = cmtrl::CriticTable::zeros(10, 4);
  cmtrl::SamplerCursor cursor;
  cursor.stream = cmtrl::RngStream(1, 0);
  cursor.s = 0;
  cursor.a = 0;
  const auto behavior = cmtrl::PolicyTable::uniform(10, 4);
  for (auto _ : state) {
    const auto rec = cmtrl::markov_step(problem, 0, cursor, behavior);
    cmtrl::td0_update(critic, rec, 0.01, problem.gamma);
  }
}
BENCHMARK(BM_Td0Update);

void BM_ProjectedBellmanSolve(benchmark::State& state) {
  const auto problem = random_problem(12, 3, 1, 11);
  const auto features = cmtrl::FeatureSet::random_orthonormal(12, 3, 8, 5);
  auto policy = cmtrl::mix_behavior(cmtrl::PolicyTable::uniform(12, 3), 0.3);
  for (auto _ : state) {
    benchmark::DoNotOptimize(cmtrl::solve_projected_bellman(problem, 0, policy, features));
  }
}
BENCHMARK(BM_ProjectedBellmanSolve);

void BM_PdnpgIteration(benchmark::State& state) {
  const auto problem = random_problem(6, 3, 3, 17);
  const auto graph = cmtrl::CommGraph::ring(3);
  for (auto _ : state) {
    cmtrl::PdnpgOptions opt;
    opt.iterations = 10;
    opt.eval_every = 1000;
    benchmark::DoNotOptimize(cmtrl::run_pdnpg(problem, graph, opt));
  }
}
BENCHMARK(BM_PdnpgIteration);

}  // namespace

BENCHMARK_MAIN();
