#include "cmtrl/pdnac.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <stdexcept>

namespace cmtrl {

CriticTable CriticTable::zeros(int n_states, int n_actions) {
  return {Eigen::MatrixXd::Zero(n_states, n_actions)};
}

PolicyTable mix_behavior(const PolicyTable& policy, double eps) {
  if (!(eps >= 0.0 && eps <= 1.0)) {
    throw std::invalid_argument("mix_behavior: eps must lie in [0,1]");
  }
  const int n_actions = static_cast<int>(policy.probs.cols());
  PolicyTable out;
  out.probs = Eigen::MatrixXd::Constant(policy.probs.rows(), n_actions, eps / n_actions) +
              (1.0 - eps) * policy.probs;
  return out;
}

TransitionRecord markov_step(const MultiTaskProblem& problem, int task,
                             SamplerCursor& cursor, const PolicyTable& behavior) {
  TransitionRecord rec;
  rec.s = cursor.s;
  rec.a = cursor.a;
  rec.reward = problem.rewards[task](cursor.s, cursor.a);
  const int row = problem.sa_index(cursor.s, cursor.a);
  rec.s_next = cursor.stream.sample(problem.transition.row(row).data(), problem.n_states,
                                    static_cast<int>(problem.transition.colStride()));
  rec.a_next = cursor.stream.sample(behavior.probs.row(rec.s_next).data(), problem.n_actions,
                                    static_cast<int>(behavior.probs.colStride()));
  cursor.s = rec.s_next;
  cursor.a = rec.a_next;
  return rec;
}

void td0_update(CriticTable& critic, const TransitionRecord& rec, double beta,
                double gamma) {
  if (!(beta > 0.0 && beta <= 1.0)) {
    throw std::invalid_argument("td0_update: beta must lie in (0,1]");
  }
  const double target = rec.reward + gamma * critic.q_hat(rec.s_next, rec.a_next);
  critic.q_hat(rec.s, rec.a) = (1.0 - beta) * critic.q_hat(rec.s, rec.a) + beta * target;
}

double critic_value_estimate(const Eigen::VectorXd& rho, const PolicyTable& policy,
                             const CriticTable& critic) {
  double v = 0.0;
  for (int s = 0; s < rho.size(); ++s) {
    if (rho(s) == 0.0) continue;
    v += rho(s) * policy.probs.row(s).dot(critic.q_hat.row(s));
  }
  return v;
}

DualState ac_dual_step(const DualState& dual, const MultiTaskProblem& problem,
                       const std::vector<PolicyTable>& target_policies,
                       const std::vector<CriticTable>& critics, double eta) {
  if (static_cast<int>(target_policies.size()) != problem.n_tasks ||
      static_cast<int>(critics.size()) != problem.n_tasks) {
    throw std::invalid_argument("ac_dual_step: one policy and critic per task required");
  }
  Eigen::VectorXd estimates(problem.n_tasks);
  for (int i = 0; i < problem.n_tasks; ++i) {
    estimates(i) = critic_value_estimate(problem.rho, target_policies[i], critics[i]);
  }
  return dual_step(dual, estimates, problem.lower_bounds, problem.upper_bounds, eta);
}

namespace {

struct PdnacSchedule {
  double alpha = 0.0, beta = 0.0, eta = 0.0, eps = 0.0;
};

PdnacSchedule pdnac_schedule(const PdnacOptions& opt, int n_agents, double sigma2) {
  PdnacSchedule s;
  const double k = static_cast<double>(opt.iterations);
  const double alpha0 =
      opt.alpha0 ? *opt.alpha0
                 : opt.alpha_scale * std::sqrt(1.0 - sigma2) /
                       std::pow(static_cast<double>(n_agents), 0.25);
  s.alpha = alpha0 / std::pow(k, 5.0 / 6.0);
  s.beta = opt.beta0 / std::sqrt(k);
  s.eta = opt.eta0 / std::pow(k, 5.0 / 6.0);
  s.eps = std::min(opt.eps0 / std::pow(k, 1.0 / 6.0), 1.0);
  if (!(s.beta > 0.0 && s.beta <= 1.0)) {
    throw std::invalid_argument("run_pdnac: beta0/sqrt(K) must land in (0,1]");
  }
  return s;
}

}  // namespace

RunResult run_pdnac(const MultiTaskProblem& problem, const CommGraph& graph,
                    const PdnacOptions& opt, TraceWriter* sink) {
  if (opt.iterations < 1) throw std::invalid_argument("run_pdnac: K must be >= 1");
  {
    const auto bad = validate(problem);
    if (!bad.empty()) throw std::invalid_argument("run_pdnac: invalid problem: " + bad.front());
  }
  const int n = problem.n_tasks;
  const int S = problem.n_states;
  const int A = problem.n_actions;
  const int dim = S * A;
  const bool central = opt.mode == Mode::kCentral;

  WeightMatrix w;
  if (central) {
    w.w = Eigen::MatrixXd::Identity(1, 1);
    w.sigma2 = 0.0;
  } else {
    if (graph.n != n) {
      throw std::invalid_argument("run_pdnac: graph must have one node per task");
    }
    w = lazy_metropolis(graph);
  }

  const PdnacSchedule sched = pdnac_schedule(opt, n, w.sigma2);
  const double mu_lower = opt.mu_lower ? *opt.mu_lower : 1.0 / (4.0 * S);
  const bool premise_ok =
      (1.0 - problem.gamma) * mu_lower * opt.eps0 * opt.beta0 / A <= 1.0 + 1e-12;
  if (!premise_ok) {
    std::cerr << "warning: step-size premise (1-gamma) mu eps0 beta0 / |A| <= 1 "
                 "does not hold for this configuration\n";
  }

  const double b_lambda = problem.dual_bound();
  // TD iterates stay within the value range plus one reward unit.
  const double critic_bound = problem.value_bound() + 1.0;
  const double envelope = (b_lambda + 1.0 / n) *
                          std::sqrt(static_cast<double>(n) * dim) * critic_bound *
                          sched.alpha / (1.0 - w.sigma2);

  RunResult result;
  auto& trace = result.trace;
  trace.header.algorithm = "pdnac";
  trace.header.mode = central ? "central" : "decentral";
  trace.header.config_hash = opt.config_hash;
  trace.header.seed = opt.seed;
  trace.header.n_agents = central ? 1 : n;
  trace.header.n_tasks = n;
  trace.header.n_states = S;
  trace.header.n_actions = A;
  trace.header.gamma = problem.gamma;
  trace.header.r_max = problem.reward_max();
  trace.header.xi = problem.slater_margin;
  trace.header.b_lambda = b_lambda;
  trace.header.sigma2 = w.sigma2;
  trace.header.alpha = sched.alpha;
  trace.header.beta = sched.beta;
  trace.header.eta = sched.eta;
  trace.header.eps = sched.eps;
  trace.header.iterations = opt.iterations;
  trace.header.eval_every = std::max(1, opt.eval_every);
  trace.header.critic_bound = critic_bound;
  trace.header.consensus_envelope = envelope;
  trace.header.premise_ok = premise_ok;

  const int rows = central ? 1 : n;
  Eigen::MatrixXd thetas = Eigen::MatrixXd::Zero(rows, dim);
  DualState duals = DualState::zeros(n, b_lambda);
  std::vector<CriticTable> critics(n, CriticTable::zeros(S, A));

  // One policy/behavior per parameter row; one cursor per task.
  std::vector<PolicyTable> policies(rows, PolicyTable::uniform(S, A));
  std::vector<PolicyTable> behaviors(rows, PolicyTable::uniform(S, A));
  std::vector<SamplerCursor> cursors(n);
  for (int i = 0; i < n; ++i) {
    cursors[i].stream = RngStream(opt.seed, static_cast<std::uint64_t>(i));
    trace.header.stream_ids.push_back(cursors[i].stream.id());
    cursors[i].s = cursors[i].stream.sample(problem.rho.data(), S);
    const PolicyTable& b = behaviors[central ? 0 : i];
    cursors[i].a = cursors[i].stream.sample(b.probs.row(cursors[i].s).data(), A,
                                            static_cast<int>(b.probs.colStride()));
  }
  if (sink) sink->write_header(trace.header);

  auto& footer = trace.footer;
  auto note_duals = [&](const DualState& d) {
    const double m = std::max(d.lambda.maxCoeff(), d.nu.maxCoeff());
    footer.max_dual = std::max(footer.max_dual, m);
    if (m > b_lambda + 1e-12 || d.lambda.minCoeff() < 0.0 || d.nu.minCoeff() < 0.0) {
      footer.duals_in_bounds = false;
    }
  };
  auto consensus_error = [&](const Eigen::MatrixXd& th) {
    if (central || n == 1) return 0.0;
    const Eigen::RowVectorXd mean = th.colwise().mean();
    double worst = 0.0;
    for (int i = 0; i < th.rows(); ++i) worst = std::max(worst, (th.row(i) - mean).norm());
    return worst;
  };

  auto record = [&](int k, double cons_err) {
    std::vector<Eigen::VectorXd> values_of(rows);
    for (int j = 0; j < rows; ++j) values_of[j] = task_values(problem, policies[j]);
    for (int j = 0; j < n; ++j) {
      TraceRow row;
      row.k = k;
      row.agent = j;
      const Eigen::VectorXd& values = values_of[central ? 0 : j];
      row.task_values.assign(values.data(), values.data() + values.size());
      row.v0 = values.mean();
      row.violation = constraint_violation(problem, values);
      row.consensus_err = cons_err;
      const PolicyTable& b = behaviors[central ? 0 : j];
      row.critic_err =
          (critics[j].q_hat - policy_evaluation(problem, j, b).q).cwiseAbs().maxCoeff();
      row.lambda = duals.lambda(j);
      row.nu = duals.nu(j);
      trace.rows.push_back(row);
      if (sink) sink->write_row(row);
    }
  };

  for (int k = 0; k < opt.iterations; ++k) {
    const double cons_err = consensus_error(thetas);
    footer.max_consensus_error = std::max(footer.max_consensus_error, cons_err);
    if (cons_err > envelope + 1e-12) footer.consensus_within_envelope = false;
    if (k % trace.header.eval_every == 0) record(k, cons_err);

    // 1) observe, 2) critic
    for (int i = 0; i < n; ++i) {
      const TransitionRecord rec =
          markov_step(problem, i, cursors[i], behaviors[central ? 0 : i]);
      td0_update(critics[i], rec, sched.beta, problem.gamma);
    }
    footer.samples += n;

    // 3) actor
    if (central) {
      for (int i = 0; i < n; ++i) {
        const double coef = 1.0 / n + duals.lambda(i) - duals.nu(i);
        thetas.row(0) += sched.alpha * coef * flatten_sa(critics[i].q_hat).transpose();
      }
    } else {
      std::vector<Eigen::MatrixXd> q_tables(n);
      for (int i = 0; i < n; ++i) q_tables[i] = critics[i].q_hat;
      thetas = npg_actor_step(thetas, w, q_tables, duals, sched.alpha);
    }

    // 4) behavior refresh from the new policies
    std::vector<PolicyTable> next_policies(rows);
    for (int j = 0; j < rows; ++j) {
      next_policies[j] = softmax_policy(unflatten_sa(thetas.row(j), S, A));
      behaviors[j] = mix_behavior(next_policies[j], sched.eps);
    }

    // 5) dual, weighting the fresh critics by the iteration-k target policies
    duals = ac_dual_step(duals, problem,
                         central ? std::vector<PolicyTable>(n, policies[0]) : policies,
                         critics, sched.eta);
    note_duals(duals);

    policies = std::move(next_policies);
  }

  const double final_cons = consensus_error(thetas);
  footer.max_consensus_error = std::max(footer.max_consensus_error, final_cons);
  if (final_cons > envelope + 1e-12) footer.consensus_within_envelope = false;
  record(opt.iterations, final_cons);

  if (sink) sink->write_footer(footer);
  result.thetas = thetas;
  result.policies = policies;
  result.duals = duals;
  return result;
}

}  // namespace cmtrl
