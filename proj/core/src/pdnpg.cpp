#include "cmtrl/pdnpg.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cmtrl {

PolicyTable TabularActorState::policy() const { return softmax_policy(theta); }

DualState DualState::zeros(int n_tasks, double b_lambda) {
  return {Eigen::VectorXd::Zero(n_tasks), Eigen::VectorXd::Zero(n_tasks), b_lambda};
}

PolicyTable softmax_policy(const Eigen::MatrixXd& theta) {
  if (!theta.allFinite()) throw std::invalid_argument("softmax_policy: non-finite parameter");
  PolicyTable out;
  out.probs.resize(theta.rows(), theta.cols());
  for (int s = 0; s < theta.rows(); ++s) {
    const double shift = theta.row(s).maxCoeff();
    Eigen::ArrayXd e = (theta.row(s).array() - shift).exp();
    out.probs.row(s) = (e / e.sum()).matrix();
  }
  return out;
}

DualState dual_step(const DualState& dual, const Eigen::VectorXd& values,
                    const Eigen::VectorXd& lower, const Eigen::VectorXd& upper,
                    double eta) {
  if (!(eta > 0.0)) throw std::invalid_argument("dual_step: eta must be positive");
  const int n = static_cast<int>(values.size());
  if (dual.lambda.size() != n || lower.size() != n || upper.size() != n) {
    throw std::invalid_argument("dual_step: size mismatch");
  }
  DualState next = dual;
  auto clamp = [&](double x) { return std::clamp(x, 0.0, dual.b_lambda); };
  for (int i = 0; i < n; ++i) {
    next.lambda(i) =
        std::isfinite(lower(i)) ? clamp(dual.lambda(i) - eta * (values(i) - lower(i))) : 0.0;
    next.nu(i) =
        std::isfinite(upper(i)) ? clamp(dual.nu(i) + eta * (values(i) - upper(i))) : 0.0;
  }
  return next;
}

Eigen::VectorXd flatten_sa(const Eigen::MatrixXd& table) {
  Eigen::VectorXd flat(table.size());
  int k = 0;
  for (int s = 0; s < table.rows(); ++s) {
    for (int a = 0; a < table.cols(); ++a) flat(k++) = table(s, a);
  }
  return flat;
}

Eigen::MatrixXd unflatten_sa(const Eigen::VectorXd& flat, int n_states, int n_actions) {
  if (flat.size() != static_cast<long>(n_states) * n_actions) {
    throw std::invalid_argument("unflatten_sa: size mismatch");
  }
  Eigen::MatrixXd table(n_states, n_actions);
  int k = 0;
  for (int s = 0; s < n_states; ++s) {
    for (int a = 0; a < n_actions; ++a) table(s, a) = flat(k++);
  }
  return table;
}

Eigen::MatrixXd npg_actor_step(const Eigen::MatrixXd& thetas, const WeightMatrix& w,
                               const std::vector<Eigen::MatrixXd>& q_tables,
                               const DualState& duals, double alpha) {
  const int n = static_cast<int>(thetas.rows());
  if (w.w.rows() != n || static_cast<int>(q_tables.size()) != n || duals.lambda.size() != n) {
    throw std::invalid_argument("npg_actor_step: agent count mismatch");
  }
  Eigen::MatrixXd next = consensus_step(thetas, w);
  for (int i = 0; i < n; ++i) {
    const double coef = 1.0 / n + duals.lambda(i) - duals.nu(i);
    next.row(i) += alpha * coef * flatten_sa(q_tables[i]).transpose();
  }
  return next;
}

namespace {

struct Schedule {
  double alpha = 0.0;
  double eta = 0.0;
  double sigma2 = 0.0;
};

Schedule pdnpg_schedule(const PdnpgOptions& opt, int n_agents, double sigma2) {
  Schedule s;
  s.sigma2 = sigma2;
  const double root_k = std::sqrt(static_cast<double>(opt.iterations));
  const double alpha0 =
      opt.alpha0 ? *opt.alpha0
                 : opt.alpha_scale * std::sqrt(1.0 - sigma2) /
                       std::pow(static_cast<double>(n_agents), 0.25);
  s.alpha = alpha0 / root_k;
  s.eta = opt.eta0 / root_k;
  return s;
}

}  // namespace

RunResult run_pdnpg(const MultiTaskProblem& problem, const CommGraph& graph,
                    const PdnpgOptions& opt, TraceWriter* sink) {
  if (opt.iterations < 1) throw std::invalid_argument("run_pdnpg: K must be >= 1");
  {
    const auto bad = validate(problem);
    if (!bad.empty()) throw std::invalid_argument("run_pdnpg: invalid problem: " + bad.front());
  }
  const int n = problem.n_tasks;
  const int dim = problem.n_states * problem.n_actions;
  const bool central = opt.mode == Mode::kCentral;

  WeightMatrix w;
  if (central) {
    w.w = Eigen::MatrixXd::Identity(1, 1);
    w.sigma2 = 0.0;
  } else {
    if (graph.n != n) {
      throw std::invalid_argument("run_pdnpg: graph must have one node per task");
    }
    w = lazy_metropolis(graph);
  }

  const Schedule sched = pdnpg_schedule(opt, n, w.sigma2);
  const double b_lambda = problem.dual_bound();
  const double critic_bound = problem.value_bound();  // sup-norm of an exact Q
  const double envelope = (b_lambda + 1.0 / n) *
                          std::sqrt(static_cast<double>(n) * dim) * critic_bound *
                          sched.alpha / (1.0 - w.sigma2);

  RunResult result;
  auto& trace = result.trace;
  trace.header.algorithm = "pdnpg";
  trace.header.mode = central ? "central" : "decentral";
  trace.header.config_hash = opt.config_hash;
  trace.header.seed = opt.seed;
  trace.header.n_agents = central ? 1 : n;
  trace.header.n_tasks = n;
  trace.header.n_states = problem.n_states;
  trace.header.n_actions = problem.n_actions;
  trace.header.gamma = problem.gamma;
  trace.header.r_max = problem.reward_max();
  trace.header.xi = problem.slater_margin;
  trace.header.b_lambda = b_lambda;
  trace.header.sigma2 = w.sigma2;
  trace.header.alpha = sched.alpha;
  trace.header.eta = sched.eta;
  trace.header.iterations = opt.iterations;
  trace.header.eval_every = std::max(1, opt.eval_every);
  trace.header.critic_bound = critic_bound;
  trace.header.consensus_envelope = envelope;
  if (sink) sink->write_header(trace.header);

  const int rows = central ? 1 : n;
  Eigen::MatrixXd thetas = Eigen::MatrixXd::Zero(rows, dim);
  DualState duals = DualState::zeros(n, b_lambda);

  auto& footer = trace.footer;
  auto note_duals = [&](const DualState& d) {
    const double m = std::max(d.lambda.size() ? d.lambda.maxCoeff() : 0.0,
                              d.nu.size() ? d.nu.maxCoeff() : 0.0);
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

  // One trace row per dual pair: in decentral mode that is one row per agent;
  // the central server emits one row per task, all sharing its single policy.
  auto record = [&](int k, const std::vector<PolicyTable>& policies, const DualState& d,
                    double cons_err) {
    std::vector<Eigen::VectorXd> values_of(policies.size());
    for (std::size_t j = 0; j < policies.size(); ++j) {
      values_of[j] = task_values(problem, policies[j]);
    }
    for (int j = 0; j < n; ++j) {
      TraceRow row;
      row.k = k;
      row.agent = j;
      const Eigen::VectorXd& values = values_of[central ? 0 : j];
      row.task_values.assign(values.data(), values.data() + values.size());
      row.v0 = values.mean();
      row.violation = constraint_violation(problem, values);
      row.consensus_err = cons_err;
      row.critic_err = 0.0;  // exact gradients
      row.lambda = d.lambda(j);
      row.nu = d.nu(j);
      trace.rows.push_back(row);
      if (sink) sink->write_row(row);
    }
  };

  for (int k = 0; k < opt.iterations; ++k) {
    std::vector<PolicyTable> policies;
    policies.reserve(rows);
    for (int j = 0; j < rows; ++j) {
      policies.push_back(softmax_policy(unflatten_sa(thetas.row(j), problem.n_states,
                                                     problem.n_actions)));
    }

    const double cons_err = consensus_error(thetas);
    footer.max_consensus_error = std::max(footer.max_consensus_error, cons_err);
    if (cons_err > envelope + 1e-12) footer.consensus_within_envelope = false;

    if (k % trace.header.eval_every == 0) record(k, policies, duals, cons_err);

    // Exact critics: each agent evaluates its own task (the central server
    // evaluates every task under the single policy).
    std::vector<Eigen::MatrixXd> q_tables(n);
    Eigen::VectorXd own_values(n);
    for (int i = 0; i < n; ++i) {
      const PolicyTable& pi = central ? policies[0] : policies[i];
      const ValueBundle bundle = policy_evaluation(problem, i, pi);
      q_tables[i] = bundle.q;
      own_values(i) = bundle.v_rho;
    }

    if (central) {
      // theta' = theta + alpha sum_i (1/N + lambda_i - nu_i) Q_i, accumulated
      // term by term so the N=1 case reproduces the decentralized arithmetic
      // exactly.
      for (int i = 0; i < n; ++i) {
        const double coef = 1.0 / n + duals.lambda(i) - duals.nu(i);
        thetas.row(0) += sched.alpha * coef * flatten_sa(q_tables[i]).transpose();
      }
    } else {
      thetas = npg_actor_step(thetas, w, q_tables, duals, sched.alpha);
    }
    duals = dual_step(duals, own_values, problem.lower_bounds, problem.upper_bounds,
                      sched.eta);
    note_duals(duals);
  }

  std::vector<PolicyTable> final_policies;
  for (int j = 0; j < rows; ++j) {
    final_policies.push_back(
        softmax_policy(unflatten_sa(thetas.row(j), problem.n_states, problem.n_actions)));
  }
  const double final_cons = consensus_error(thetas);
  footer.max_consensus_error = std::max(footer.max_consensus_error, final_cons);
  if (final_cons > envelope + 1e-12) footer.consensus_within_envelope = false;
  record(opt.iterations, final_policies, duals, final_cons);

  if (sink) sink->write_footer(footer);
  result.thetas = thetas;
  result.policies = std::move(final_policies);
  result.duals = duals;
  return result;
}

}  // namespace cmtrl
