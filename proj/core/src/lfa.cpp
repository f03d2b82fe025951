#include "cmtrl/lfa.hpp"

#include <Eigen/QR>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace cmtrl {

namespace {

void cache_singular_values(FeatureSet& f) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(f.phi);
  f.sigma_max = svd.singularValues()(0);
  f.sigma_min = svd.singularValues()(svd.singularValues().size() - 1);
  f.d = static_cast<int>(f.phi.cols());
}

}  // namespace

FeatureSet FeatureSet::identity(int n_states, int n_actions) {
  FeatureSet f;
  f.phi = Eigen::MatrixXd::Identity(n_states * n_actions, n_states * n_actions);
  f.sigma_min = f.sigma_max = 1.0;
  f.d = n_states * n_actions;
  f.n_states = n_states;
  f.n_actions = n_actions;
  return f;
}

FeatureSet FeatureSet::tiles(int n_states, int n_actions, int width) {
  if (width < 1) throw std::invalid_argument("tile width must be >= 1");
  const int n_tiles = (n_states + width - 1) / width;
  FeatureSet f;
  f.phi = Eigen::MatrixXd::Zero(n_states * n_actions, n_tiles * n_actions);
  for (int s = 0; s < n_states; ++s) {
    for (int a = 0; a < n_actions; ++a) {
      f.phi(s * n_actions + a, (s / width) * n_actions + a) = 1.0;
    }
  }
  f.n_states = n_states;
  f.n_actions = n_actions;
  cache_singular_values(f);
  return f;
}

FeatureSet FeatureSet::random_orthonormal(int n_states, int n_actions, int d,
                                          std::uint64_t seed) {
  const int rows = n_states * n_actions;
  if (d < 1 || d > rows) throw std::invalid_argument("feature dimension out of range");
  RngStream rng(seed, 0xFEA7);
  Eigen::MatrixXd g(rows, d);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < d; ++c) {
      // Box-Muller from two uniform draws.
      const double u1 = std::max(rng.next_double(), 1e-300);
      const double u2 = rng.next_double();
      g(r, c) = std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(rows, d);
  const double max_row_norm = q.rowwise().norm().maxCoeff();
  FeatureSet f;
  f.phi = q / max_row_norm;
  f.n_states = n_states;
  f.n_actions = n_actions;
  cache_singular_values(f);
  return f;
}

FeatureSet FeatureSet::from_matrix(Eigen::MatrixXd phi, int n_states, int n_actions) {
  FeatureSet f;
  f.phi = std::move(phi);
  f.n_states = n_states;
  f.n_actions = n_actions;
  if (f.phi.rows() != static_cast<long>(n_states) * n_actions) {
    throw std::invalid_argument("feature matrix must have S*A rows");
  }
  cache_singular_values(f);
  const auto bad = validate(f);
  if (!bad.empty()) throw std::invalid_argument("invalid feature set: " + bad.front());
  return f;
}

std::vector<std::string> validate(const FeatureSet& f) {
  std::vector<std::string> bad;
  for (int r = 0; r < f.phi.rows(); ++r) {
    if (f.phi.row(r).norm() > 1.0 + 1e-9) {
      bad.push_back("feature row " + std::to_string(r) + " has norm > 1");
    }
  }
  if (!(f.sigma_min > 0.0)) bad.push_back("feature matrix is column-rank deficient");
  if (f.d != static_cast<int>(f.phi.cols())) bad.push_back("cached d mismatches phi");
  if (static_cast<long>(f.n_states) * f.n_actions != f.phi.rows()) {
    bad.push_back("cached state/action counts mismatch phi rows");
  }
  return bad;
}

double compute_bomega(const FeatureSet& f, double gamma, double eps_max, double r_max) {
  if (!(f.sigma_min > 0.0)) {
    throw std::invalid_argument("compute_bomega: rank-deficient feature matrix");
  }
  const double value_norm =
      r_max * std::sqrt(static_cast<double>(f.phi.rows()) / (1.0 - gamma));
  return (value_norm + eps_max) / f.sigma_min;
}

PolicyTable loglinear_policy(const Eigen::VectorXd& theta, const FeatureSet& f) {
  if (theta.size() != f.d) throw std::invalid_argument("loglinear_policy: theta size mismatch");
  if (!theta.allFinite()) throw std::invalid_argument("loglinear_policy: non-finite parameter");
  const Eigen::VectorXd logits = f.phi * theta;
  PolicyTable out;
  out.probs.resize(f.n_states, f.n_actions);
  for (int s = 0; s < f.n_states; ++s) {
    const auto seg = logits.segment(static_cast<long>(s) * f.n_actions, f.n_actions);
    const double shift = seg.maxCoeff();
    Eigen::ArrayXd e = (seg.array() - shift).exp();
    out.probs.row(s) = (e / e.sum()).matrix().transpose();
  }
  return out;
}

Eigen::VectorXd stationary_distribution(const Eigen::MatrixXd& transition,
                                        const PolicyTable& policy) {
  const int S = static_cast<int>(policy.probs.rows());
  const int A = static_cast<int>(policy.probs.cols());
  if (transition.rows() != static_cast<long>(S) * A || transition.cols() != S) {
    throw std::invalid_argument("stationary_distribution: transition table shape mismatch");
  }
  Eigen::MatrixXd chain = Eigen::MatrixXd::Zero(S, S);
  for (int s = 0; s < S; ++s) {
    for (int a = 0; a < A; ++a) {
      chain.row(s) += policy.probs(s, a) * transition.row(s * A + a);
    }
  }
  // mu^T (P - I) = 0 with one balance equation replaced by normalization.
  Eigen::MatrixXd system = chain.transpose() - Eigen::MatrixXd::Identity(S, S);
  system.row(S - 1).setOnes();
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(S);
  rhs(S - 1) = 1.0;

  const Eigen::FullPivLU<Eigen::MatrixXd> lu(system);
  if (lu.rank() < S) {
    throw std::runtime_error(
        "stationary distribution is not unique (reducible or periodic chain); "
        "evaluate an eps-mixed policy instead");
  }
  Eigen::VectorXd mu = lu.solve(rhs);
  const double residual = (chain.transpose() * mu - mu).cwiseAbs().maxCoeff();
  if (!(residual <= 1e-10) || mu.minCoeff() < -1e-12) {
    throw std::runtime_error(
        "stationary distribution solve failed (residual " + std::to_string(residual) +
        "); evaluate an eps-mixed policy instead");
  }
  mu = mu.cwiseMax(0.0);
  mu /= mu.sum();
  return mu;
}

ProjectedModel assemble_hbar_bbar(const MultiTaskProblem& p, int task,
                                  const PolicyTable& policy, const FeatureSet& f) {
  if (task < 0 || task >= p.n_tasks) throw std::invalid_argument("task index out of range");
  const int S = p.n_states;
  const int A = p.n_actions;
  if (f.phi.rows() != static_cast<long>(S) * A) {
    throw std::invalid_argument("feature rows must match S*A");
  }
  const Eigen::VectorXd mu = stationary_distribution(p.transition, policy);

  // phi_bar(s') = sum_a' pi(a'|s') phi(s',a'); E[phi(s',a') | s,a] is then one
  // transition-row product away.
  Eigen::MatrixXd phi_bar = Eigen::MatrixXd::Zero(S, f.d);
  for (int s = 0; s < S; ++s) {
    for (int a = 0; a < A; ++a) {
      phi_bar.row(s) += policy.probs(s, a) * f.phi.row(s * A + a);
    }
  }
  const Eigen::MatrixXd expected_next = p.transition * phi_bar;  // (S*A) x d

  Eigen::VectorXd weights(S * A);
  Eigen::VectorXd r_flat(S * A);
  for (int s = 0; s < S; ++s) {
    for (int a = 0; a < A; ++a) {
      weights(s * A + a) = mu(s) * policy.probs(s, a);
      r_flat(s * A + a) = p.rewards[task](s, a);
    }
  }

  ProjectedModel model;
  model.h_bar =
      f.phi.transpose() * (weights.asDiagonal() * (p.gamma * expected_next - f.phi));
  model.b_bar = f.phi.transpose() * (weights.asDiagonal() * r_flat);
  return model;
}

Eigen::VectorXd solve_projected_bellman(const MultiTaskProblem& p, int task,
                                        const PolicyTable& policy, const FeatureSet& f) {
  const ProjectedModel model = assemble_hbar_bbar(p, task, policy, f);
  const Eigen::VectorXd omega = model.h_bar.partialPivLu().solve((-model.b_bar).eval());
  const double residual = (model.h_bar * omega + model.b_bar).norm();
  if (!(residual <= 1e-9 * std::max(1.0, model.b_bar.norm()))) {
    std::ostringstream m;
    m << "projected Bellman solve failed, residual " << residual;
    throw std::runtime_error(m.str());
  }
  return omega;
}

void projected_td_step(LinearCritic& critic, const FeatureSet& f,
                       const TransitionRecord& rec, double beta, double gamma) {
  if (!(beta > 0.0 && beta <= 1.0)) {
    throw std::invalid_argument("projected_td_step: beta must lie in (0,1]");
  }
  const Eigen::RowVectorXd phi_sa = f.row(rec.s, rec.a);
  const Eigen::RowVectorXd phi_next = f.row(rec.s_next, rec.a_next);
  const double td_error =
      rec.reward + (gamma * phi_next - phi_sa).dot(critic.omega);
  critic.omega += beta * td_error * phi_sa.transpose();
  const double norm = critic.omega.norm();
  if (norm > critic.radius) critic.omega *= critic.radius / norm;
}

namespace {

struct LfaSchedule {
  double alpha = 0.0, beta = 0.0, eta = 0.0, eps = 0.0, delta = 0.0;
};

LfaSchedule lfa_schedule(const LfaOptions& opt, int n_agents, double sigma2) {
  LfaSchedule s;
  s.delta = 1.0 / std::sqrt(static_cast<double>(opt.iterations));
  const double alpha0 =
      opt.alpha0 ? *opt.alpha0
                 : opt.alpha_scale * std::sqrt(1.0 - sigma2) /
                       std::pow(static_cast<double>(n_agents), 0.25);
  s.alpha = alpha0 * s.delta;
  s.beta = std::min(1.0, opt.beta0 * s.delta * s.delta * s.delta /
                             std::max(std::log(1.0 / s.delta), 1.0));
  if (!(s.beta > 0.0)) throw std::invalid_argument("run_lfa: beta schedule collapsed to 0");
  s.eta = opt.eta0 * s.delta;
  s.eps = std::min(opt.eps0 * s.delta, 1.0);
  return s;
}

}  // namespace

RunResult run_lfa(const MultiTaskProblem& problem, const CommGraph& graph,
                  const FeatureSet& features, const LfaOptions& opt, TraceWriter* sink) {
  if (opt.iterations < 1) throw std::invalid_argument("run_lfa: K must be >= 1");
  if (opt.inner_steps < 1) throw std::invalid_argument("run_lfa: T must be >= 1");
  {
    const auto bad = validate(problem);
    if (!bad.empty()) throw std::invalid_argument("run_lfa: invalid problem: " + bad.front());
  }
  {
    const auto bad = validate(features);
    if (!bad.empty()) throw std::invalid_argument("run_lfa: " + bad.front());
  }
  if (features.n_states != problem.n_states || features.n_actions != problem.n_actions) {
    throw std::invalid_argument("run_lfa: features sized for a different problem");
  }
  const int n = problem.n_tasks;
  if (graph.n != n) throw std::invalid_argument("run_lfa: graph must have one node per task");

  const WeightMatrix w = lazy_metropolis(graph);
  const LfaSchedule sched = lfa_schedule(opt, n, w.sigma2);
  const double b_lambda = problem.dual_bound();
  const double b_omega =
      compute_bomega(features, problem.gamma, opt.eps_max, problem.reward_max());
  // Consensus drift per round is bounded by alpha (B_lambda + 1/N) B_omega.
  const double envelope = (b_lambda + 1.0 / n) * std::sqrt(static_cast<double>(n)) *
                          b_omega * sched.alpha / (1.0 - w.sigma2);

  RunResult result;
  auto& trace = result.trace;
  trace.header.algorithm = "lfa";
  trace.header.mode = "decentral";
  trace.header.config_hash = opt.config_hash;
  trace.header.seed = opt.seed;
  trace.header.n_agents = n;
  trace.header.n_tasks = n;
  trace.header.n_states = problem.n_states;
  trace.header.n_actions = problem.n_actions;
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
  trace.header.inner_steps = opt.inner_steps;
  trace.header.eval_every = std::max(1, opt.eval_every);
  trace.header.critic_bound = b_omega;
  trace.header.consensus_envelope = envelope;

  Eigen::MatrixXd thetas = Eigen::MatrixXd::Zero(n, features.d);
  DualState duals = DualState::zeros(n, b_lambda);
  std::vector<LinearCritic> critics(n);
  for (auto& c : critics) {
    c.omega = Eigen::VectorXd::Zero(features.d);
    c.radius = b_omega;
  }
  std::vector<PolicyTable> policies(n, PolicyTable::uniform(problem.n_states,
                                                            problem.n_actions));
  std::vector<PolicyTable> behaviors = policies;
  std::vector<SamplerCursor> cursors(n);
  for (int i = 0; i < n; ++i) {
    cursors[i].stream = RngStream(opt.seed, static_cast<std::uint64_t>(i));
    trace.header.stream_ids.push_back(cursors[i].stream.id());
    cursors[i].s = cursors[i].stream.sample(problem.rho.data(), problem.n_states);
    cursors[i].a = cursors[i].stream.sample(behaviors[i].probs.row(cursors[i].s).data(),
                                            problem.n_actions,
                                            static_cast<int>(behaviors[i].probs.colStride()));
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
    if (n == 1) return 0.0;
    const Eigen::RowVectorXd mean = th.colwise().mean();
    double worst = 0.0;
    for (int i = 0; i < th.rows(); ++i) worst = std::max(worst, (th.row(i) - mean).norm());
    return worst;
  };

  auto record = [&](int k, double cons_err) {
    for (int j = 0; j < n; ++j) {
      TraceRow row;
      row.k = k;
      row.agent = j;
      const Eigen::VectorXd values = task_values(problem, policies[j]);
      row.task_values.assign(values.data(), values.data() + values.size());
      row.v0 = values.mean();
      row.violation = constraint_violation(problem, values);
      row.consensus_err = cons_err;
      const Eigen::VectorXd q_hat = features.phi * critics[j].omega;
      const ValueBundle exact = policy_evaluation(problem, j, behaviors[j]);
      row.critic_err = (q_hat - flatten_sa(exact.q)).cwiseAbs().maxCoeff();
      // Approximation-error ceiling bookkeeping for the visited behavior.
      try {
        const Eigen::VectorXd omega_star =
            solve_projected_bellman(problem, j, behaviors[j], features);
        const double err = (features.phi * omega_star - flatten_sa(exact.q)).norm();
        if (err > opt.eps_max + 1e-8 * std::max(1.0, trace.header.r_max)) {
          ++footer.approx_warnings;
        }
      } catch (const std::runtime_error&) {
        ++footer.approx_warnings;  // target undefined for this behavior
      }
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

    // Inner projected-TD loop on each agent's continuing trajectory.
    for (int i = 0; i < n; ++i) {
      for (int t = 0; t < opt.inner_steps; ++t) {
        const TransitionRecord rec = markov_step(problem, i, cursors[i], behaviors[i]);
        projected_td_step(critics[i], features, rec, sched.beta, problem.gamma);
      }
    }
    footer.samples += static_cast<long long>(n) * opt.inner_steps;

    // Actor consensus step driven by the inner-loop critics.
    Eigen::MatrixXd next = consensus_step(thetas, w);
    for (int i = 0; i < n; ++i) {
      const double coef = 1.0 / n + duals.lambda(i) - duals.nu(i);
      next.row(i) += sched.alpha * coef * critics[i].omega.transpose();
    }
    thetas = next;

    // Behavior refresh, then dual step with the iteration-k target policies.
    std::vector<PolicyTable> next_policies(n);
    for (int j = 0; j < n; ++j) {
      next_policies[j] = loglinear_policy(thetas.row(j), features);
      behaviors[j] = mix_behavior(next_policies[j], sched.eps);
    }
    Eigen::VectorXd estimates(n);
    for (int i = 0; i < n; ++i) {
      double v = 0.0;
      const Eigen::VectorXd q_hat = features.phi * critics[i].omega;
      for (int s = 0; s < problem.n_states; ++s) {
        if (problem.rho(s) == 0.0) continue;
        for (int a = 0; a < problem.n_actions; ++a) {
          v += problem.rho(s) * policies[i].probs(s, a) * q_hat(s * problem.n_actions + a);
        }
      }
      estimates(i) = v;
    }
    duals = dual_step(duals, estimates, problem.lower_bounds, problem.upper_bounds,
                      sched.eta);
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

double measure_eps_max(const MultiTaskProblem& problem, const FeatureSet& features,
                       int n_policies, double eps, std::uint64_t seed) {
  RngStream rng(seed, 0xEB5);
  double worst = 0.0;
  for (int p = 0; p < n_policies; ++p) {
    PolicyTable pi;
    pi.probs.resize(problem.n_states, problem.n_actions);
    for (int s = 0; s < problem.n_states; ++s) {
      Eigen::VectorXd row(problem.n_actions);
      for (int a = 0; a < problem.n_actions; ++a) {
        row(a) = -std::log(std::max(rng.next_double(), 1e-300));  // Dirichlet(1,..,1)
      }
      pi.probs.row(s) = (row / row.sum()).transpose();
    }
    pi = mix_behavior(pi, eps);
    for (int i = 0; i < problem.n_tasks; ++i) {
      const Eigen::VectorXd omega = solve_projected_bellman(problem, i, pi, features);
      const ValueBundle exact = policy_evaluation(problem, i, pi);
      worst = std::max(worst, (features.phi * omega - flatten_sa(exact.q)).norm());
    }
  }
  return worst;
}

FeatureSet make_features(const std::string& spec, const MultiTaskProblem& problem,
                         std::uint64_t seed) {
  if (spec == "identity") return FeatureSet::identity(problem.n_states, problem.n_actions);
  if (spec.rfind("tiles:", 0) == 0) {
    const int width = std::stoi(spec.substr(6));
    return FeatureSet::tiles(problem.n_states, problem.n_actions, width);
  }
  if (spec.rfind("random:", 0) == 0) {
    const int d = std::stoi(spec.substr(7));
    return FeatureSet::random_orthonormal(problem.n_states, problem.n_actions, d, seed);
  }
  throw std::invalid_argument("unknown feature spec: " + spec +
                              " (expected identity, tiles:<w> or random:<d>)");
}

}  // namespace cmtrl
