#include "cmtrl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "cmtrl/rng.hpp"

namespace cmtrl {

namespace {

// P^pi (SxS) and per-task mean rewards r^pi under a policy.
Eigen::MatrixXd induced_chain(const MultiTaskProblem& p, const PolicyTable& pi) {
  Eigen::MatrixXd chain = Eigen::MatrixXd::Zero(p.n_states, p.n_states);
  for (int s = 0; s < p.n_states; ++s) {
    for (int a = 0; a < p.n_actions; ++a) {
      chain.row(s) += pi.probs(s, a) * p.transition.row(p.sa_index(s, a));
    }
  }
  return chain;
}

Eigen::VectorXd mean_reward(const MultiTaskProblem& p, int task, const PolicyTable& pi) {
  return (pi.probs.array() * p.rewards[task].array()).rowwise().sum().matrix();
}

void check_policy_shape(const MultiTaskProblem& p, const PolicyTable& pi) {
  if (pi.probs.rows() != p.n_states || pi.probs.cols() != p.n_actions) {
    throw std::invalid_argument("policy table has wrong shape");
  }
}

}  // namespace

PolicyTable PolicyTable::uniform(int n_states, int n_actions) {
  return {Eigen::MatrixXd::Constant(n_states, n_actions, 1.0 / n_actions)};
}

std::vector<std::string> validate(const PolicyTable& policy) {
  std::vector<std::string> bad;
  for (int s = 0; s < policy.probs.rows(); ++s) {
    if (policy.probs.row(s).minCoeff() < 0.0) {
      bad.push_back("policy row s=" + std::to_string(s) + " has a negative entry");
    }
    const double sum = policy.probs.row(s).sum();
    if (std::abs(sum - 1.0) > 1e-12) {
      std::ostringstream m;
      m << "policy row s=" << s << " sums to " << sum;
      bad.push_back(m.str());
    }
  }
  return bad;
}

ValueBundle policy_evaluation(const MultiTaskProblem& p, int task, const PolicyTable& pi) {
  check_policy_shape(p, pi);
  if (task < 0 || task >= p.n_tasks) throw std::invalid_argument("task index out of range");

  const Eigen::MatrixXd chain = induced_chain(p, pi);
  const Eigen::VectorXd r_pi = mean_reward(p, task, pi);
  const Eigen::MatrixXd system =
      Eigen::MatrixXd::Identity(p.n_states, p.n_states) - p.gamma * chain;

  ValueBundle out;
  out.v = system.partialPivLu().solve(r_pi);

  const double residual = (system * out.v - r_pi).cwiseAbs().maxCoeff();
  const double tol = 1e-9 * std::max(1.0, p.reward_max());
  if (!(residual <= tol)) {
    std::ostringstream m;
    m << "policy evaluation residual " << residual << " exceeds " << tol;
    throw std::runtime_error(m.str());
  }

  out.q.resize(p.n_states, p.n_actions);
  for (int s = 0; s < p.n_states; ++s) {
    for (int a = 0; a < p.n_actions; ++a) {
      out.q(s, a) =
          p.rewards[task](s, a) + p.gamma * p.transition.row(p.sa_index(s, a)).dot(out.v);
    }
  }
  out.advantage = out.q.colwise() - out.v;
  out.v_rho = p.rho.dot(out.v);
  return out;
}

Eigen::VectorXd task_values(const MultiTaskProblem& p, const PolicyTable& pi) {
  check_policy_shape(p, pi);
  // One chain factorization serves all tasks.
  const Eigen::MatrixXd system = Eigen::MatrixXd::Identity(p.n_states, p.n_states) -
                                 p.gamma * induced_chain(p, pi);
  const auto lu = system.partialPivLu();
  Eigen::VectorXd values(p.n_tasks);
  for (int i = 0; i < p.n_tasks; ++i) {
    values(i) = p.rho.dot(lu.solve(mean_reward(p, i, pi)));
  }
  return values;
}

double average_value(const MultiTaskProblem& p, const PolicyTable& pi) {
  return task_values(p, pi).mean();
}

double lagrangian_value(const MultiTaskProblem& p, const PolicyTable& pi,
                        const Eigen::VectorXd& lambda, const Eigen::VectorXd& nu) {
  if (lambda.size() != p.n_tasks || nu.size() != p.n_tasks) {
    throw std::invalid_argument("dual vectors must have one entry per task");
  }
  if (lambda.minCoeff() < 0.0 || nu.minCoeff() < 0.0) {
    throw std::invalid_argument("dual variables must be nonnegative");
  }
  const Eigen::VectorXd values = task_values(p, pi);
  double total = values.mean();
  for (int i = 0; i < p.n_tasks; ++i) {
    if (std::isfinite(p.lower_bounds(i))) total += lambda(i) * (values(i) - p.lower_bounds(i));
    if (std::isfinite(p.upper_bounds(i))) total -= nu(i) * (values(i) - p.upper_bounds(i));
  }
  return total;
}

double constraint_violation(const MultiTaskProblem& p, const Eigen::VectorXd& values) {
  if (values.size() != p.n_tasks) throw std::invalid_argument("values must have one entry per task");
  double total = 0.0;
  for (int i = 0; i < p.n_tasks; ++i) {
    if (std::isfinite(p.lower_bounds(i))) total += std::max(0.0, p.lower_bounds(i) - values(i));
    if (std::isfinite(p.upper_bounds(i))) total += std::max(0.0, values(i) - p.upper_bounds(i));
  }
  return total;
}

double constraint_violation(const MultiTaskProblem& p, const PolicyTable& pi) {
  return constraint_violation(p, task_values(p, pi));
}

RolloutResult greedy_rollout(const MultiTaskProblem& p, const PolicyTable& pi,
                             int start_state, int max_steps) {
  check_policy_shape(p, pi);
  if (start_state < 0 || start_state >= p.n_states) {
    throw std::invalid_argument("start state out of range");
  }
  for (int r = 0; r < p.transition.rows(); ++r) {
    if (p.transition.row(r).maxCoeff() < 1.0 - 1e-12) {
      throw std::invalid_argument("greedy rollout requires deterministic dynamics");
    }
  }
  auto successor = [&](int s, int a) {
    int dest = 0;
    p.transition.row(p.sa_index(s, a)).maxCoeff(&dest);
    return dest;
  };
  auto absorbing = [&](int s) {
    for (int a = 0; a < p.n_actions; ++a) {
      if (successor(s, a) != s) return false;
    }
    return true;
  };

  RolloutResult out;
  std::vector<char> seen(p.n_states, 0);
  int s = start_state;
  out.path.push_back(s);
  seen[s] = 1;
  for (int step = 0; step < max_steps; ++step) {
    if (absorbing(s)) {
      out.reached_absorbing = true;
      return out;
    }
    int best_a = 0;
    pi.probs.row(s).maxCoeff(&best_a);  // Eigen picks the lowest index on ties
    const int next = successor(s, best_a);
    out.path.push_back(next);
    if (seen[next]) {
      out.cycle = !absorbing(next);
      out.reached_absorbing = absorbing(next);
      return out;
    }
    seen[next] = 1;
    s = next;
  }
  out.reached_absorbing = absorbing(s);
  return out;
}

Eigen::VectorXd discounted_visitation(const MultiTaskProblem& p, const PolicyTable& pi,
                                      const Eigen::VectorXd& initial) {
  check_policy_shape(p, pi);
  if (initial.size() != p.n_states) throw std::invalid_argument("initial distribution has wrong length");
  const Eigen::MatrixXd chain = induced_chain(p, pi);
  const Eigen::MatrixXd system = Eigen::MatrixXd::Identity(p.n_states, p.n_states) -
                                 p.gamma * chain.transpose();
  return system.partialPivLu().solve(((1.0 - p.gamma) * initial).eval());
}

namespace {

// Lattice of probability vectors over `arity` actions with entries that are
// multiples of 1/resolution.
std::vector<Eigen::VectorXd> simplex_lattice(int arity, int resolution) {
  std::vector<Eigen::VectorXd> points;
  Eigen::VectorXi counts = Eigen::VectorXi::Zero(arity);
  // Recursive composition enumeration, iterative via explicit stack.
  std::vector<std::pair<int, int>> stack;  // (position, remaining)
  std::function<void(int, int)> rec = [&](int pos, int remaining) {
    if (pos == arity - 1) {
      counts(pos) = remaining;
      Eigen::VectorXd v(arity);
      for (int i = 0; i < arity; ++i) v(i) = static_cast<double>(counts(i)) / resolution;
      points.push_back(std::move(v));
      return;
    }
    for (int c = 0; c <= remaining; ++c) {
      counts(pos) = c;
      rec(pos + 1, remaining - c);
    }
  };
  rec(0, resolution);
  (void)stack;
  return points;
}

struct OracleEval {
  Eigen::VectorXd values;
  double violation = 0.0;
  bool feasible = false;
  double v0 = 0.0;
};

OracleEval evaluate_candidate(const MultiTaskProblem& p, const PolicyTable& pi, double tol) {
  OracleEval e;
  e.values = task_values(p, pi);
  e.violation = 0.0;
  e.feasible = true;
  for (int i = 0; i < p.n_tasks; ++i) {
    if (std::isfinite(p.lower_bounds(i))) {
      const double gap = p.lower_bounds(i) - e.values(i);
      if (gap > tol) e.feasible = false;
      e.violation += std::max(0.0, gap);
    }
    if (std::isfinite(p.upper_bounds(i))) {
      const double gap = e.values(i) - p.upper_bounds(i);
      if (gap > tol) e.feasible = false;
      e.violation += std::max(0.0, gap);
    }
  }
  e.v0 = e.values.mean();
  return e;
}

// Lexicographic preference: feasible beats infeasible; among feasible higher
// v0 wins; among infeasible lower violation wins.
bool better(const OracleEval& a, const OracleEval& b) {
  if (a.feasible != b.feasible) return a.feasible;
  if (a.feasible) return a.v0 > b.v0;
  return a.violation < b.violation;
}

// One pass of per-state improvement over the given lattice; returns true if
// the incumbent changed.
bool coordinate_sweep(const MultiTaskProblem& p, const std::vector<Eigen::VectorXd>& lattice,
                      PolicyTable& pi, OracleEval& incumbent, double tol) {
  bool changed = false;
  for (int s = 0; s < p.n_states; ++s) {
    const Eigen::VectorXd saved = pi.probs.row(s);
    Eigen::VectorXd best_row = saved;
    OracleEval best = incumbent;
    for (const auto& point : lattice) {
      pi.probs.row(s) = point;
      const OracleEval e = evaluate_candidate(p, pi, tol);
      if (better(e, best)) {
        best = e;
        best_row = point;
      }
    }
    pi.probs.row(s) = best_row;
    if ((best_row - saved).cwiseAbs().maxCoeff() > 0.0) changed = true;
    incumbent = best;
  }
  return changed;
}

}  // namespace

TinyCmdpSolution tiny_cmdp_oracle(const MultiTaskProblem& p, const TinyCmdpOptions& opt) {
  const double tol = 1e-9 * std::max(1.0, p.reward_max());
  const auto coarse = simplex_lattice(p.n_actions, opt.coarse_resolution);

  long long total = 1;
  bool exhaustive = true;
  for (int s = 0; s < p.n_states; ++s) {
    total *= static_cast<long long>(coarse.size());
    if (total > opt.max_grid_points) {
      exhaustive = false;
      break;
    }
  }

  TinyCmdpSolution sol;
  sol.exhaustive = exhaustive;
  PolicyTable best_pi;
  OracleEval best;
  bool have_any = false;

  if (exhaustive) {
    std::vector<int> idx(p.n_states, 0);
    PolicyTable pi;
    pi.probs.resize(p.n_states, p.n_actions);
    for (int s = 0; s < p.n_states; ++s) pi.probs.row(s) = coarse[0];
    while (true) {
      const OracleEval e = evaluate_candidate(p, pi, tol);
      if (!have_any || better(e, best)) {
        best = e;
        best_pi = pi;
        have_any = true;
      }
      // odometer over states
      int s = 0;
      for (; s < p.n_states; ++s) {
        if (++idx[s] < static_cast<int>(coarse.size())) {
          pi.probs.row(s) = coarse[idx[s]];
          break;
        }
        idx[s] = 0;
        pi.probs.row(s) = coarse[0];
      }
      if (s == p.n_states) break;
    }
  } else {
    // Multi-start block-coordinate search on the coarse lattice.
    RngStream rng(opt.seed, 0xC0DE);
    for (int start = 0; start < opt.restarts; ++start) {
      PolicyTable pi;
      pi.probs.resize(p.n_states, p.n_actions);
      for (int s = 0; s < p.n_states; ++s) {
        if (start == 0) {
          pi.probs.row(s) = Eigen::VectorXd::Constant(p.n_actions, 1.0 / p.n_actions);
        } else if (start <= p.n_actions) {
          pi.probs.row(s) = Eigen::VectorXd::Unit(p.n_actions, start - 1);
        } else {
          pi.probs.row(s) = coarse[rng.next_u64() % coarse.size()];
        }
      }
      OracleEval incumbent = evaluate_candidate(p, pi, tol);
      for (int sweep = 0; sweep < 64; ++sweep) {
        if (!coordinate_sweep(p, coarse, pi, incumbent, tol)) break;
      }
      if (!have_any || better(incumbent, best)) {
        best = incumbent;
        best_pi = pi;
        have_any = true;
      }
    }
  }

  if (!have_any || !best.feasible) {
    sol.feasible = false;
    sol.policy = have_any ? best_pi : PolicyTable::uniform(p.n_states, p.n_actions);
    sol.value = have_any ? best.v0 : kNegInf;
    return sol;
  }

  // One fine pass around the incumbent.
  const double coarse_value = best.v0;
  const auto fine = simplex_lattice(p.n_actions, opt.fine_resolution);
  OracleEval incumbent = best;
  for (int sweep = 0; sweep < 2; ++sweep) {
    if (!coordinate_sweep(p, fine, best_pi, incumbent, tol)) break;
  }
  if (incumbent.feasible && incumbent.v0 >= coarse_value) {
    best = incumbent;
  }

  sol.feasible = true;
  sol.value = best.v0;
  sol.policy = best_pi;
  sol.refine_gain = std::max(0.0, best.v0 - coarse_value);
  return sol;
}

void write_value_bundle_csv(const ValueBundle& bundle, std::ostream& os) {
  os << "s,a,Q,A\n";
  char buf[96];
  for (int s = 0; s < bundle.q.rows(); ++s) {
    for (int a = 0; a < bundle.q.cols(); ++a) {
      std::snprintf(buf, sizeof(buf), "%d,%d,%.17g,%.17g\n", s, a, bundle.q(s, a),
                    bundle.advantage(s, a));
      os << buf;
    }
  }
}

}  // namespace cmtrl
