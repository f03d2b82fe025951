#include "cmtrl/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

namespace cmtrl {

namespace {

constexpr double kRowSumTol = 1e-12;

double bound_from_json(const nlohmann::json& j, double inf_value) {
  if (j.is_null()) return inf_value;
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s == "inf" || s == "+inf") return kPosInf;
    if (s == "-inf") return kNegInf;
    throw std::invalid_argument("unrecognized bound string: " + s);
  }
  return j.get<double>();
}

nlohmann::json bound_to_json(double b) {
  if (std::isinf(b)) return nullptr;
  return b;
}

std::vector<double> vec_of(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

}  // namespace

std::string to_string(const Cell& c) {
  return "(" + std::to_string(c.row) + "," + std::to_string(c.col) + ")";
}

double MultiTaskProblem::reward_max() const {
  double m = 0.0;
  for (const auto& r : rewards) m = std::max(m, r.cwiseAbs().maxCoeff());
  return m;
}

double MultiTaskProblem::value_bound() const { return reward_max() / (1.0 - gamma); }

double MultiTaskProblem::dual_bound() const {
  return reward_max() / (slater_margin * (1.0 - gamma));
}

std::vector<std::string> validate(const MultiTaskProblem& p) {
  std::vector<std::string> bad;
  std::ostringstream os;
  auto flag = [&](const std::ostringstream& msg) { bad.push_back(msg.str()); };

  if (p.n_states < 1 || p.n_actions < 1 || p.n_tasks < 1) {
    std::ostringstream m;
    m << "sizes must be positive: S=" << p.n_states << " A=" << p.n_actions
      << " N=" << p.n_tasks;
    flag(m);
    return bad;
  }
  if (!(p.gamma > 0.0 && p.gamma < 1.0)) {
    std::ostringstream m;
    m << "gamma must lie strictly in (0,1), got " << p.gamma;
    flag(m);
  }
  if (!(p.slater_margin > 0.0 && p.slater_margin <= 1.0)) {
    std::ostringstream m;
    m << "xi must lie in (0,1], got " << p.slater_margin;
    flag(m);
  }
  if (p.transition.rows() != p.n_states * p.n_actions ||
      p.transition.cols() != p.n_states) {
    std::ostringstream m;
    m << "transition table must be (S*A)xS";
    flag(m);
    return bad;
  }
  for (int s = 0; s < p.n_states; ++s) {
    for (int a = 0; a < p.n_actions; ++a) {
      const auto row = p.transition.row(p.sa_index(s, a));
      if (row.minCoeff() < 0.0) {
        std::ostringstream m;
        m << "transition row (s=" << s << ",a=" << a << ") has a negative entry";
        flag(m);
      }
      if (std::abs(row.sum() - 1.0) > kRowSumTol) {
        std::ostringstream m;
        m << "transition row (s=" << s << ",a=" << a << ") sums to " << row.sum();
        flag(m);
      }
    }
  }
  if (p.rho.size() != p.n_states) {
    bad.push_back("rho has wrong length");
  } else {
    if (p.rho.minCoeff() < 0.0) bad.push_back("rho has a negative entry");
    if (std::abs(p.rho.sum() - 1.0) > kRowSumTol) {
      std::ostringstream m;
      m << "rho sums to " << p.rho.sum();
      flag(m);
    }
  }
  if (static_cast<int>(p.rewards.size()) != p.n_tasks) {
    bad.push_back("rewards must hold one table per task");
  } else {
    for (int i = 0; i < p.n_tasks; ++i) {
      if (p.rewards[i].rows() != p.n_states || p.rewards[i].cols() != p.n_actions) {
        std::ostringstream m;
        m << "reward table for task " << i << " must be SxA";
        flag(m);
      }
    }
  }
  if (p.lower_bounds.size() != p.n_tasks || p.upper_bounds.size() != p.n_tasks) {
    bad.push_back("bounds must have one entry per task");
  } else {
    for (int i = 0; i < p.n_tasks; ++i) {
      if (!(p.lower_bounds(i) < p.upper_bounds(i))) {
        std::ostringstream m;
        m << "bounds not strictly ordered, task " << i;
        flag(m);
      }
    }
  }
  (void)os;
  return bad;
}

nlohmann::json MultiTaskProblem::to_json() const {
  nlohmann::json j;
  j["n_states"] = n_states;
  j["n_actions"] = n_actions;
  j["n_tasks"] = n_tasks;
  auto& tr = j["transition"] = nlohmann::json::array();
  for (int r = 0; r < transition.rows(); ++r) {
    tr.push_back(std::vector<double>(transition.row(r).begin(), transition.row(r).end()));
  }
  auto& rw = j["rewards"] = nlohmann::json::array();
  for (const auto& table : rewards) {
    nlohmann::json t = nlohmann::json::array();
    for (int s = 0; s < table.rows(); ++s) {
      t.push_back(std::vector<double>(table.row(s).begin(), table.row(s).end()));
    }
    rw.push_back(std::move(t));
  }
  j["gamma"] = gamma;
  j["rho"] = vec_of(rho);
  auto& lo = j["lower"] = nlohmann::json::array();
  auto& up = j["upper"] = nlohmann::json::array();
  for (int i = 0; i < n_tasks; ++i) {
    lo.push_back(bound_to_json(lower_bounds(i)));
    up.push_back(bound_to_json(upper_bounds(i)));
  }
  j["xi"] = slater_margin;
  return j;
}

MultiTaskProblem MultiTaskProblem::from_json(const nlohmann::json& j) {
  MultiTaskProblem p;
  p.n_states = j.at("n_states").get<int>();
  p.n_actions = j.at("n_actions").get<int>();
  p.n_tasks = j.at("n_tasks").get<int>();
  const auto& tr = j.at("transition");
  p.transition.resize(p.n_states * p.n_actions, p.n_states);
  if (static_cast<int>(tr.size()) != p.transition.rows()) {
    throw std::invalid_argument("transition must have S*A rows");
  }
  for (int r = 0; r < p.transition.rows(); ++r) {
    const auto row = tr.at(r).get<std::vector<double>>();
    if (static_cast<int>(row.size()) != p.n_states) {
      throw std::invalid_argument("transition row " + std::to_string(r) + " has wrong length");
    }
    for (int c = 0; c < p.n_states; ++c) p.transition(r, c) = row[c];
  }
  const auto& rw = j.at("rewards");
  if (static_cast<int>(rw.size()) != p.n_tasks) {
    throw std::invalid_argument("rewards must hold one table per task");
  }
  for (const auto& tj : rw) {
    Eigen::MatrixXd table(p.n_states, p.n_actions);
    for (int s = 0; s < p.n_states; ++s) {
      const auto row = tj.at(s).get<std::vector<double>>();
      if (static_cast<int>(row.size()) != p.n_actions) {
        throw std::invalid_argument("reward row has wrong length");
      }
      for (int a = 0; a < p.n_actions; ++a) table(s, a) = row[a];
    }
    p.rewards.push_back(std::move(table));
  }
  p.gamma = j.at("gamma").get<double>();
  const auto rho = j.at("rho").get<std::vector<double>>();
  p.rho = Eigen::Map<const Eigen::VectorXd>(rho.data(), rho.size());
  const auto& lo = j.at("lower");
  const auto& up = j.at("upper");
  p.lower_bounds.resize(p.n_tasks);
  p.upper_bounds.resize(p.n_tasks);
  for (int i = 0; i < p.n_tasks; ++i) {
    p.lower_bounds(i) = bound_from_json(lo.at(i), kNegInf);
    p.upper_bounds(i) = bound_from_json(up.at(i), kPosInf);
  }
  p.slater_margin = j.value("xi", 1.0);
  return p;
}

std::vector<std::string> MazeSpec::validate() const {
  std::vector<std::string> bad;
  if (rows < 1 || cols < 1) {
    bad.push_back("empty grid: " + std::to_string(rows) + "x" + std::to_string(cols));
    return bad;
  }
  const int n = n_tasks();
  if (n < 1) bad.push_back("goal_bonus must name at least one task");
  if (static_cast<int>(move_reward.size()) != n) {
    bad.push_back("move_reward must have one entry per task");
  }
  auto inside = [&](const Cell& c) {
    return c.row >= 0 && c.row < rows && c.col >= 0 && c.col < cols;
  };
  std::set<std::pair<int, int>> wall_set;
  for (const auto& w : walls) {
    if (!inside(w)) bad.push_back("wall outside grid at " + to_string(w));
    wall_set.insert({w.row, w.col});
  }
  auto is_wall = [&](const Cell& c) { return wall_set.count({c.row, c.col}) > 0; };
  if (!inside(start)) bad.push_back("start outside grid at " + to_string(start));
  if (!inside(goal)) bad.push_back("goal outside grid at " + to_string(goal));
  if (inside(start) && is_wall(start)) bad.push_back("start on wall at " + to_string(start));
  if (inside(goal) && is_wall(goal)) bad.push_back("goal on wall at " + to_string(goal));
  for (std::size_t b = 0; b < bridges.size(); ++b) {
    if (static_cast<int>(bridges[b].rewards.size()) != n) {
      bad.push_back("bridge " + std::to_string(b) + " must have one reward per task");
    }
    for (const auto& c : bridges[b].cells) {
      if (!inside(c)) {
        bad.push_back("bridge " + std::to_string(b) + " cell outside grid at " + to_string(c));
      } else if (is_wall(c)) {
        bad.push_back("bridge " + std::to_string(b) + " cell on wall at " + to_string(c));
      }
    }
  }
  if (!(gamma > 0.0 && gamma < 1.0)) bad.push_back("gamma must lie strictly in (0,1)");
  if (!(xi > 0.0 && xi <= 1.0)) bad.push_back("xi must lie in (0,1]");
  if (static_cast<int>(lower.size()) != n || static_cast<int>(upper.size()) != n) {
    bad.push_back("lower/upper must have one entry per task");
  }
  if (!rho.empty() && static_cast<int>(rho.size()) != rows * cols) {
    bad.push_back("rho must have rows*cols entries (or be omitted)");
  }
  return bad;
}

nlohmann::json MazeSpec::to_json() const {
  nlohmann::json j;
  j["grid"] = {rows, cols};
  auto& w = j["walls"] = nlohmann::json::array();
  for (const auto& c : walls) w.push_back({c.row, c.col});
  auto& bs = j["bridges"] = nlohmann::json::array();
  for (const auto& b : bridges) {
    nlohmann::json bj;
    auto& cells = bj["cells"] = nlohmann::json::array();
    for (const auto& c : b.cells) cells.push_back({c.row, c.col});
    bj["rewards"] = b.rewards;
    bs.push_back(std::move(bj));
  }
  j["start"] = {start.row, start.col};
  j["goal"] = {goal.row, goal.col};
  j["goal_bonus"] = goal_bonus;
  j["move_reward"] = move_reward;
  j["gamma"] = gamma;
  if (!rho.empty()) j["rho"] = rho;
  auto& lo = j["lower"] = nlohmann::json::array();
  auto& up = j["upper"] = nlohmann::json::array();
  for (std::size_t i = 0; i < lower.size(); ++i) lo.push_back(bound_to_json(lower[i]));
  for (std::size_t i = 0; i < upper.size(); ++i) up.push_back(bound_to_json(upper[i]));
  j["xi"] = xi;
  return j;
}

MazeSpec MazeSpec::from_json(const nlohmann::json& j) {
  MazeSpec m;
  const auto grid = j.at("grid").get<std::vector<int>>();
  if (grid.size() != 2) throw std::invalid_argument("grid must be [rows, cols]");
  m.rows = grid[0];
  m.cols = grid[1];
  auto cell_of = [](const nlohmann::json& cj) {
    const auto v = cj.get<std::vector<int>>();
    if (v.size() != 2) throw std::invalid_argument("cell must be [row, col]");
    return Cell{v[0], v[1]};
  };
  for (const auto& c : j.value("walls", nlohmann::json::array())) m.walls.push_back(cell_of(c));
  for (const auto& bj : j.value("bridges", nlohmann::json::array())) {
    MazeSpec::Bridge b;
    for (const auto& c : bj.at("cells")) b.cells.push_back(cell_of(c));
    b.rewards = bj.at("rewards").get<std::vector<double>>();
    m.bridges.push_back(std::move(b));
  }
  m.start = cell_of(j.at("start"));
  m.goal = cell_of(j.at("goal"));
  m.goal_bonus = j.at("goal_bonus").get<std::vector<double>>();
  m.move_reward = j.at("move_reward").get<std::vector<double>>();
  m.gamma = j.at("gamma").get<double>();
  if (j.contains("rho")) m.rho = j.at("rho").get<std::vector<double>>();
  const auto& lo = j.at("lower");
  const auto& up = j.at("upper");
  for (const auto& b : lo) m.lower.push_back(bound_from_json(b, kNegInf));
  for (const auto& b : up) m.upper.push_back(bound_from_json(b, kPosInf));
  m.xi = j.value("xi", 1.0);
  return m;
}

MultiTaskProblem build_gridworld(const MazeSpec& spec) {
  const auto bad = spec.validate();
  if (!bad.empty()) {
    std::string msg = "invalid maze spec: " + bad.front();
    for (std::size_t i = 1; i < bad.size(); ++i) msg += "; " + bad[i];
    throw std::invalid_argument(msg);
  }

  const int S = spec.rows * spec.cols;
  const int A = 4;
  const int N = spec.n_tasks();

  std::set<int> wall_states;
  for (const auto& w : spec.walls) wall_states.insert(spec.state_of(w));
  // bridge_of[s] = index of the bridge owning cell s, or -1.
  std::vector<int> bridge_of(S, -1);
  for (std::size_t b = 0; b < spec.bridges.size(); ++b) {
    for (const auto& c : spec.bridges[b].cells) bridge_of[spec.state_of(c)] = static_cast<int>(b);
  }
  const int goal_state = spec.state_of(spec.goal);

  auto resolve = [&](int s, int a) {
    int r = s / spec.cols, c = s % spec.cols;
    switch (a) {
      case kUp: --r; break;
      case kDown: ++r; break;
      case kLeft: --c; break;
      case kRight: ++c; break;
    }
    if (r < 0 || r >= spec.rows || c < 0 || c >= spec.cols) return s;
    const int dest = r * spec.cols + c;
    if (wall_states.count(dest)) return s;
    return dest;
  };

  MultiTaskProblem p;
  p.n_states = S;
  p.n_actions = A;
  p.n_tasks = N;
  p.gamma = spec.gamma;
  p.transition = Eigen::MatrixXd::Zero(S * A, S);
  p.rewards.assign(N, Eigen::MatrixXd::Zero(S, A));

  for (int s = 0; s < S; ++s) {
    for (int a = 0; a < A; ++a) {
      const int dest = (s == goal_state) ? goal_state : resolve(s, a);
      p.transition(p.sa_index(s, a), dest) = 1.0;
      if (s == goal_state) continue;  // absorbing, zero further reward
      for (int i = 0; i < N; ++i) {
        double r;
        if (dest == goal_state) {
          r = spec.goal_bonus[i];
        } else if (dest != s && bridge_of[dest] >= 0) {
          r = spec.bridges[bridge_of[dest]].rewards[i];
        } else {
          r = spec.move_reward[i];
        }
        p.rewards[i](s, a) = r;
      }
    }
  }

  if (spec.rho.empty()) {
    p.rho = Eigen::VectorXd::Zero(S);
    p.rho(spec.state_of(spec.start)) = 1.0;
  } else {
    p.rho = Eigen::Map<const Eigen::VectorXd>(spec.rho.data(), spec.rho.size());
  }
  p.lower_bounds = Eigen::Map<const Eigen::VectorXd>(spec.lower.data(), spec.lower.size());
  p.upper_bounds = Eigen::Map<const Eigen::VectorXd>(spec.upper.data(), spec.upper.size());
  p.slater_margin = spec.xi;
  return p;
}

MazeSpec three_bridges_maze(bool constrained) {
  MazeSpec m;
  m.rows = 10;
  m.cols = 10;
  // Vertical wall down column 5, pierced by four bridges.
  for (int r : {0, 2, 4, 6, 8, 9}) m.walls.push_back({r, 5});
  m.bridges = {
      {{{1, 5}}, {-0.1, -50.0, -500.0}},  // bridge 1: free for task 1
      {{{3, 5}}, {-5.0, -1.0, -500.0}},   // bridge 2: free for task 2
      {{{5, 5}}, {-5.0, -50.0, -10.0}},   // bridge 3: free for task 3
      {{{7, 5}}, {-1.0, -10.0, -100.0}},  // bridge 4: mid-priced everywhere
  };
  m.start = {0, 0};
  m.goal = {0, 9};
  m.goal_bonus = {10.0, 100.0, 1000.0};
  m.move_reward = {-0.1, -1.0, -10.0};
  m.gamma = 0.99;
  m.lower = constrained ? std::vector<double>{5.0, 50.0, 500.0}
                        : std::vector<double>{kNegInf, kNegInf, kNegInf};
  m.upper = {kPosInf, kPosInf, kPosInf};
  m.xi = 0.1;
  return m;
}

int bridge_crossed(const MazeSpec& spec, const std::vector<int>& path) {
  std::vector<int> bridge_of(spec.rows * spec.cols, -1);
  for (std::size_t b = 0; b < spec.bridges.size(); ++b) {
    for (const auto& c : spec.bridges[b].cells) bridge_of[spec.state_of(c)] = static_cast<int>(b);
  }
  for (int s : path) {
    if (s >= 0 && s < static_cast<int>(bridge_of.size()) && bridge_of[s] >= 0) {
      return bridge_of[s];
    }
  }
  return -1;
}

}  // namespace cmtrl
