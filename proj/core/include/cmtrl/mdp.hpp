#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <limits>
#include <string>
#include <vector>

namespace cmtrl {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kPosInf = std::numeric_limits<double>::infinity();

/// A collection of discounted MDPs sharing states, actions, dynamics and
/// discount, differing only in their reward tables. Task i additionally
/// carries value bounds [lower(i), upper(i)]; infinite bounds mean the
/// corresponding constraint is absent and its dual variable stays pinned at 0.
///
/// Immutable after construction; safe for concurrent reads.
struct MultiTaskProblem {
  int n_states = 0;
  int n_actions = 0;
  int n_tasks = 0;
  /// Transition table, (n_states*n_actions) x n_states. Row sa_index(s, a)
  /// is the distribution of the next state.
  Eigen::MatrixXd transition;
  /// One n_states x n_actions reward table per task.
  std::vector<Eigen::MatrixXd> rewards;
  double gamma = 0.0;
  /// Initial state distribution.
  Eigen::VectorXd rho;
  Eigen::VectorXd lower_bounds;  // entries may be -inf
  Eigen::VectorXd upper_bounds;  // entries may be +inf
  /// Configured strict-feasibility margin xi in (0, 1]. Used only to size the
  /// dual projection box; never verified against the instance.
  double slater_margin = 1.0;

  int sa_index(int s, int a) const { return s * n_actions + a; }

  /// R_max = max over tasks and state-action pairs of |r_i(s, a)|.
  double reward_max() const;
  /// R_max / (1 - gamma); every |V_i|, |Q_i| is bounded by this.
  double value_bound() const;
  /// Dual projection radius B_lambda = R_max / (xi * (1 - gamma)).
  double dual_bound() const;

  nlohmann::json to_json() const;
  static MultiTaskProblem from_json(const nlohmann::json& j);
};

/// Reports every violated structural invariant (row sums, bound ordering,
/// gamma range, ...) with the offending indices. Empty result means valid.
std::vector<std::string> validate(const MultiTaskProblem& problem);

struct Cell {
  int row = 0;
  int col = 0;
  bool operator==(const Cell&) const = default;
};

std::string to_string(const Cell& c);

/// Grid actions, in tie-break order.
enum MazeAction { kUp = 0, kDown = 1, kLeft = 2, kRight = 3 };

/// Declarative description of a multi-task maze: one shared deterministic
/// grid, per-task rewards. Bridges are designated cells whose crossing is
/// charged a per-task price instead of the default move reward.
struct MazeSpec {
  struct Bridge {
    std::vector<Cell> cells;
    std::vector<double> rewards;  // one per task
  };

  int rows = 0;
  int cols = 0;
  std::vector<Cell> walls;
  std::vector<Bridge> bridges;
  Cell start;
  Cell goal;
  std::vector<double> goal_bonus;   // per task, paid on entering the goal
  std::vector<double> move_reward;  // per task, any other move
  double gamma = 0.99;
  std::vector<double> lower;  // per task, may be -inf
  std::vector<double> upper;  // per task, may be +inf
  double xi = 1.0;
  /// Optional explicit initial distribution (length rows*cols). Empty means a
  /// point mass on the start cell.
  std::vector<double> rho;

  int n_tasks() const { return static_cast<int>(goal_bonus.size()); }
  int state_of(const Cell& c) const { return c.row * cols + c.col; }

  std::vector<std::string> validate() const;

  nlohmann::json to_json() const;
  static MazeSpec from_json(const nlohmann::json& j);
};

/// Expands a MazeSpec into a MultiTaskProblem with actions {up,down,left,
/// right}. Moves into walls or off the grid keep the position. The goal is
/// absorbing with zero further reward; its bonus is paid on the transition
/// into it. Throws std::invalid_argument naming the offending cell if the
/// spec is inconsistent.
MultiTaskProblem build_gridworld(const MazeSpec& spec);

/// The canonical 10x10 three-task bridge benchmark: four bridges across a
/// vertical wall, per-task prices chosen so each task prefers a different
/// bridge. `constrained` installs the lower bounds (5, 50, 500); otherwise
/// all lower bounds are -inf.
MazeSpec three_bridges_maze(bool constrained);

/// Crossing-order bridge index (0-based) hit by a state path, or -1 if the
/// path crosses no bridge cell.
int bridge_crossed(const MazeSpec& spec, const std::vector<int>& path);

}  // namespace cmtrl
