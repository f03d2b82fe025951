#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <string>
#include <utility>
#include <vector>

namespace cmtrl {

/// Undirected communication graph over the agents. Edges are stored once
/// with i < j; self-loops are implicit.
struct CommGraph {
  int n = 0;
  std::vector<std::pair<int, int>> edges;

  static CommGraph complete(int n);
  static CommGraph ring(int n);
  static CommGraph path(int n);
  static CommGraph star(int n);
  static CommGraph from_edges(int n, std::vector<std::pair<int, int>> edges);

  /// {"preset":"ring","n":5} or {"edges":[[0,1],...], "n":3}.
  static CommGraph from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

  std::vector<int> degrees() const;
  bool connected() const;
};

/// Doubly stochastic consensus weights with the cached second-largest
/// singular value.
struct WeightMatrix {
  Eigen::MatrixXd w;
  double sigma2 = 0.0;
};

/// W = I/2 + M/2 with M the Metropolis matrix M_ij = 1/(1+max(deg_i,deg_j))
/// on edges and diagonal filling the remainder. Throws on a disconnected
/// graph (its spectral gap would vanish).
WeightMatrix lazy_metropolis(const CommGraph& graph);

/// Second-largest singular value. Full SVD for n <= 64, else power iteration
/// on W - (1/n) 1 1^T to relative tolerance 1e-10. sigma2 = 0 for n = 1 by
/// convention. Throws "graph effectively disconnected" when sigma2 >= 1-1e-12.
double second_singular_value(const Eigen::MatrixXd& w);

/// One synchronous averaging round: returns W * values. Rows of `values` are
/// the per-agent parameter vectors; column means are preserved exactly by
/// double stochasticity. This is the synchronization barrier of each
/// iteration round.
Eigen::MatrixXd consensus_step(const Eigen::MatrixXd& values, const WeightMatrix& w);

/// Reports violated WeightMatrix invariants (row/column sums, sign pattern
/// against the graph, sigma2 range).
std::vector<std::string> validate(const WeightMatrix& w, const CommGraph& graph);

void write_weight_matrix_csv(const WeightMatrix& w, std::ostream& os);

}  // namespace cmtrl
