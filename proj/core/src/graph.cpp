#include "cmtrl/graph.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace cmtrl {

namespace {

void check_n(int n) {
  if (n < 1) throw std::invalid_argument("graph must have at least one node");
}

}  // namespace

CommGraph CommGraph::complete(int n) {
  check_n(n);
  CommGraph g{n, {}};
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) g.edges.emplace_back(i, j);
  }
  return g;
}

CommGraph CommGraph::ring(int n) {
  check_n(n);
  CommGraph g{n, {}};
  for (int i = 0; i + 1 < n; ++i) g.edges.emplace_back(i, i + 1);
  if (n > 2) g.edges.emplace_back(0, n - 1);  // n = 2 already closed by the path edge
  return g;
}

CommGraph CommGraph::path(int n) {
  check_n(n);
  CommGraph g{n, {}};
  for (int i = 0; i + 1 < n; ++i) g.edges.emplace_back(i, i + 1);
  return g;
}

CommGraph CommGraph::star(int n) {
  check_n(n);
  CommGraph g{n, {}};
  for (int i = 1; i < n; ++i) g.edges.emplace_back(0, i);
  return g;
}

CommGraph CommGraph::from_edges(int n, std::vector<std::pair<int, int>> edges) {
  check_n(n);
  std::set<std::pair<int, int>> dedup;
  for (auto [i, j] : edges) {
    if (i == j) continue;  // self-loops are implicit
    if (i > j) std::swap(i, j);
    if (i < 0 || j >= n) throw std::invalid_argument("edge endpoint out of range");
    dedup.insert({i, j});
  }
  CommGraph g{n, {dedup.begin(), dedup.end()}};
  return g;
}

CommGraph CommGraph::from_json(const nlohmann::json& j) {
  if (j.contains("preset")) {
    const std::string preset = j.at("preset").get<std::string>();
    const int n = j.at("n").get<int>();
    if (preset == "complete") return complete(n);
    if (preset == "ring") return ring(n);
    if (preset == "path") return path(n);
    if (preset == "star") return star(n);
    throw std::invalid_argument("unknown graph preset: " + preset);
  }
  if (j.contains("edges")) {
    std::vector<std::pair<int, int>> edges;
    int max_node = 0;
    for (const auto& e : j.at("edges")) {
      const auto v = e.get<std::vector<int>>();
      if (v.size() != 2) throw std::invalid_argument("edge must be [i, j]");
      edges.emplace_back(v[0], v[1]);
      max_node = std::max({max_node, v[0], v[1]});
    }
    const int n = j.value("n", max_node + 1);
    return from_edges(n, std::move(edges));
  }
  throw std::invalid_argument("graph spec needs either \"preset\" or \"edges\"");
}

nlohmann::json CommGraph::to_json() const {
  nlohmann::json j;
  j["n"] = n;
  auto& e = j["edges"] = nlohmann::json::array();
  for (const auto& [i, k] : edges) e.push_back({i, k});
  return j;
}

std::vector<int> CommGraph::degrees() const {
  std::vector<int> deg(n, 0);
  for (const auto& [i, j] : edges) {
    ++deg[i];
    ++deg[j];
  }
  return deg;
}

bool CommGraph::connected() const {
  if (n <= 1) return true;
  std::vector<std::vector<int>> adj(n);
  for (const auto& [i, j] : edges) {
    adj[i].push_back(j);
    adj[j].push_back(i);
  }
  std::vector<char> seen(n, 0);
  std::vector<int> queue{0};
  seen[0] = 1;
  int reached = 1;
  while (!queue.empty()) {
    const int v = queue.back();
    queue.pop_back();
    for (int u : adj[v]) {
      if (!seen[u]) {
        seen[u] = 1;
        ++reached;
        queue.push_back(u);
      }
    }
  }
  return reached == n;
}

WeightMatrix lazy_metropolis(const CommGraph& g) {
  if (!g.connected()) {
    throw std::invalid_argument("lazy_metropolis requires a connected graph");
  }
  const auto deg = g.degrees();
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(g.n, g.n);
  for (const auto& [i, j] : g.edges) {
    const double w = 1.0 / (1.0 + std::max(deg[i], deg[j]));
    m(i, j) = w;
    m(j, i) = w;
  }
  for (int i = 0; i < g.n; ++i) m(i, i) = 1.0 - m.row(i).sum();

  WeightMatrix out;
  out.w = 0.5 * Eigen::MatrixXd::Identity(g.n, g.n) + 0.5 * m;
  out.sigma2 = second_singular_value(out.w);
  return out;
}

double second_singular_value(const Eigen::MatrixXd& w) {
  const int n = static_cast<int>(w.rows());
  if (w.cols() != n) throw std::invalid_argument("weight matrix must be square");
  if (n == 1) return 0.0;

  double sigma2 = 0.0;
  if (n <= 64) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(w);
    sigma2 = svd.singularValues()(1);
  } else {
    // Deflate the consensus direction, then power-iterate on B^T B. The
    // eigenpair residual drives the stop; successive-iterate differences can
    // stall long before convergence when singular values cluster.
    const Eigen::MatrixXd b =
        w - Eigen::MatrixXd::Constant(n, n, 1.0 / static_cast<double>(n));
    Eigen::VectorXd v = Eigen::VectorXd::LinSpaced(n, 1.0, 2.0).normalized();
    double lambda = 0.0;
    for (int it = 0; it < 200000; ++it) {
      const Eigen::VectorXd next = b.transpose() * (b * v);
      lambda = v.dot(next);  // Rayleigh quotient for B^T B
      const double residual = (next - lambda * v).norm();
      const double norm = next.norm();
      if (norm == 0.0) return 0.0;
      v = next / norm;
      if (residual <= 1e-10 * std::max(lambda, 1e-300)) break;
    }
    sigma2 = std::sqrt(std::max(lambda, 0.0));
  }
  if (sigma2 >= 1.0 - 1e-12) {
    throw std::runtime_error("graph effectively disconnected: sigma2 ~ 1");
  }
  return sigma2;
}

Eigen::MatrixXd consensus_step(const Eigen::MatrixXd& values, const WeightMatrix& w) {
  if (values.rows() != w.w.rows()) {
    throw std::invalid_argument("consensus_step: one row per agent required");
  }
  return w.w * values;
}

std::vector<std::string> validate(const WeightMatrix& wm, const CommGraph& g) {
  std::vector<std::string> bad;
  const auto& w = wm.w;
  if (w.rows() != g.n || w.cols() != g.n) {
    bad.push_back("weight matrix size does not match graph");
    return bad;
  }
  for (int i = 0; i < g.n; ++i) {
    if (std::abs(w.row(i).sum() - 1.0) > 1e-12) {
      bad.push_back("row " + std::to_string(i) + " does not sum to 1");
    }
    if (std::abs(w.col(i).sum() - 1.0) > 1e-12) {
      bad.push_back("column " + std::to_string(i) + " does not sum to 1");
    }
  }
  if (w.minCoeff() < 0.0) bad.push_back("negative weight entry");
  std::set<std::pair<int, int>> edge_set(g.edges.begin(), g.edges.end());
  for (int i = 0; i < g.n; ++i) {
    for (int j = 0; j < g.n; ++j) {
      if (i == j) continue;
      const bool has_edge = edge_set.count({std::min(i, j), std::max(i, j)}) > 0;
      if (has_edge && !(w(i, j) > 0.0)) {
        bad.push_back("zero weight on edge (" + std::to_string(i) + "," + std::to_string(j) + ")");
      }
      if (!has_edge && w(i, j) != 0.0) {
        bad.push_back("nonzero weight off edge (" + std::to_string(i) + "," + std::to_string(j) + ")");
      }
    }
  }
  if (!(wm.sigma2 >= 0.0 && wm.sigma2 < 1.0)) bad.push_back("sigma2 outside [0,1)");
  return bad;
}

void write_weight_matrix_csv(const WeightMatrix& wm, std::ostream& os) {
  char buf[64];
  for (int i = 0; i < wm.w.rows(); ++i) {
    for (int j = 0; j < wm.w.cols(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", wm.w(i, j));
      os << buf << (j + 1 < wm.w.cols() ? "," : "\n");
    }
  }
}

}  // namespace cmtrl
