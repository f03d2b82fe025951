#include "doctest.h"

#include <cmath>

#include "cmtrl/graph.hpp"
#include "cmtrl/rng.hpp"

using namespace cmtrl;

TEST_CASE("lazy Metropolis weights on the two-node graph") {
  const WeightMatrix w = lazy_metropolis(CommGraph::complete(2));
  CHECK(w.w(0, 0) == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(w.w(0, 1) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(w.w(1, 0) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(w.w(1, 1) == doctest::Approx(0.75).epsilon(1e-15));
  // 2x2 symmetric stochastic matrix [[a,b],[b,a]] has eigenvalues 1 and a-b.
  CHECK(w.sigma2 == doctest::Approx(0.75 - 0.25).epsilon(1e-12));
  CHECK(validate(w, CommGraph::complete(2)).empty());
}

TEST_CASE("lazy Metropolis weights on the three-node path") {
  const CommGraph g = CommGraph::path(3);
  const WeightMatrix w = lazy_metropolis(g);
  Eigen::MatrixXd expected(3, 3);
  expected << 5.0 / 6, 1.0 / 6, 0.0,
              1.0 / 6, 2.0 / 3, 1.0 / 6,
              0.0, 1.0 / 6, 5.0 / 6;
  CHECK((w.w - expected).cwiseAbs().maxCoeff() <= 1e-15);
  for (int i = 0; i < 3; ++i) {
    CHECK(w.w.row(i).sum() == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(w.w.col(i).sum() == doctest::Approx(1.0).epsilon(1e-15));
  }
  CHECK(validate(w, g).empty());
}

TEST_CASE("single node is its own network") {
  const WeightMatrix w = lazy_metropolis(CommGraph::ring(1));
  CHECK(w.w(0, 0) == 1.0);
  CHECK(w.sigma2 == 0.0);  // convention for n = 1
}

TEST_CASE("second singular value of the full-averaging matrix is zero") {
  const Eigen::MatrixXd avg = Eigen::MatrixXd::Constant(4, 4, 0.25);
  CHECK(second_singular_value(avg) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("identity weights mean a disconnected network") {
  CHECK_THROWS_WITH_AS(second_singular_value(Eigen::MatrixXd::Identity(3, 3)),
                       doctest::Contains("disconnected"), std::runtime_error);
  CHECK_THROWS_AS(lazy_metropolis(CommGraph::from_edges(3, {{0, 1}})),
                  std::invalid_argument);
}

TEST_CASE("power iteration path agrees with dense SVD") {
  // n > 64 routes through the deflated power iteration.
  const WeightMatrix big = lazy_metropolis(CommGraph::ring(80));
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(big.w);
  CHECK(big.sigma2 == doctest::Approx(svd.singularValues()(1)).epsilon(1e-9));
}

TEST_CASE("consensus step") {
  const WeightMatrix w = lazy_metropolis(CommGraph::path(3));

  SUBCASE("identical rows are a fixed point") {
    Eigen::MatrixXd theta(3, 2);
    theta << 1, 2, 1, 2, 1, 2;
    CHECK((consensus_step(theta, w) - theta).cwiseAbs().maxCoeff() <= 1e-15);
  }
  SUBCASE("full averaging collapses to the mean") {
    WeightMatrix avg;
    avg.w = Eigen::MatrixXd::Constant(3, 3, 1.0 / 3);
    avg.sigma2 = 0.0;
    Eigen::MatrixXd theta(3, 1);
    theta << 0, 3, 6;
    const Eigen::MatrixXd out = consensus_step(theta, avg);
    for (int i = 0; i < 3; ++i) CHECK(out(i, 0) == doctest::Approx(3.0));
  }
  SUBCASE("indicator column spreads by the first weight row") {
    Eigen::MatrixXd theta = Eigen::MatrixXd::Zero(3, 1);
    theta(0, 0) = 1.0;
    const Eigen::MatrixXd out = consensus_step(theta, w);
    CHECK(out(0, 0) == doctest::Approx(5.0 / 6).epsilon(1e-15));
    CHECK(out(1, 0) == doctest::Approx(1.0 / 6).epsilon(1e-15));
    CHECK(out(2, 0) == doctest::Approx(0.0));
  }
  SUBCASE("dimension mismatch is rejected") {
    CHECK_THROWS_AS(consensus_step(Eigen::MatrixXd::Zero(2, 2), w), std::invalid_argument);
  }
}

TEST_CASE("column means are preserved to machine precision") {
  RngStream rng(3, 0);
  const WeightMatrix w = lazy_metropolis(CommGraph::ring(6));
  Eigen::MatrixXd theta(6, 5);
  for (int i = 0; i < theta.size(); ++i) theta(i / 5, i % 5) = rng.next_double() * 10 - 5;
  const Eigen::RowVectorXd before = theta.colwise().mean();
  const Eigen::RowVectorXd after = consensus_step(theta, w).colwise().mean();
  CHECK((before - after).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("disagreement contracts geometrically at rate sigma2") {
  RngStream rng(9, 0);
  const WeightMatrix w = lazy_metropolis(CommGraph::ring(6));
  Eigen::MatrixXd theta(6, 4);
  for (int r = 0; r < 6; ++r) {
    for (int c = 0; c < 4; ++c) theta(r, c) = rng.next_double() * 2 - 1;
  }
  const Eigen::RowVectorXd mean = theta.colwise().mean();
  const double initial = (theta.rowwise() - mean).norm();
  Eigen::MatrixXd iter = theta;
  for (int k = 1; k <= 20; ++k) {
    iter = consensus_step(iter, w);
    const double disagreement = (iter.rowwise() - mean).norm();
    CHECK(disagreement <= std::pow(w.sigma2, k) * initial + 1e-12);
  }
}

TEST_CASE("lazy Metropolis diagonals stay at least one half") {
  for (int n : {2, 3, 5, 9}) {
    for (const CommGraph& g : {CommGraph::ring(n), CommGraph::path(n), CommGraph::star(n),
                               CommGraph::complete(n)}) {
      const WeightMatrix w = lazy_metropolis(g);
      CHECK(w.w.diagonal().minCoeff() >= 0.5 - 1e-15);
      CHECK(validate(w, g).empty());
    }
  }
}

TEST_CASE("graph specs parse from JSON") {
  const CommGraph ring = CommGraph::from_json({{"preset", "ring"}, {"n", 5}});
  CHECK(ring.n == 5);
  CHECK(ring.edges.size() == 5);

  const CommGraph listed = CommGraph::from_json({{"edges", {{0, 1}, {1, 2}}}});
  CHECK(listed.n == 3);
  CHECK(listed.connected());
  CHECK(CommGraph::from_json(listed.to_json()).edges == listed.edges);

  CHECK_THROWS_AS(CommGraph::from_json({{"preset", "mesh"}, {"n", 4}}),
                  std::invalid_argument);
  CHECK_THROWS_AS(CommGraph::from_json(nlohmann::json::object()), std::invalid_argument);
}
