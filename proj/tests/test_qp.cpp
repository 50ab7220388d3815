#include <random>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "mimic/qp.hpp"

namespace mimic {
namespace {

QpProblem random_qp(std::mt19937_64& rng, int n, int m) {
  std::normal_distribution<double> g(0.0, 1.0);
  QpProblem qp;
  const Eigen::MatrixXd R = Eigen::MatrixXd::NullaryExpr(n, n, [&] { return g(rng); });
  qp.H = R * R.transpose() + 0.1 * Eigen::MatrixXd::Identity(n, n);
  qp.g = Eigen::VectorXd::NullaryExpr(n, [&] { return 3.0 * g(rng); });
  qp.C = Eigen::MatrixXd::NullaryExpr(m, n, [&] { return g(rng); });
  // Feasible by construction: the origin satisfies every row with margin.
  qp.e = Eigen::VectorXd::NullaryExpr(m, [&] { return 0.1 + std::abs(g(rng)); });
  return qp;
}

// Oracle: the KKT conditions of the convex QP certify global optimality.
TEST(SolveQp, RandomInstancesSatisfyKkt) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + trial % 9;
    const int m = 1 + trial % 23;
    const QpProblem qp = random_qp(rng, n, m);
    const QpResult r = solve_qp(qp);
    ASSERT_EQ(r.status, QpStatus::Optimal) << trial;
    const Eigen::VectorXd stat = qp.H * r.v + qp.g + qp.C.transpose() * r.mu;
    EXPECT_LE(stat.lpNorm<Eigen::Infinity>(), 1e-9) << trial;
    const Eigen::VectorXd slack = qp.e - qp.C * r.v;
    EXPECT_GE(slack.minCoeff(), -1e-9) << trial;
    EXPECT_GE(r.mu.minCoeff(), 0.0);
    EXPECT_LE(slack.cwiseProduct(r.mu).cwiseAbs().maxCoeff(), 1e-9) << trial;
  }
}

// Oracle: brute force enumeration of active sets on a tiny problem.
TEST(SolveQp, MatchesActiveSetEnumeration) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 3, m = 5;
    const QpProblem qp = random_qp(rng, n, m);
    double best = std::numeric_limits<double>::infinity();
    Eigen::VectorXd best_v;
    for (int mask = 0; mask < (1 << m); ++mask) {
      std::vector<int> rows;
      for (int i = 0; i < m; ++i)
        if (mask & (1 << i)) rows.push_back(i);
      if (static_cast<int>(rows.size()) > n) continue;
      const int q = static_cast<int>(rows.size());
      Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n + q, n + q);
      Eigen::VectorXd rhs(n + q);
      K.topLeftCorner(n, n) = qp.H;
      rhs.head(n) = -qp.g;
      for (int j = 0; j < q; ++j) {
        K.block(0, n + j, n, 1) = qp.C.row(rows[j]).transpose();
        K.block(n + j, 0, 1, n) = qp.C.row(rows[j]);
        rhs(n + j) = qp.e(rows[j]);
      }
      const Eigen::VectorXd sol = K.fullPivLu().solve(rhs);
      const Eigen::VectorXd v = sol.head(n);
      if ((qp.C * v - qp.e).maxCoeff() > 1e-10) continue;
      const double f = 0.5 * v.dot(qp.H * v) + qp.g.dot(v);
      if (f < best) {
        best = f;
        best_v = v;
      }
    }
    const QpResult r = solve_qp(qp);
    ASSERT_EQ(r.status, QpStatus::Optimal);
    EXPECT_LE((r.v - best_v).lpNorm<Eigen::Infinity>(), 1e-9) << trial;
  }
}

TEST(SolveQp, DetectsInfeasibility) {
  QpProblem qp;
  qp.H = Eigen::MatrixXd::Identity(1, 1);
  qp.g = Eigen::VectorXd::Zero(1);
  qp.C.resize(2, 1);
  qp.C << 1.0, -1.0;
  qp.e.resize(2);
  qp.e << -1.0, -1.0;  // v <= -1 and v >= 1
  EXPECT_EQ(solve_qp(qp).status, QpStatus::Infeasible);
}

TEST(SolveQp, UnconstrainedAndRedundantRows) {
  QpProblem qp;
  qp.H = 2.0 * Eigen::MatrixXd::Identity(2, 2);
  qp.g = Eigen::Vector2d(-4.0, 2.0);
  qp.C.resize(3, 2);
  qp.C << 1.0, 0.0, 2.0, 0.0, 0.0, 1.0;
  qp.e = Eigen::Vector3d(1.0, 2.0, 5.0);  // first two rows coincide
  const QpResult r = solve_qp(qp);
  ASSERT_EQ(r.status, QpStatus::Optimal);
  EXPECT_NEAR(r.v(0), 1.0, 1e-14);
  EXPECT_NEAR(r.v(1), -1.0, 1e-14);
  EXPECT_NEAR(r.mu(0) + 2.0 * r.mu(1), 2.0, 1e-12);
  EXPECT_EQ(r.mu(2), 0.0);
}

TEST(SolveQp, RejectsIndefiniteHessian) {
  QpProblem qp;
  qp.H = -Eigen::MatrixXd::Identity(2, 2);
  qp.g = Eigen::VectorXd::Zero(2);
  qp.C.resize(0, 2);
  qp.e.resize(0);
  EXPECT_THROW(solve_qp(qp), std::invalid_argument);
}

}  // namespace
}  // namespace mimic
