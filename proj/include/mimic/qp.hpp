#pragma once

#include <vector>

#include <Eigen/Core>

namespace mimic {

/// Dense strictly convex QP:  min 0.5 v'Hv + g'v  s.t.  C v <= e.
struct QpProblem {
  Eigen::MatrixXd H;
  Eigen::VectorXd g;
  Eigen::MatrixXd C;
  Eigen::VectorXd e;
};

enum class QpStatus { Optimal, Infeasible, MaxIterations };

struct QpResult {
  QpStatus status = QpStatus::Optimal;
  Eigen::VectorXd v;
  Eigen::VectorXd mu;       // one per row of C, zero when inactive
  std::vector<int> active;  // rows of C in the final working set, in insertion order
  int iterations = 0;
};

struct QpOptions {
  double feasibility_tol = 1e-12;  // relative to the row scale
  int max_iterations = 1000;
};

/// Goldfarb-Idnani dual active-set method. H must be positive definite.
/// The working-set projections are recomputed from a Cholesky factor of H
/// at each step, which is cheap at the sizes used here and keeps the result
/// independent of update round-off.
QpResult solve_qp(const QpProblem& problem, const QpOptions& options = {});

}  // namespace mimic
