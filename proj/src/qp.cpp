#include "mimic/qp.hpp"

#include <cmath>
#include <limits>

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include "mimic/errors.hpp"

namespace mimic {

QpResult solve_qp(const QpProblem& qp, const QpOptions& options) {
  const Eigen::Index n = qp.H.rows();
  const Eigen::Index m = qp.C.rows();
  if (qp.H.cols() != n || qp.g.size() != n || (m > 0 && qp.C.cols() != n) || qp.e.size() != m) {
    throw InvalidArgument("qp: inconsistent dimensions");
  }
  const Eigen::LLT<Eigen::MatrixXd> llt(qp.H);
  if (llt.info() != Eigen::Success) throw InvalidArgument("qp: Hessian is not positive definite");
  const auto L = llt.matrixL();
  const auto U = llt.matrixU();

  QpResult res;
  res.v = llt.solve(-qp.g);
  res.mu = Eigen::VectorXd::Zero(m);

  Eigen::VectorXd row_norm(m);
  for (Eigen::Index i = 0; i < m; ++i) row_norm(i) = std::max(qp.C.row(i).norm(), 1e-300);

  std::vector<int>& active = res.active;
  std::vector<double> u;
  std::vector<char> in_active(static_cast<std::size_t>(m), 0);
  constexpr double inf = std::numeric_limits<double>::infinity();

  while (true) {
    // Most violated constraint, measured as a distance.
    int p = -1;
    double worst = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
      if (in_active[i]) continue;
      const double slack = qp.e(i) - qp.C.row(i).dot(res.v);
      const double scale = 1.0 + std::abs(qp.e(i)) + row_norm(i) * res.v.lpNorm<Eigen::Infinity>();
      if (slack < -options.feasibility_tol * scale && slack / row_norm(i) < worst) {
        worst = slack / row_norm(i);
        p = static_cast<int>(i);
      }
    }
    if (p < 0) break;

    double u_p = 0.0;
    const Eigen::VectorXd n_p = -qp.C.row(p).transpose();
    while (true) {
      if (++res.iterations > options.max_iterations) {
        res.status = QpStatus::MaxIterations;
        return res;
      }
      const auto q = static_cast<Eigen::Index>(active.size());
      const Eigen::VectorXd y = L.solve(n_p);
      Eigen::VectorXd r(q);
      Eigen::VectorXd resid = y;
      if (q > 0) {
        Eigen::MatrixXd W(n, q);
        for (Eigen::Index j = 0; j < q; ++j) W.col(j) = L.solve(-qp.C.row(active[j]).transpose());
        r = W.colPivHouseholderQr().solve(y);
        resid -= W * r;
      }
      const Eigen::VectorXd z = U.solve(resid);
      const double zn = resid.squaredNorm();

      double t1 = inf;
      int drop = -1;
      for (Eigen::Index j = 0; j < q; ++j) {
        if (r(j) > 0.0 && u[j] / r(j) < t1) {
          t1 = u[j] / r(j);
          drop = static_cast<int>(j);
        }
      }
      double t2 = inf;
      if (zn > 1e-14 * y.squaredNorm()) {
        const double s_p = qp.e(p) - qp.C.row(p).dot(res.v);
        t2 = std::max(-s_p / zn, 0.0);
      }
      if (t1 == inf && t2 == inf) {
        res.status = QpStatus::Infeasible;
        return res;
      }
      const double t = std::min(t1, t2);
      if (t2 < inf) res.v += t * z;
      for (Eigen::Index j = 0; j < q; ++j) u[j] -= t * r(j);
      u_p += t;
      if (t2 <= t1) {
        active.push_back(p);
        u.push_back(u_p);
        in_active[p] = 1;
        break;
      }
      in_active[active[drop]] = 0;
      active.erase(active.begin() + drop);
      u.erase(u.begin() + drop);
    }
  }
  for (std::size_t j = 0; j < active.size(); ++j) res.mu(active[j]) = std::max(u[j], 0.0);
  res.status = QpStatus::Optimal;
  return res;
}

}  // namespace mimic
