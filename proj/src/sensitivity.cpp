#include "mimic/sensitivity.hpp"

#include <cmath>
#include <limits>

#include <Eigen/OrderingMethods>
#include <Eigen/SparseQR>
#include <fmt/format.h>

namespace mimic {

Eigen::SparseMatrix<double> KktSystem::matrix() const {
  const int n = num_vars();
  const int p = num_eq();
  const int q = num_active();
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(static_cast<std::size_t>(hessian.nonZeros() + 2 * (eq_jacobian.nonZeros() + active_jacobian.nonZeros())));
  auto put = [&](const Eigen::SparseMatrix<double>& B, int r0, int c0, bool transpose) {
    for (int k = 0; k < B.outerSize(); ++k) {
      for (Eigen::SparseMatrix<double>::InnerIterator it(B, k); it; ++it) {
        const int r = static_cast<int>(it.row());
        const int c = static_cast<int>(it.col());
        if (transpose) {
          t.emplace_back(r0 + c, c0 + r, it.value());
        } else {
          t.emplace_back(r0 + r, c0 + c, it.value());
        }
      }
    }
  };
  put(hessian, 0, 0, false);
  put(eq_jacobian, n, 0, false);
  put(eq_jacobian, 0, n, true);
  put(active_jacobian, n + p, 0, false);
  put(active_jacobian, 0, n + p, true);
  Eigen::SparseMatrix<double> M(n + p + q, n + p + q);
  M.setFromTriplets(t.begin(), t.end());
  return M;
}

KktSystem kkt_system(const Ocp& ocp, const KktPoint& point, const StateVector& x0, const SensitivityOptions& options) {
  const int n = ocp.num_vars();
  const auto& ineq = ocp.inequalities();
  if (point.mu.size() != static_cast<Eigen::Index>(ineq.size()) || point.soft != ocp.soft()) {
    throw InvalidArgument("kkt system: point does not belong to this problem");
  }
  const Eigen::VectorXd w = ocp.stack(point);
  KktSystem sys;
  sys.hessian = ocp.lagrangian_hessian(point);
  sys.eq_jacobian = ocp.equality_jacobian(point);
  sys.grad_param_jacobian = ocp.cost_gradient_param_jacobian(w);
  sys.eq_x0_jacobian = Eigen::MatrixXd::Zero(ocp.num_eq(), ocp.nx());
  sys.eq_x0_jacobian.topRows(ocp.nx()).setIdentity();

  sys.complementarity_margin = std::numeric_limits<double>::infinity();
  std::vector<Eigen::Triplet<double>> t;
  for (std::size_t i = 0; i < ineq.size(); ++i) {
    const double h = ocp.inequality_value(ineq[i], w);
    if (std::abs(h) > options.active_tol) continue;
    const int row = static_cast<int>(sys.active.size());
    sys.active.push_back(static_cast<int>(i));
    t.emplace_back(row, ineq[i].var, ineq[i].sign);
    if (ineq[i].slack >= 0) t.emplace_back(row, ineq[i].slack, -1.0);
    sys.complementarity_margin = std::min(sys.complementarity_margin, point.mu(static_cast<Eigen::Index>(i)));
  }
  sys.active_jacobian.resize(static_cast<Eigen::Index>(sys.active.size()), n);
  sys.active_jacobian.setFromTriplets(t.begin(), t.end());
  sys.weak = !sys.active.empty() && sys.complementarity_margin < options.weak_margin;
  if (sys.weak && options.strict) {
    throw SensitivityError(SensitivityError::Kind::WeakComplementarity,
                           fmt::format("kkt system: weak complementarity (min active multiplier {:.3e})",
                                       sys.complementarity_margin));
  }
  if (point.stalled) sys.weak = true;

  const int p = ocp.num_eq();
  const int q = static_cast<int>(sys.active.size());
  sys.residual.resize(n + p + q);
  sys.residual.head(n) = ocp.lagrangian_gradient(point, x0);
  sys.residual.segment(n, p) = ocp.equality_residual(w, x0);
  for (int j = 0; j < q; ++j) sys.residual(n + p + j) = ocp.inequality_value(ineq[sys.active[j]], w);
  return sys;
}

Sensitivity::Sensitivity(KktSystem system, const SensitivityOptions& options) : sys_(std::move(system)) {
  const int n = sys_.num_vars();
  const int p = sys_.num_eq();
  const int q = sys_.num_active();
  if (sys_.weak && options.strict) {
    throw SensitivityError(SensitivityError::Kind::WeakComplementarity, "sensitivity: weak complementarity");
  }
  if (options.check_licq && p + q > 0) {
    // Rank of the stacked constraint Jacobian, from a column-pivoted sparse QR of its transpose.
    std::vector<Eigen::Triplet<double>> t;
    for (const auto* B : {&sys_.eq_jacobian, &sys_.active_jacobian}) {
      const int r0 = B == &sys_.eq_jacobian ? 0 : p;
      for (int k = 0; k < B->outerSize(); ++k) {
        for (Eigen::SparseMatrix<double>::InnerIterator it(*B, k); it; ++it) {
          t.emplace_back(static_cast<int>(it.col()), r0 + static_cast<int>(it.row()), it.value());
        }
      }
    }
    Eigen::SparseMatrix<double> G(n, p + q);
    G.setFromTriplets(t.begin(), t.end());
    G.makeCompressed();
    Eigen::SparseQR<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>> qr;
    qr.setPivotThreshold(1e-10);
    qr.compute(G);
    if (qr.info() != Eigen::Success || qr.rank() < p + q) {
      throw SensitivityError(SensitivityError::Kind::LicqViolated,
                             fmt::format("sensitivity: LICQ violated (constraint Jacobian rank {} < {})", qr.rank(),
                                         p + q));
    }
  }
  m_ = sys_.matrix();
  m_.makeCompressed();
  lu_.analyzePattern(m_);
  lu_.factorize(m_);
  if (lu_.info() != Eigen::Success) {
    throw SensitivityError(SensitivityError::Kind::SingularKkt,
                           fmt::format("sensitivity: KKT matrix factorization failed ({})", lu_.lastErrorMessage()));
  }
}

Eigen::VectorXd Sensitivity::solve(const Eigen::VectorXd& rhs) const {
  // dF/dz is symmetric, so the transposed solve uses the same factors.
  Eigen::VectorXd y = lu_.solve(rhs);
  const double err = (m_ * y - rhs).lpNorm<Eigen::Infinity>();
  if (!y.allFinite() || err > 1e-6 * (1.0 + rhs.lpNorm<Eigen::Infinity>())) {
    throw SensitivityError(SensitivityError::Kind::SingularKkt,
                           fmt::format("sensitivity: KKT solve is ill-conditioned (residual {:.3e})", err));
  }
  return y;
}

AdjointResult Sensitivity::adjoint(const Eigen::VectorXd& w_bar) const {
  const int n = sys_.num_vars();
  const int p = sys_.num_eq();
  if (w_bar.size() != n) throw InvalidArgument("adjoint: seed dimension must equal the number of decision variables");
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(m_.rows());
  rhs.head(n) = w_bar;
  const Eigen::VectorXd y = solve(rhs);
  AdjointResult out;
  out.theta = -sys_.grad_param_jacobian.transpose() * y.head(n);
  out.x0 = -sys_.eq_x0_jacobian.transpose() * y.segment(n, p);
  return out;
}

Eigen::VectorXd Sensitivity::tangent_params(const Eigen::VectorXd& dtheta) const {
  const int n = sys_.num_vars();
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(m_.rows());
  rhs.head(n) = -sys_.grad_param_jacobian * dtheta;
  return solve(rhs).head(n);
}

Eigen::VectorXd Sensitivity::tangent_initial_state(const Eigen::VectorXd& dx0) const {
  const int n = sys_.num_vars();
  const int p = sys_.num_eq();
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(m_.rows());
  rhs.segment(n, p) = -sys_.eq_x0_jacobian * dx0;
  return solve(rhs).head(n);
}

Eigen::VectorXd u0_seed(const Ocp& ocp, double value) {
  Eigen::VectorXd s = Eigen::VectorXd::Zero(ocp.num_vars());
  s(ocp.u_index(0)) = value;
  return s;
}

}  // namespace mimic
