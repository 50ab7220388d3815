#pragma once

#include <memory>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>
#include <Eigen/SparseLU>

#include "mimic/mpc.hpp"

namespace mimic {

/// Raised when the KKT point does not admit a well-defined derivative.
class SensitivityError : public std::runtime_error {
 public:
  enum class Kind { LicqViolated, WeakComplementarity, SingularKkt };
  SensitivityError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct SensitivityOptions {
  double active_tol = 1e-6;
  double weak_margin = 1e-8;
  /// Throw on weak complementarity instead of returning the one-sided
  /// derivative with the constraint held active.
  bool strict = false;
  bool check_licq = true;
};

/// Implicit-function data F(z, theta, x0) = 0 at a KKT point, restricted to
/// the equalities and the active inequalities. z = (w, lam, mu_active).
struct KktSystem {
  Eigen::SparseMatrix<double> hessian;          // n x n, Hessian of the Lagrangian
  Eigen::SparseMatrix<double> eq_jacobian;      // p x n
  Eigen::SparseMatrix<double> active_jacobian;  // q x n
  Eigen::MatrixXd grad_param_jacobian;          // n x n_theta, d(grad_w L)/d(theta)
  Eigen::MatrixXd eq_x0_jacobian;               // p x n_x0, d(c)/d(x0)
  Eigen::VectorXd residual;                     // F, length n + p + q
  std::vector<int> active;                      // indices into the inequality list
  double complementarity_margin = 0.0;
  bool weak = false;

  int num_vars() const { return static_cast<int>(hessian.rows()); }
  int num_eq() const { return static_cast<int>(eq_jacobian.rows()); }
  int num_active() const { return static_cast<int>(active_jacobian.rows()); }
  /// Square saddle-point matrix dF/dz.
  Eigen::SparseMatrix<double> matrix() const;
};

KktSystem kkt_system(const Ocp& ocp, const KktPoint& point, const StateVector& x0,
                     const SensitivityOptions& options = {});

struct AdjointResult {
  Eigen::VectorXd theta;  // (d w*/d theta)^T w_bar
  Eigen::VectorXd x0;     // (d w*/d x0)^T w_bar
};

/// Factorizes dF/dz once (sparse LU, COLAMD ordering) and evaluates adjoint
/// and tangent products of the solution map.
class Sensitivity {
 public:
  explicit Sensitivity(KktSystem system, const SensitivityOptions& options = {});

  const KktSystem& system() const { return sys_; }
  bool weak() const { return sys_.weak; }

  /// Cotangent seed `w_bar` lives on the primal decision vector.
  AdjointResult adjoint(const Eigen::VectorXd& w_bar) const;
  Eigen::VectorXd adjoint_wrt_params(const Eigen::VectorXd& w_bar) const { return adjoint(w_bar).theta; }
  Eigen::VectorXd adjoint_wrt_initial_state(const Eigen::VectorXd& w_bar) const { return adjoint(w_bar).x0; }

  /// Directional derivatives of the primal solution.
  Eigen::VectorXd tangent_params(const Eigen::VectorXd& dtheta) const;
  Eigen::VectorXd tangent_initial_state(const Eigen::VectorXd& dx0) const;

 private:
  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const;

  KktSystem sys_;
  Eigen::SparseMatrix<double> m_;
  Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>> lu_;
};

/// Seed on u_0 scaled by `value`.
Eigen::VectorXd u0_seed(const Ocp& ocp, double value = 1.0);

}  // namespace mimic
