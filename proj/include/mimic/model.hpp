#pragma once

#include <memory>

#include <Eigen/Core>

#include "mimic/vehicle.hpp"

namespace mimic {

using JacobianMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, 7, 7>;

/// Discrete-time prediction model x+ = f(x, u) with first and second
/// derivatives, as needed by the SQP solver and the KKT sensitivities.
class DiscreteModel {
 public:
  virtual ~DiscreteModel() = default;

  virtual int state_dim() const = 0;
  virtual StateVector step(const StateVector& x, double u) const = 0;

  /// Returns f(x, u) and fills A = df/dx, B = df/du.
  virtual StateVector linearize(const StateVector& x, double u, StateMatrix& A, StateVector& B) const = 0;

  /// Hessian of lambda^T f(x, u) with respect to (x, u); (nx+1) square.
  virtual JacobianMatrix weighted_hessian(const StateVector& x, double u, const StateVector& lambda) const = 0;
};

/// RK4-discretized Frenet bicycle model. Sigma is not wrapped so that
/// predicted trajectories stay continuous; curvature lookups wrap internally.
class FrenetModel final : public DiscreteModel {
 public:
  FrenetModel(const Track& track, VehicleParams params, ControlMode mode, double dt);

  int state_dim() const override { return mimic::state_dim(mode_); }
  StateVector step(const StateVector& x, double u) const override;
  StateVector linearize(const StateVector& x, double u, StateMatrix& A, StateVector& B) const override;
  JacobianMatrix weighted_hessian(const StateVector& x, double u, const StateVector& lambda) const override;

  const Track& track() const { return *track_; }
  const VehicleParams& params() const { return params_; }
  ControlMode mode() const { return mode_; }
  double dt() const { return dt_; }

 private:
  const Track* track_;
  VehicleParams params_;
  ControlMode mode_;
  double dt_;
};

/// x+ = A x + B u + c. Used for oracle comparisons against Riccati recursions.
class AffineModel final : public DiscreteModel {
 public:
  AffineModel(StateMatrix A, StateVector B, StateVector c);

  int state_dim() const override { return static_cast<int>(A_.rows()); }
  StateVector step(const StateVector& x, double u) const override;
  StateVector linearize(const StateVector& x, double u, StateMatrix& A, StateVector& B) const override;
  JacobianMatrix weighted_hessian(const StateVector& x, double u, const StateVector& lambda) const override;

 private:
  StateMatrix A_;
  StateVector B_;
  StateVector c_;
};

}  // namespace mimic
