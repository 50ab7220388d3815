#pragma once

#include <cmath>
#include <optional>

#include <Eigen/Core>

#include "mimic/autodiff.hpp"
#include "mimic/errors.hpp"
#include "mimic/track.hpp"

namespace mimic {

enum class ControlMode { SteeringAngle, SteeringRate };

inline int state_dim(ControlMode mode) { return mode == ControlMode::SteeringRate ? 6 : 5; }

/// Positions inside a state vector (beta, psi_dot, sigma, d, phi[, delta]).
namespace sx {
inline constexpr int beta = 0;
inline constexpr int psi_dot = 1;
inline constexpr int sigma = 2;
inline constexpr int d = 3;
inline constexpr int phi = 4;
inline constexpr int delta = 5;
}  // namespace sx

/// State vectors never exceed six entries; keep them off the heap.
using StateVector = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 6, 1>;
using StateMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, 6, 6>;

struct VehicleState {
  double beta = 0.0;     // rad
  double psi_dot = 0.0;  // rad/s
  double sigma = 0.0;    // m
  double d = 0.0;        // m, positive left
  double phi = 0.0;      // rad
  std::optional<double> delta;  // rad, augmented variant only

  int dim() const { return delta ? 6 : 5; }
  StateVector to_vector() const;
  static VehicleState from_vector(const StateVector& x);
};

struct ControlInput {
  double value = 0.0;
  ControlMode mode = ControlMode::SteeringAngle;
};

struct VehicleParams {
  double mass = 1380.0;         // kg
  double yaw_inertia = 2420.0;  // kg m^2
  double lf = 1.0;              // m
  double lr = 1.6;              // m
  double cf = 1.0e5;            // N/rad
  double cr = 1.0e5;            // N/rad
  double vx = 13.889;           // m/s
  double steering_ratio = 16.0;

  void validate() const;
  /// +10% mass and cornering stiffness, used to emulate plant/model mismatch.
  VehicleParams perturbed() const;
};

inline constexpr double kSingularityGuard = 0.5;

/// Right-hand side of the Frenet single-track model on any scalar type.
///
/// Writes the state derivative into `out` (same length as `x`). Throws
/// SingularityError when 1 - kappa*d < 0.5.
template <class T, class Vec>
void frenet_rhs(const Vec& x, const T& u, ControlMode mode, const Track& track, const VehicleParams& p, Vec& out) {
  using std::cos;
  using std::sin;
  using std::tan;
  const T& beta = x(sx::beta);
  const T& psi_dot = x(sx::psi_dot);
  const T& sigma = x(sx::sigma);
  const T& d = x(sx::d);
  const T& phi = x(sx::phi);
  const T delta = mode == ControlMode::SteeringRate ? x(sx::delta) : u;

  const T kappa = track.curvature_at(sigma);
  const T denom = T(1.0) - kappa * d;
  if (value_of(denom) < kSingularityGuard) {
    throw SingularityError(value_of(sigma), value_of(d), value_of(denom));
  }
  const double vx = p.vx;
  const T vy = vx * tan(beta);
  const T sigma_dot = (vx * cos(phi) - vy * sin(phi)) / denom;

  const double c_sum = p.cf + p.cr;
  const double c_moment = p.cr * p.lr - p.cf * p.lf;
  const double c_inertia = p.cf * p.lf * p.lf + p.cr * p.lr * p.lr;

  out(sx::beta) = -c_sum / (p.mass * vx) * beta + (c_moment / (p.mass * vx * vx) - 1.0) * psi_dot +
                  p.cf / (p.mass * vx) * delta;
  out(sx::psi_dot) = c_moment / p.yaw_inertia * beta - c_inertia / (p.yaw_inertia * vx) * psi_dot +
                     p.cf * p.lf / p.yaw_inertia * delta;
  out(sx::sigma) = sigma_dot;
  out(sx::d) = vx * sin(phi) + vy * cos(phi);
  out(sx::phi) = psi_dot - kappa * sigma_dot;
  if (mode == ControlMode::SteeringRate) out(sx::delta) = u;
}

/// Classical fourth-order Runge-Kutta step for x' = rhs(x), where
/// rhs(x, out) writes the derivative into `out`.
template <class Vec, class Rhs>
Vec rk4_integrate(const Vec& x, double dt, Rhs&& rhs) {
  const auto n = x.size();
  Vec k1(n), k2(n), k3(n), k4(n), tmp(n);
  rhs(x, k1);
  for (Eigen::Index i = 0; i < n; ++i) tmp(i) = x(i) + (0.5 * dt) * k1(i);
  rhs(tmp, k2);
  for (Eigen::Index i = 0; i < n; ++i) tmp(i) = x(i) + (0.5 * dt) * k2(i);
  rhs(tmp, k3);
  for (Eigen::Index i = 0; i < n; ++i) tmp(i) = x(i) + dt * k3(i);
  rhs(tmp, k4);
  Vec out(n);
  for (Eigen::Index i = 0; i < n; ++i) out(i) = x(i) + (dt / 6.0) * (k1(i) + 2.0 * k2(i) + 2.0 * k3(i) + k4(i));
  return out;
}

/// One RK4 step of the Frenet model without wrapping sigma.
template <class T, class Vec>
Vec rk4_advance(const Vec& x, const T& u, ControlMode mode, const Track& track, const VehicleParams& p, double dt) {
  return rk4_integrate(x, dt, [&](const Vec& s, Vec& out) { frenet_rhs<T>(s, u, mode, track, p, out); });
}

StateVector continuous_derivative(const StateVector& x, double u, ControlMode mode, const Track& track,
                                  const VehicleParams& params);

/// Typed variant; the result holds time derivatives in the state slots.
VehicleState continuous_derivative(const VehicleState& state, const ControlInput& control, const Track& track,
                                   const VehicleParams& params);

/// RK4 step followed by wrapping sigma onto [0, track length).
StateVector rk4_step(const StateVector& x, double u, ControlMode mode, const Track& track,
                     const VehicleParams& params, double dt);

VehicleState rk4_step(const VehicleState& state, const ControlInput& control, const Track& track,
                      const VehicleParams& params, double dt);

}  // namespace mimic
