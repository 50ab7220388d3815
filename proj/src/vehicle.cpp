#include "mimic/vehicle.hpp"

#include <fmt/format.h>

namespace mimic {

StateVector VehicleState::to_vector() const {
  StateVector x(dim());
  x(sx::beta) = beta;
  x(sx::psi_dot) = psi_dot;
  x(sx::sigma) = sigma;
  x(sx::d) = d;
  x(sx::phi) = phi;
  if (delta) x(sx::delta) = *delta;
  return x;
}

VehicleState VehicleState::from_vector(const StateVector& x) {
  if (x.size() != 5 && x.size() != 6) {
    throw InvalidArgument(fmt::format("state vector must have 5 or 6 entries, got {}", x.size()));
  }
  VehicleState s;
  s.beta = x(sx::beta);
  s.psi_dot = x(sx::psi_dot);
  s.sigma = x(sx::sigma);
  s.d = x(sx::d);
  s.phi = x(sx::phi);
  if (x.size() == 6) s.delta = x(sx::delta);
  return s;
}

void VehicleParams::validate() const {
  const double values[] = {mass, yaw_inertia, lf, lr, cf, cr, vx, steering_ratio};
  for (double v : values) {
    if (!(v > 0.0) || !std::isfinite(v)) throw InvalidArgument("vehicle parameters must be finite and positive");
  }
}

VehicleParams VehicleParams::perturbed() const {
  VehicleParams p = *this;
  p.mass *= 1.1;
  p.cf *= 1.1;
  p.cr *= 1.1;
  return p;
}

namespace {

void check_dim(const StateVector& x, ControlMode mode) {
  if (x.size() != state_dim(mode)) {
    throw InvalidArgument(fmt::format("state has {} entries but control mode needs {}", x.size(), state_dim(mode)));
  }
}

ControlMode mode_for(const VehicleState& s, const ControlInput& c) {
  const ControlMode expected = s.delta ? ControlMode::SteeringRate : ControlMode::SteeringAngle;
  if (expected != c.mode) throw InvalidArgument("control mode does not match the state variant");
  return c.mode;
}

}  // namespace

StateVector continuous_derivative(const StateVector& x, double u, ControlMode mode, const Track& track,
                                  const VehicleParams& params) {
  check_dim(x, mode);
  StateVector out(x.size());
  frenet_rhs<double>(x, u, mode, track, params, out);
  return out;
}

VehicleState continuous_derivative(const VehicleState& state, const ControlInput& control, const Track& track,
                                   const VehicleParams& params) {
  const ControlMode mode = mode_for(state, control);
  return VehicleState::from_vector(continuous_derivative(state.to_vector(), control.value, mode, track, params));
}

StateVector rk4_step(const StateVector& x, double u, ControlMode mode, const Track& track,
                     const VehicleParams& params, double dt) {
  check_dim(x, mode);
  if (!(dt > 0.0)) throw InvalidArgument("rk4_step: dt must be positive");
  StateVector next = rk4_advance<double>(x, u, mode, track, params, dt);
  next(sx::sigma) = track.wrap(next(sx::sigma));
  return next;
}

VehicleState rk4_step(const VehicleState& state, const ControlInput& control, const Track& track,
                      const VehicleParams& params, double dt) {
  const ControlMode mode = mode_for(state, control);
  return VehicleState::from_vector(rk4_step(state.to_vector(), control.value, mode, track, params, dt));
}

}  // namespace mimic
