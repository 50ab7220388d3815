#include "mimic/model.hpp"

#include <cmath>

#include "mimic/autodiff.hpp"
#include "mimic/errors.hpp"

namespace mimic {

FrenetModel::FrenetModel(const Track& track, VehicleParams params, ControlMode mode, double dt)
    : track_(&track), params_(params), mode_(mode), dt_(dt) {
  params_.validate();
  if (!(dt_ > 0.0)) throw InvalidArgument("model sample time must be positive");
}

StateVector FrenetModel::step(const StateVector& x, double u) const {
  return rk4_advance<double>(x, u, mode_, *track_, params_, dt_);
}

namespace {

// Six-state padding for both modes; column 6 of a Jacobian is the control. In
// angle mode entry 5 stays zero.
template <class S>
using Vec6 = Eigen::Matrix<S, 6, 1>;
template <class S>
using Mat67 = Eigen::Matrix<S, 6, 7>;

// f and [df/dx, df/du] of the continuous model. f repeats frenet_rhs term by
// term so both give identical doubles.
template <class S>
void rhs_jacobian(const Vec6<S>& x, const S& u, ControlMode mode, const Track& track, const VehicleParams& p,
                  Vec6<S>& f, Mat67<S>& J) {
  using std::cos;
  using std::sin;
  using std::tan;
  const bool rate = mode == ControlMode::SteeringRate;
  const S& beta = x(sx::beta);
  const S& psi_dot = x(sx::psi_dot);
  const S& sigma = x(sx::sigma);
  const S& d = x(sx::d);
  const S& phi = x(sx::phi);
  const S delta = rate ? x(sx::delta) : u;

  const S kappa = track.curvature_at(sigma);
  const double kappa_s = track.curvature_slope(value_of(sigma));
  const S denom = S(1.0) - kappa * d;
  if (value_of(denom) < kSingularityGuard) {
    throw SingularityError(value_of(sigma), value_of(d), value_of(denom));
  }
  const double vx = p.vx;
  const S tb = tan(beta);
  const S vy = vx * tb;
  const S c = cos(phi);
  const S s = sin(phi);
  const S num = vx * c - vy * s;
  const S sigma_dot = num / denom;

  const double c_sum = p.cf + p.cr;
  const double c_moment = p.cr * p.lr - p.cf * p.lf;
  const double c_inertia = p.cf * p.lf * p.lf + p.cr * p.lr * p.lr;
  const double a11 = -c_sum / (p.mass * vx);
  const double a12 = c_moment / (p.mass * vx * vx) - 1.0;
  const double b1 = p.cf / (p.mass * vx);
  const double a21 = c_moment / p.yaw_inertia;
  const double a22 = -c_inertia / (p.yaw_inertia * vx);
  const double b2 = p.cf * p.lf / p.yaw_inertia;

  f(sx::beta) = a11 * beta + a12 * psi_dot + b1 * delta;
  f(sx::psi_dot) = a21 * beta + a22 * psi_dot + b2 * delta;
  f(sx::sigma) = sigma_dot;
  f(sx::d) = vx * s + vy * c;
  f(sx::phi) = psi_dot - kappa * sigma_dot;
  f(sx::delta) = rate ? u : S(0.0);

  J.setZero();
  const int delta_col = rate ? sx::delta : 6;
  J(sx::beta, sx::beta) = S(a11);
  J(sx::beta, sx::psi_dot) = S(a12);
  J(sx::beta, delta_col) = S(b1);
  J(sx::psi_dot, sx::beta) = S(a21);
  J(sx::psi_dot, sx::psi_dot) = S(a22);
  J(sx::psi_dot, delta_col) = S(b2);

  const S vy_beta = vx * (1.0 + tb * tb);
  const S sd_beta = -s * vy_beta / denom;
  const S sd_phi = (-vx * s - vy * c) / denom;
  const S sd_sigma = sigma_dot * kappa_s * d / denom;
  const S sd_d = sigma_dot * kappa / denom;
  J(sx::sigma, sx::beta) = sd_beta;
  J(sx::sigma, sx::phi) = sd_phi;
  J(sx::sigma, sx::sigma) = sd_sigma;
  J(sx::sigma, sx::d) = sd_d;

  J(sx::d, sx::beta) = c * vy_beta;
  J(sx::d, sx::phi) = num;

  J(sx::phi, sx::psi_dot) = S(1.0);
  J(sx::phi, sx::beta) = -kappa * sd_beta;
  J(sx::phi, sx::phi) = -kappa * sd_phi;
  J(sx::phi, sx::sigma) = -kappa_s * sigma_dot - kappa * sd_sigma;
  J(sx::phi, sx::d) = -kappa * sd_d;

  if (rate) J(sx::delta, 6) = S(1.0);
}

// One RK4 step and its tangent T = [dx+/dx, dx+/du].
template <class S>
Vec6<S> rk4_tangent(const Vec6<S>& x, const S& u, ControlMode mode, const Track& track, const VehicleParams& p,
                    double h, Mat67<S>& T) {
  Mat67<S> S0 = Mat67<S>::Zero();
  for (int i = 0; i < 6; ++i) S0(i, i) = S(1.0);
  Vec6<S> k[4];
  Mat67<S> dk[4];
  Mat67<S> J;
  Vec6<S> xs = x;
  const double c[4] = {0.0, 0.5 * h, 0.5 * h, h};
  for (int i = 0; i < 4; ++i) {
    if (i > 0) {
      for (int j = 0; j < 6; ++j) xs(j) = x(j) + c[i] * k[i - 1](j);
    }
    rhs_jacobian<S>(xs, u, mode, track, p, k[i], J);
    if (i == 0) {
      dk[i] = J;
    } else {
      const Mat67<S> base = S0 + c[i] * dk[i - 1];
      dk[i].noalias() = J.template leftCols<6>() * base;
      dk[i].col(6) += J.col(6);
    }
  }
  T = S0 + (h / 6.0) * (dk[0] + 2.0 * dk[1] + 2.0 * dk[2] + dk[3]);
  Vec6<S> out;
  for (int j = 0; j < 6; ++j) out(j) = x(j) + (h / 6.0) * (k[0](j) + 2.0 * k[1](j) + 2.0 * k[2](j) + k[3](j));
  return out;
}

}  // namespace

StateVector FrenetModel::linearize(const StateVector& x, double u, StateMatrix& A, StateVector& B) const {
  const int nx = state_dim();
  Vec6<double> xp = Vec6<double>::Zero();
  xp.head(nx) = x;
  Mat67<double> T;
  const Vec6<double> next = rk4_tangent<double>(xp, u, mode_, *track_, params_, dt_, T);
  A = T.topLeftCorner(nx, nx);
  B = T.col(6).head(nx);
  return next.head(nx);
}

JacobianMatrix FrenetModel::weighted_hessian(const StateVector& x, double u, const StateVector& lambda) const {
  // Forward mode over the tangent: d T(r, b) / d z_a.
  const int nx = state_dim();
  Vec6<Jet> xj;
  for (int i = 0; i < 6; ++i) xj(i) = i < nx ? make_jet(x(i), i) : Jet(0.0, Eigen::Matrix<double, kMaxDirections, 1>::Zero());
  const Jet uj = make_jet(u, nx);
  Mat67<Jet> T;
  rk4_tangent<Jet>(xj, uj, mode_, *track_, params_, dt_, T);
  JacobianMatrix H = JacobianMatrix::Zero(nx + 1, nx + 1);
  for (int r = 0; r < nx; ++r) {
    if (lambda(r) == 0.0) continue;
    for (int b = 0; b <= nx; ++b) {
      const Jet& t = T(r, b < nx ? b : 6);
      for (int a = 0; a <= nx; ++a) H(a, b) += lambda(r) * t.derivatives()(a);
    }
  }
  return 0.5 * (H + H.transpose());
}

AffineModel::AffineModel(StateMatrix A, StateVector B, StateVector c) : A_(std::move(A)), B_(std::move(B)), c_(std::move(c)) {
  if (A_.rows() != A_.cols() || B_.size() != A_.rows() || c_.size() != A_.rows()) {
    throw InvalidArgument("affine model: inconsistent dimensions");
  }
}

StateVector AffineModel::step(const StateVector& x, double u) const { return A_ * x + B_ * u + c_; }

StateVector AffineModel::linearize(const StateVector& x, double u, StateMatrix& A, StateVector& B) const {
  A = A_;
  B = B_;
  return step(x, u);
}

JacobianMatrix AffineModel::weighted_hessian(const StateVector& x, double, const StateVector&) const {
  return JacobianMatrix::Zero(x.size() + 1, x.size() + 1);
}

}  // namespace mimic
