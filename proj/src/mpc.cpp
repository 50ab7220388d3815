#include "mimic/mpc.hpp"

#include <cmath>
#include <limits>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "mimic/io.hpp"
#include "mimic/qp.hpp"

namespace mimic {

int param_dim(Variant variant) {
  switch (variant) {
    case Variant::Weights:
      return 4;
    case Variant::SetpointAngle:
      return 2;
    case Variant::SetpointRate:
      return 3;
  }
  return 0;
}

ControlMode control_mode(Variant variant) {
  return variant == Variant::SetpointRate ? ControlMode::SteeringRate : ControlMode::SteeringAngle;
}

std::string to_string(Variant variant) {
  switch (variant) {
    case Variant::Weights:
      return "weights";
    case Variant::SetpointAngle:
      return "setpoint_angle";
    case Variant::SetpointRate:
      return "setpoint_rate";
  }
  return "?";
}

Variant parse_variant(const std::string& name) {
  if (name == "weights") return Variant::Weights;
  if (name == "setpoint_angle") return Variant::SetpointAngle;
  if (name == "setpoint_rate") return Variant::SetpointRate;
  throw InvalidArgument(fmt::format("unknown MPC variant '{}' (expected weights, setpoint_angle, setpoint_rate)", name));
}

int horizon_steps(double lookahead, double vx, double dt) {
  if (!(lookahead > 0.0) || !(vx > 0.0) || !(dt > 0.0)) {
    throw InvalidArgument("horizon_steps: lookahead, speed and dt must be positive");
  }
  // The small shift absorbs representation error in exact ratios such as 1.3889 / 1.3889.
  const double ratio = lookahead / (vx * dt);
  const int n = static_cast<int>(std::floor(ratio + 0.5 + 1e-9));
  return std::max(n, 1);
}

OcpSpec OcpSpec::from_lookahead(double lookahead, double vx, double dt, Variant variant, double lane_width,
                                BoxLimits limits) {
  OcpSpec spec;
  spec.horizon = horizon_steps(lookahead, vx, dt);
  spec.dt = dt;
  spec.lookahead = lookahead;
  spec.variant = variant;
  spec.limits = limits;
  spec.half_width = 0.5 * lane_width;
  spec.validate();
  return spec;
}

void OcpSpec::validate() const {
  if (horizon < 1) throw InvalidArgument("ocp: horizon must be >= 1");
  if (!(dt > 0.0)) throw InvalidArgument("ocp: dt must be positive");
  for (double b : {limits.delta_max, limits.delta_rate_max, limits.beta_max, limits.psi_dot_max, half_width}) {
    if (!(b > 0.0) || !std::isfinite(b)) throw InvalidArgument("ocp: box limits and lane width must be finite and positive");
  }
}

MpcParams MpcParams::zeros(Variant variant) { return {variant, Eigen::VectorXd::Zero(param_dim(variant))}; }

void MpcParams::validate() const {
  if (theta.size() != param_dim(variant)) {
    throw InvalidArgument(fmt::format("mpc params: variant {} expects {} parameters, got {}", to_string(variant),
                                      param_dim(variant), theta.size()));
  }
  if (!theta.allFinite()) throw InvalidArgument("mpc params: non-finite parameter");
}

StageWeights stage_weights(const MpcParams& params) {
  params.validate();
  StageWeights w;
  const auto& t = params.theta;
  switch (params.variant) {
    case Variant::Weights:
      w.w_d = std::exp(t(0));
      w.w_phi = std::exp(t(1));
      w.w_u = std::exp(t(2));
      w.d_ref = t(3);
      break;
    case Variant::SetpointAngle:
      w.d_ref = t(0);
      w.phi_ref = t(1);
      break;
    case Variant::SetpointRate:
      w.d_ref = t(0);
      w.phi_ref = t(1);
      w.w_u = std::exp(t(2));
      break;
  }
  return w;
}

double stage_cost(const StateVector& x, double u, const MpcParams& params) {
  if (x.size() != state_dim(control_mode(params.variant))) {
    throw InvalidArgument(fmt::format("stage_cost: variant {} expects a {}-dimensional state, got {}",
                                      to_string(params.variant), state_dim(control_mode(params.variant)), x.size()));
  }
  const StageWeights w = stage_weights(params);
  const double ed = x(sx::d) - w.d_ref;
  const double ephi = x(sx::phi) - w.phi_ref;
  return w.w_d * ed * ed + w.w_phi * ephi * ephi + w.w_u * u * u;
}

// ---------------------------------------------------------------------------

Ocp::Ocp(const DiscreteModel& model, const OcpSpec& spec, const MpcParams& params, bool soft, double slack_l1,
         double slack_l2)
    : model_(&model),
      spec_(spec),
      params_(params),
      weights_(stage_weights(params)),
      nx_(model.state_dim()),
      n_(spec.horizon),
      soft_(soft),
      slack_l1_(slack_l1),
      slack_l2_(slack_l2) {
  spec_.validate();
  if (params.variant != spec.variant) throw InvalidArgument("ocp: parameter variant differs from spec variant");
  const ControlMode mode = control_mode(spec.variant);
  if (nx_ != state_dim(mode)) {
    throw InvalidArgument(fmt::format("ocp: variant {} needs a {}-state model, got {}", to_string(spec.variant),
                                      state_dim(mode), nx_));
  }
  const BoxLimits& lim = spec.limits;
  for (int k = 1; k <= n_; ++k) {
    const int slack = soft ? s_index(k) : -1;
    ineq_.push_back({x_index(k, sx::d), 1.0, slack, spec.half_width});
    ineq_.push_back({x_index(k, sx::d), -1.0, slack, spec.half_width});
    for (auto [i, b] : {std::pair{sx::beta, lim.beta_max}, std::pair{sx::psi_dot, lim.psi_dot_max}}) {
      ineq_.push_back({x_index(k, i), 1.0, -1, b});
      ineq_.push_back({x_index(k, i), -1.0, -1, b});
    }
    if (mode == ControlMode::SteeringRate) {
      ineq_.push_back({x_index(k, sx::delta), 1.0, -1, lim.delta_max});
      ineq_.push_back({x_index(k, sx::delta), -1.0, -1, lim.delta_max});
    }
  }
  const double u_max = mode == ControlMode::SteeringRate ? lim.delta_rate_max : lim.delta_max;
  for (int k = 0; k < n_; ++k) {
    ineq_.push_back({u_index(k), 1.0, -1, u_max});
    ineq_.push_back({u_index(k), -1.0, -1, u_max});
  }
  // Slack sign constraints go last so that hard and soft lists share a prefix.
  if (soft) {
    for (int k = 1; k <= n_; ++k) ineq_.push_back({s_index(k), -1.0, -1, 0.0});
  }
}

Eigen::VectorXd Ocp::stack(const KktPoint& p) const {
  Eigen::VectorXd w(num_vars());
  for (int k = 0; k <= n_; ++k) w.segment(x_index(k, 0), nx_) = p.x[k];
  w.segment(u_index(0), n_) = p.u;
  if (soft_) w.segment(s_index(1), n_) = p.slack;
  return w;
}

void Ocp::unstack(const Eigen::VectorXd& w, KktPoint& p) const {
  p.x.resize(n_ + 1);
  for (int k = 0; k <= n_; ++k) p.x[k] = w.segment(x_index(k, 0), nx_);
  p.u = w.segment(u_index(0), n_);
  p.slack = soft_ ? Eigen::VectorXd(w.segment(s_index(1), n_)) : Eigen::VectorXd();
  p.soft = soft_;
}

double Ocp::cost(const Eigen::VectorXd& w) const {
  const StageWeights& s = weights_;
  double j = 0.0;
  for (int k = 0; k < n_; ++k) {
    const double ed = w(x_index(k, sx::d)) - s.d_ref;
    const double ephi = w(x_index(k, sx::phi)) - s.phi_ref;
    const double u = w(u_index(k));
    j += s.w_d * ed * ed + s.w_phi * ephi * ephi + s.w_u * u * u + stage_constant_;
  }
  if (soft_) {
    for (int k = 1; k <= n_; ++k) {
      const double sl = w(s_index(k));
      j += slack_l1_ * sl + slack_l2_ * sl * sl;
    }
  }
  return j;
}

Eigen::VectorXd Ocp::cost_gradient(const Eigen::VectorXd& w) const {
  const StageWeights& s = weights_;
  Eigen::VectorXd g = Eigen::VectorXd::Zero(num_vars());
  for (int k = 0; k < n_; ++k) {
    g(x_index(k, sx::d)) = 2.0 * s.w_d * (w(x_index(k, sx::d)) - s.d_ref);
    g(x_index(k, sx::phi)) = 2.0 * s.w_phi * (w(x_index(k, sx::phi)) - s.phi_ref);
    g(u_index(k)) = 2.0 * s.w_u * w(u_index(k));
  }
  if (soft_) {
    for (int k = 1; k <= n_; ++k) g(s_index(k)) = slack_l1_ + 2.0 * slack_l2_ * w(s_index(k));
  }
  return g;
}

Eigen::VectorXd Ocp::cost_hessian_diagonal() const {
  Eigen::VectorXd h = Eigen::VectorXd::Zero(num_vars());
  for (int k = 0; k < n_; ++k) {
    h(x_index(k, sx::d)) = 2.0 * weights_.w_d;
    h(x_index(k, sx::phi)) = 2.0 * weights_.w_phi;
    h(u_index(k)) = 2.0 * weights_.w_u;
  }
  if (soft_) {
    for (int k = 1; k <= n_; ++k) h(s_index(k)) = 2.0 * slack_l2_;
  }
  return h;
}

Eigen::MatrixXd Ocp::cost_gradient_param_jacobian(const Eigen::VectorXd& w) const {
  const StageWeights& s = weights_;
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(num_vars(), param_dim(params_.variant));
  for (int k = 0; k < n_; ++k) {
    const int id = x_index(k, sx::d);
    const int ip = x_index(k, sx::phi);
    const int iu = u_index(k);
    switch (params_.variant) {
      case Variant::Weights:
        J(id, 0) = 2.0 * s.w_d * (w(id) - s.d_ref);
        J(ip, 1) = 2.0 * s.w_phi * (w(ip) - s.phi_ref);
        J(iu, 2) = 2.0 * s.w_u * w(iu);
        J(id, 3) = -2.0 * s.w_d;
        break;
      case Variant::SetpointRate:
        J(iu, 2) = 2.0 * s.w_u * w(iu);
        [[fallthrough]];
      case Variant::SetpointAngle:
        J(id, 0) = -2.0 * s.w_d;
        J(ip, 1) = -2.0 * s.w_phi;
        break;
    }
  }
  return J;
}

Eigen::VectorXd Ocp::equality_residual(const Eigen::VectorXd& w, const StateVector& x0) const {
  Eigen::VectorXd c(num_eq());
  c.segment(0, nx_) = x0 - w.segment(x_index(0, 0), nx_);
  for (int k = 0; k < n_; ++k) {
    const StateVector xk = w.segment(x_index(k, 0), nx_);
    c.segment((k + 1) * nx_, nx_) = model_->step(xk, w(u_index(k))) - w.segment(x_index(k + 1, 0), nx_);
  }
  return c;
}

double Ocp::inequality_value(const Inequality& c, const Eigen::VectorXd& w) const {
  return c.sign * w(c.var) - (c.slack >= 0 ? w(c.slack) : 0.0) - c.bound;
}

Eigen::VectorXd Ocp::inequality_values(const Eigen::VectorXd& w) const {
  Eigen::VectorXd h(static_cast<Eigen::Index>(ineq_.size()));
  for (std::size_t i = 0; i < ineq_.size(); ++i) h(static_cast<Eigen::Index>(i)) = inequality_value(ineq_[i], w);
  return h;
}

Eigen::VectorXd Ocp::lagrangian_gradient(const KktPoint& p, const StateVector&) const {
  std::vector<StateMatrix> A(n_);
  std::vector<StateVector> B(n_);
  for (int k = 0; k < n_; ++k) model_->linearize(p.x[k], p.u(k), A[k], B[k]);
  return lagrangian_gradient(p, A, B);
}

Eigen::VectorXd Ocp::lagrangian_gradient(const KktPoint& p, const std::vector<StateMatrix>& A,
                                         const std::vector<StateVector>& B) const {
  const Eigen::VectorXd w = stack(p);
  Eigen::VectorXd g = cost_gradient(w);
  for (int k = 0; k <= n_; ++k) g.segment(x_index(k, 0), nx_) -= p.lam[k];
  for (int k = 0; k < n_; ++k) {
    g.segment(x_index(k, 0), nx_) += A[k].transpose() * p.lam[k + 1];
    g(u_index(k)) += B[k].dot(p.lam[k + 1]);
  }
  for (std::size_t i = 0; i < ineq_.size(); ++i) {
    const double mu = p.mu(static_cast<Eigen::Index>(i));
    g(ineq_[i].var) += ineq_[i].sign * mu;
    if (ineq_[i].slack >= 0) g(ineq_[i].slack) -= mu;
  }
  return g;
}

Eigen::SparseMatrix<double> Ocp::lagrangian_hessian(const KktPoint& p) const {
  std::vector<Eigen::Triplet<double>> t;
  const Eigen::VectorXd d = cost_hessian_diagonal();
  for (int i = 0; i < num_vars(); ++i) {
    if (d(i) != 0.0) t.emplace_back(i, i, d(i));
  }
  for (int k = 0; k < n_; ++k) {
    const JacobianMatrix H = model_->weighted_hessian(p.x[k], p.u(k), p.lam[k + 1]);
    auto idx = [&](int a) { return a < nx_ ? x_index(k, a) : u_index(k); };
    for (int a = 0; a <= nx_; ++a) {
      for (int b = 0; b <= nx_; ++b) {
        if (H(a, b) != 0.0) t.emplace_back(idx(a), idx(b), H(a, b));
      }
    }
  }
  Eigen::SparseMatrix<double> M(num_vars(), num_vars());
  M.setFromTriplets(t.begin(), t.end());
  return M;
}

Eigen::SparseMatrix<double> Ocp::equality_jacobian(const KktPoint& p) const {
  std::vector<Eigen::Triplet<double>> t;
  for (int i = 0; i < nx_; ++i) t.emplace_back(i, x_index(0, i), -1.0);
  for (int k = 0; k < n_; ++k) {
    StateMatrix A;
    StateVector B;
    model_->linearize(p.x[k], p.u(k), A, B);
    const int row = (k + 1) * nx_;
    for (int r = 0; r < nx_; ++r) {
      for (int c = 0; c < nx_; ++c) {
        if (A(r, c) != 0.0) t.emplace_back(row + r, x_index(k, c), A(r, c));
      }
      if (B(r) != 0.0) t.emplace_back(row + r, u_index(k), B(r));
      t.emplace_back(row + r, x_index(k + 1, r), -1.0);
    }
  }
  Eigen::SparseMatrix<double> J(num_eq(), num_vars());
  J.setFromTriplets(t.begin(), t.end());
  return J;
}

KktResiduals Ocp::residuals(const KktPoint& p, const StateVector& x0) const {
  if (static_cast<int>(p.x.size()) != n_ + 1 || p.u.size() != n_ || static_cast<int>(p.lam.size()) != n_ + 1 ||
      p.mu.size() != static_cast<Eigen::Index>(ineq_.size())) {
    throw InvalidArgument("kkt residuals: point dimensions do not match the problem");
  }
  std::vector<StateMatrix> A(n_);
  std::vector<StateVector> B(n_);
  for (int k = 0; k < n_; ++k) model_->linearize(p.x[k], p.u(k), A[k], B[k]);
  return residuals(p, x0, A, B);
}

KktResiduals Ocp::residuals(const KktPoint& p, const StateVector& x0, const std::vector<StateMatrix>& A,
                            const std::vector<StateVector>& B) const {
  const Eigen::VectorXd w = stack(p);
  KktResiduals r;
  r.stationarity = lagrangian_gradient(p, A, B).lpNorm<Eigen::Infinity>();
  r.feasibility = equality_residual(w, x0).lpNorm<Eigen::Infinity>();
  for (std::size_t i = 0; i < ineq_.size(); ++i) {
    const double h = inequality_value(ineq_[i], w);
    const double mu = p.mu(static_cast<Eigen::Index>(i));
    r.feasibility = std::max(r.feasibility, h);
    // Scaled per constraint so that large penalty multipliers do not turn
    // round-off in h into a residual.
    r.complementarity = std::max({r.complementarity, std::abs(mu * h) / std::max(1.0, std::abs(mu)), -mu});
  }
  return r;
}

// ---------------------------------------------------------------------------

namespace {

struct Linearization {
  std::vector<StateVector> f;
  std::vector<StateMatrix> A;
  std::vector<StateVector> B;
};

Linearization linearize_all(const Ocp& ocp, const KktPoint& p) {
  const int n = ocp.horizon();
  Linearization lin;
  lin.f.resize(n);
  lin.A.resize(n);
  lin.B.resize(n);
  for (int k = 0; k < n; ++k) lin.f[k] = ocp.model().linearize(p.x[k], p.u(k), lin.A[k], lin.B[k]);
  return lin;
}

// Multipliers of the dynamics from stationarity in the states, given
// g = cost gradient (plus any quadratic model term) + inequality terms.
std::vector<StateVector> backward_multipliers(const Ocp& ocp, const Linearization& lin, const Eigen::VectorXd& g) {
  const int n = ocp.horizon();
  const int nx = ocp.nx();
  std::vector<StateVector> lam(n + 1);
  lam[n] = g.segment(ocp.x_index(n, 0), nx);
  for (int k = n - 1; k >= 0; --k) lam[k] = g.segment(ocp.x_index(k, 0), nx) + lin.A[k].transpose() * lam[k + 1];
  return lam;
}

Eigen::VectorXd add_inequality_terms(const Ocp& ocp, Eigen::VectorXd g, const Eigen::VectorXd& mu) {
  const auto& ineq = ocp.inequalities();
  for (std::size_t i = 0; i < ineq.size(); ++i) {
    g(ineq[i].var) += ineq[i].sign * mu(static_cast<Eigen::Index>(i));
    if (ineq[i].slack >= 0) g(ineq[i].slack) -= mu(static_cast<Eigen::Index>(i));
  }
  return g;
}

double merit(const Ocp& ocp, const Eigen::VectorXd& w, const StateVector& x0, double nu) {
  try {
    const double c = ocp.equality_residual(w, x0).lpNorm<1>();
    const Eigen::VectorXd h = ocp.inequality_values(w);
    return ocp.cost(w) + nu * (c + h.cwiseMax(0.0).sum());
  } catch (const SingularityError&) {
    return std::numeric_limits<double>::infinity();
  }
}

enum class SqpStatus { Converged, QpInfeasible };

struct SqpOutcome {
  SqpStatus status;
  KktResiduals last;
};

SqpOutcome run_sqp(const Ocp& ocp, KktPoint& p, const StateVector& x0, const SolverOptions& opt) {
  const int n = ocp.horizon();
  const int nx = ocp.nx();
  const int nv = n + (ocp.soft() ? n : 0);
  const auto& ineq = ocp.inequalities();
  const auto m = static_cast<Eigen::Index>(ineq.size());
  const Eigen::VectorXd hdiag = ocp.cost_hessian_diagonal();
  Eigen::VectorXd w = ocp.stack(p);
  double nu = 1.0;
  KktResiduals last;
  std::vector<double> history;
  p.stalled = false;

  // Row k of T maps the QP variables onto w; only state, control and slack
  // rows that carry cost or constraints are needed, but all are formed.
  std::vector<Eigen::MatrixXd> M(n + 1, Eigen::MatrixXd::Zero(nx, n));
  std::vector<StateVector> mvec(n + 1);

  for (int it = 0;; ++it) {
    const Linearization lin = linearize_all(ocp, p);
    const Eigen::VectorXd grad = ocp.cost_gradient(w);
    p.lam = backward_multipliers(ocp, lin, add_inequality_terms(ocp, grad, p.mu));
    last = ocp.residuals(p, x0, lin.A, lin.B);
    p.kkt_residual = last.max();
    p.iterations = it;
    if (last.max() <= opt.tolerance) return {SqpStatus::Converged, last};
    history.push_back(last.max());
    if (it >= opt.stall_window && last.max() <= opt.stall_tolerance &&
        last.max() > 0.5 * history[static_cast<std::size_t>(it - opt.stall_window)]) {
      p.stalled = true;
      return {SqpStatus::Converged, last};
    }
    if (it >= opt.max_iterations) {
      throw MpcConvergenceError(
          fmt::format("mpc: no convergence after {} SQP iterations (stationarity {:.3e}, feasibility {:.3e}, "
                      "complementarity {:.3e})",
                      it, last.stationarity, last.feasibility, last.complementarity),
          last);
    }

    // Condensing: dx_k = M_k du + m_k.
    mvec[0] = x0 - p.x[0];
    M[0].setZero();
    for (int k = 0; k < n; ++k) {
      mvec[k + 1] = lin.A[k] * mvec[k] + (lin.f[k] - p.x[k + 1]);
      // Columns k.. of M_k are zero.
      M[k + 1].leftCols(k).noalias() = lin.A[k] * M[k].leftCols(k);
      M[k + 1].col(k) = lin.B[k];
    }
    auto T_row = [&](int var, Eigen::Ref<Eigen::RowVectorXd> row, double& offset) {
      row.setZero();
      offset = 0.0;
      const int xend = (n + 1) * nx;
      if (var < xend) {
        const int k = var / nx;
        const int i = var % nx;
        row.head(n) = M[k].row(i);
        offset = mvec[k](i);
      } else if (var < ocp.u_index(0) + n) {
        row(var - ocp.u_index(0)) = 1.0;
      } else {
        row(n + (var - ocp.s_index(1))) = 1.0;
      }
    };

    QpProblem qp;
    qp.H = Eigen::MatrixXd::Zero(nv, nv);
    qp.g = Eigen::VectorXd::Zero(nv);
    for (int k = 0; k < n; ++k) {
      for (int i : {sx::d, sx::phi}) {
        const int var = ocp.x_index(k, i);
        const double q = hdiag(var);
        const auto r = M[k].row(i).head(k);
        qp.H.topLeftCorner(k, k).noalias() += q * r.transpose() * r;
        qp.g.head(k) += (grad(var) + q * mvec[k](i)) * r.transpose();
      }
      qp.H(k, k) += hdiag(ocp.u_index(k));
      qp.g(k) += grad(ocp.u_index(k));
    }
    if (ocp.soft()) {
      for (int k = 1; k <= n; ++k) {
        qp.H(n + k - 1, n + k - 1) += hdiag(ocp.s_index(k));
        qp.g(n + k - 1) += grad(ocp.s_index(k));
      }
    }
    qp.C.resize(m, nv);
    qp.e.resize(m);
    Eigen::RowVectorXd row(nv), srow(nv);
    for (Eigen::Index i = 0; i < m; ++i) {
      const Inequality& c = ineq[static_cast<std::size_t>(i)];
      double off = 0.0, soff = 0.0;
      T_row(c.var, row, off);
      qp.C.row(i) = c.sign * row;
      if (c.slack >= 0) {
        T_row(c.slack, srow, soff);
        qp.C.row(i) -= srow;
      }
      qp.e(i) = -ocp.inequality_value(c, w) - c.sign * off + (c.slack >= 0 ? soff : 0.0);
    }
    const QpResult sol = solve_qp(qp);
    if (sol.status == QpStatus::Infeasible) return {SqpStatus::QpInfeasible, last};
    if (sol.status != QpStatus::Optimal) {
      throw MpcConvergenceError("mpc: QP subproblem hit its iteration limit", last);
    }

    // Full step in w.
    Eigen::VectorXd dw(w.size());
    for (int k = 0; k <= n; ++k) dw.segment(ocp.x_index(k, 0), nx) = M[k] * sol.v.head(n) + mvec[k];
    dw.segment(ocp.u_index(0), n) = sol.v.head(n);
    if (ocp.soft()) dw.segment(ocp.s_index(1), n) = sol.v.tail(n);

    // Penalty from the QP multipliers of the linearized problem.
    {
      Eigen::VectorXd gq = grad + hdiag.cwiseProduct(dw);
      const auto lam_qp = backward_multipliers(ocp, lin, add_inequality_terms(ocp, gq, sol.mu));
      double lam_max = sol.mu.size() ? sol.mu.lpNorm<Eigen::Infinity>() : 0.0;
      for (const auto& l : lam_qp) lam_max = std::max(lam_max, l.lpNorm<Eigen::Infinity>());
      nu = std::max(nu, 1.5 * lam_max + 1.0);
    }
    const double phi0 = merit(ocp, w, x0, nu);
    const double c1 = ocp.equality_residual(w, x0).lpNorm<1>() + ocp.inequality_values(w).cwiseMax(0.0).sum();
    const double slope = grad.dot(dw) - nu * c1;
    double alpha = 1.0;
    // A negligible predicted decrease or step is below the merit's round-off
    // (sigma is O(1e3)); the local Gauss-Newton step is taken as is.
    const bool negligible = -slope <= 1e-10 * (1.0 + std::abs(phi0)) ||
                            dw.lpNorm<Eigen::Infinity>() <= 1e-9 * (1.0 + w.lpNorm<Eigen::Infinity>());
    while (!negligible && alpha > 1e-10) {
      const double phi1 = merit(ocp, w + alpha * dw, x0, nu);
      // Near convergence the merit change drops below its own round-off.
      if (phi1 <= phi0 + 1e-4 * alpha * std::min(slope, 0.0) + 1e-13 * std::abs(phi0)) break;
      alpha *= 0.5;
    }
    // No measurable decrease at any step length: the merit is at round-off.
    if (alpha <= 1e-10) alpha = 1.0;
    w += alpha * dw;
    p.mu += alpha * (sol.mu - p.mu);
    ocp.unstack(w, p);
  }
}

KktPoint cold_start(const DiscreteModel& model, int n, const StateVector& x0) {
  KktPoint p;
  p.x.resize(n + 1);
  p.u = Eigen::VectorXd::Zero(n);
  p.x[0] = x0;
  for (int k = 0; k < n; ++k) p.x[k + 1] = model.step(p.x[k], 0.0);
  return p;
}

void finalize(const Ocp& ocp, KktPoint& p, const SolverOptions& opt) {
  const Eigen::VectorXd h = ocp.inequality_values(ocp.stack(p));
  p.active_set.assign(static_cast<std::size_t>(h.size()), false);
  p.complementarity_margin = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < h.size(); ++i) {
    if (std::abs(h(i)) <= opt.active_tol) {
      p.active_set[static_cast<std::size_t>(i)] = true;
      p.complementarity_margin = std::min(p.complementarity_margin, p.mu(i));
    }
  }
}

}  // namespace

KktPoint solve(const DiscreteModel& model, const OcpSpec& spec, const MpcParams& params, const StateVector& x0,
               const KktPoint* warm_start, const SolverOptions& options) {
  spec.validate();
  params.validate();
  if (x0.size() != model.state_dim()) throw InvalidArgument("mpc solve: initial state dimension mismatch");
  const int n = spec.horizon;

  KktPoint p;
  const bool warm_ok = warm_start && warm_start->horizon() == n && static_cast<int>(warm_start->x.size()) == n + 1 &&
                       warm_start->x[0].size() == x0.size();
  p = warm_ok ? *warm_start : cold_start(model, n, x0);
  Ocp hard(model, spec, params, false, options.slack_l1, options.slack_l2);
  hard.set_stage_constant(options.stage_constant);
  const auto m_hard = static_cast<Eigen::Index>(hard.inequalities().size());
  if (warm_ok && p.mu.size() >= m_hard) {
    p.mu = Eigen::VectorXd(p.mu.head(m_hard));
  } else {
    p.mu = Eigen::VectorXd::Zero(m_hard);
  }
  const KktPoint start = p;
  p.soft = false;
  p.slack.resize(0);

  SqpOutcome out = run_sqp(hard, p, x0, options);
  if (out.status == SqpStatus::Converged) {
    finalize(hard, p, options);
    return p;
  }
  if (!options.allow_soft) {
    throw MpcConvergenceError("mpc: lane constraint infeasible and softening disabled", out.last);
  }

  Ocp soft(model, spec, params, true, options.slack_l1, options.slack_l2);
  soft.set_stage_constant(options.stage_constant);
  p = start;
  p.soft = true;
  p.slack.resize(n);
  for (int k = 1; k <= n; ++k) p.slack(k - 1) = std::max(0.0, std::abs(p.x[k](sx::d)) - spec.half_width);
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(soft.inequalities().size()));
  mu.head(m_hard) = p.mu;
  p.mu = mu;
  out = run_sqp(soft, p, x0, options);
  if (out.status != SqpStatus::Converged) {
    throw MpcConvergenceError("mpc: QP subproblem infeasible even with softened lane constraint", out.last);
  }
  finalize(soft, p, options);
  return p;
}

KktPoint shift_warm_start(const KktPoint& previous, const DiscreteModel& model, const StateVector& x0) {
  const int n = previous.horizon();
  KktPoint p;
  p.u.resize(n);
  for (int k = 0; k < n; ++k) p.u(k) = previous.u(std::min(k + 1, n - 1));
  p.x.resize(n + 1);
  p.x[0] = x0;
  for (int k = 0; k < n; ++k) p.x[k + 1] = model.step(p.x[k], p.u(k));
  p.mu = previous.mu;
  p.soft = false;
  return p;
}

KktResiduals kkt_residuals(const KktPoint& point, const DiscreteModel& model, const OcpSpec& spec,
                           const MpcParams& params, const StateVector& x0) {
  const Ocp ocp(model, spec, params, point.soft);
  return ocp.residuals(point, x0);
}

std::string trajectory_csv(const KktPoint& point) {
  const int nx = point.x.empty() ? 5 : static_cast<int>(point.x[0].size());
  std::vector<std::string> header{"k", "beta", "psi_dot", "sigma", "d", "phi"};
  if (nx == 6) header.push_back("delta");
  header.push_back("u");
  std::string out = fmt::format("{}\n", fmt::join(header, ","));
  for (std::size_t k = 0; k < point.x.size(); ++k) {
    out += std::to_string(k);
    for (int i = 0; i < nx; ++i) out += "," + format_double(point.x[k](i));
    out += ",";
    if (k < static_cast<std::size_t>(point.u.size())) out += format_double(point.u(static_cast<Eigen::Index>(k)));
    out += "\n";
  }
  return out;
}

void write_trajectory_csv(const KktPoint& point, const std::filesystem::path& path) {
  write_text_file(path, trajectory_csv(point));
}

}  // namespace mimic
