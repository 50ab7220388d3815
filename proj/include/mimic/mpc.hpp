#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "mimic/model.hpp"
#include "mimic/vehicle.hpp"

namespace mimic {

/// Objective parametrizations of the lane-keeping OCP.
///
/// Weights:        theta = (log W_d, log W_phi, log W_delta, d_ref), phi_ref = 0
/// SetpointAngle:  theta = (d_ref, phi_ref), unit weights, u = steering angle
/// SetpointRate:   theta = (d_ref, phi_ref, log W_rate), u = steering rate
enum class Variant { Weights, SetpointAngle, SetpointRate };

int param_dim(Variant variant);
ControlMode control_mode(Variant variant);
std::string to_string(Variant variant);
Variant parse_variant(const std::string& name);

struct BoxLimits {
  double delta_max = 0.6;       // rad
  double delta_rate_max = 1.0;  // rad/s
  double beta_max = 0.3;        // rad
  double psi_dot_max = 1.5;     // rad/s
};

/// N = round(d_la / (vx * dt)), ties up, at least 1.
int horizon_steps(double lookahead, double vx, double dt);

struct OcpSpec {
  int horizon = 7;
  double dt = 0.1;
  double lookahead = 9.72;
  Variant variant = Variant::Weights;
  BoxLimits limits;
  double half_width = 1.75;

  static OcpSpec from_lookahead(double lookahead, double vx, double dt, Variant variant, double lane_width,
                                BoxLimits limits = {});
  void validate() const;
};

struct MpcParams {
  Variant variant = Variant::Weights;
  Eigen::VectorXd theta;

  static MpcParams zeros(Variant variant);
  void validate() const;
};

/// Stage weights and references recovered from MpcParams.
struct StageWeights {
  double w_d = 1.0;
  double w_phi = 1.0;
  double w_u = 1.0;
  double d_ref = 0.0;
  double phi_ref = 0.0;
};

StageWeights stage_weights(const MpcParams& params);

double stage_cost(const StateVector& x, double u, const MpcParams& params);

/// One linear inequality  sign * w[var] - w[slack] - bound <= 0  over the
/// stacked decision vector (slack < 0 means no slack term).
struct Inequality {
  int var = 0;
  double sign = 1.0;
  int slack = -1;
  double bound = 0.0;
};

/// Primal-dual point of the OCP.
///
/// Decision vector layout: x_0..x_N, then u_0..u_{N-1}, then lane slacks
/// s_1..s_N when the lane constraint was softened.
struct KktPoint {
  std::vector<StateVector> x;
  Eigen::VectorXd u;
  Eigen::VectorXd slack;
  std::vector<StateVector> lam;  // lam[0] on x_hat - x_0, lam[k+1] on f(x_k, u_k) - x_{k+1}
  Eigen::VectorXd mu;            // one per Inequality, >= 0
  std::vector<bool> active_set;
  double kkt_residual = 0.0;
  double complementarity_margin = 0.0;  // min mu over active constraints
  int iterations = 0;
  bool soft = false;
  bool stalled = false;  // accepted at stall_tolerance, see SolverOptions

  int horizon() const { return static_cast<int>(u.size()); }
  double u0() const { return u(0); }
  double max_slack() const { return slack.size() ? slack.maxCoeff() : 0.0; }
};

/// Infinity norms of the Lagrangian gradient, of the equality residual and
/// inequality violation, and of mu_i h_i / max(1, mu_i) together with any
/// negative multiplier.
struct KktResiduals {
  double stationarity = 0.0;
  double feasibility = 0.0;
  double complementarity = 0.0;
  double max() const { return std::max({stationarity, feasibility, complementarity}); }
};

struct SolverOptions {
  double tolerance = 1e-10;
  int max_iterations = 100;
  // The track curvature is piecewise linear, so an optimum whose predicted
  // states sit on a sample point is nonsmooth and the iterates cycle. After
  // stall_window iterations without halving the residual, a point within
  // stall_tolerance is accepted and flagged.
  double stall_tolerance = 1e-3;
  int stall_window = 10;
  double slack_l1 = 1e4;
  double slack_l2 = 1.0;
  double active_tol = 1e-6;
  bool allow_soft = true;
  double stage_constant = 0.0;  // added to every stage cost; never changes the minimizer
};

class MpcConvergenceError : public std::runtime_error {
 public:
  MpcConvergenceError(const std::string& what, KktResiduals last) : std::runtime_error(what), last_(last) {}
  const KktResiduals& last_residuals() const { return last_; }

 private:
  KktResiduals last_;
};

/// The transcribed NLP for a given model, spec and parameters. Provides the
/// pieces needed by the SQP solver and by the KKT sensitivity analysis.
class Ocp {
 public:
  Ocp(const DiscreteModel& model, const OcpSpec& spec, const MpcParams& params, bool soft,
      double slack_l1 = 1e4, double slack_l2 = 1.0);

  int nx() const { return nx_; }
  int horizon() const { return n_; }
  int num_vars() const { return (n_ + 1) * nx_ + n_ + (soft_ ? n_ : 0); }
  int num_eq() const { return (n_ + 1) * nx_; }
  bool soft() const { return soft_; }
  int x_index(int k, int i) const { return k * nx_ + i; }
  int u_index(int k) const { return (n_ + 1) * nx_ + k; }
  int s_index(int k) const { return (n_ + 1) * nx_ + n_ + (k - 1); }  // k = 1..N
  const std::vector<Inequality>& inequalities() const { return ineq_; }
  const DiscreteModel& model() const { return *model_; }
  const OcpSpec& spec() const { return spec_; }
  const MpcParams& params() const { return params_; }
  const StageWeights& weights() const { return weights_; }
  void set_stage_constant(double c) { stage_constant_ = c; }

  Eigen::VectorXd stack(const KktPoint& p) const;
  void unstack(const Eigen::VectorXd& w, KktPoint& p) const;

  double cost(const Eigen::VectorXd& w) const;
  Eigen::VectorXd cost_gradient(const Eigen::VectorXd& w) const;
  /// Constant diagonal of the (quadratic) cost Hessian.
  Eigen::VectorXd cost_hessian_diagonal() const;
  /// d(grad_w cost)/d(theta), dense num_vars x param_dim.
  Eigen::MatrixXd cost_gradient_param_jacobian(const Eigen::VectorXd& w) const;

  /// Equality residual [x_hat - x_0; f(x_k, u_k) - x_{k+1}].
  Eigen::VectorXd equality_residual(const Eigen::VectorXd& w, const StateVector& x0) const;
  double inequality_value(const Inequality& c, const Eigen::VectorXd& w) const;
  Eigen::VectorXd inequality_values(const Eigen::VectorXd& w) const;

  /// Gradient of the Lagrangian J + lam'c + mu'h with respect to w.
  Eigen::VectorXd lagrangian_gradient(const KktPoint& p, const StateVector& x0) const;
  /// Same, with the dynamics Jacobians at p supplied.
  Eigen::VectorXd lagrangian_gradient(const KktPoint& p, const std::vector<StateMatrix>& A,
                                      const std::vector<StateVector>& B) const;
  /// Exact Hessian of the Lagrangian with respect to w.
  Eigen::SparseMatrix<double> lagrangian_hessian(const KktPoint& p) const;
  /// Jacobian of the equality residual with respect to w.
  Eigen::SparseMatrix<double> equality_jacobian(const KktPoint& p) const;

  KktResiduals residuals(const KktPoint& p, const StateVector& x0) const;
  KktResiduals residuals(const KktPoint& p, const StateVector& x0, const std::vector<StateMatrix>& A,
                         const std::vector<StateVector>& B) const;

 private:
  const DiscreteModel* model_;
  OcpSpec spec_;
  MpcParams params_;
  StageWeights weights_;
  int nx_;
  int n_;
  bool soft_;
  double slack_l1_;
  double slack_l2_;
  double stage_constant_ = 0.0;
  std::vector<Inequality> ineq_;
};

/// SQP with Gauss-Newton Hessian (exact for the quadratic cost), a condensed
/// dual active-set QP per iteration, and an l1-merit backtracking line search.
/// The lane constraint is tried hard first and softened with a penalized
/// slack when the QP subproblem becomes infeasible.
KktPoint solve(const DiscreteModel& model, const OcpSpec& spec, const MpcParams& params, const StateVector& x0,
               const KktPoint* warm_start = nullptr, const SolverOptions& options = {});

/// Shifts a previous solution one step forward and re-simulates it from a
/// new initial state; used to warm start receding-horizon solves.
KktPoint shift_warm_start(const KktPoint& previous, const DiscreteModel& model, const StateVector& x0);

KktResiduals kkt_residuals(const KktPoint& point, const DiscreteModel& model, const OcpSpec& spec,
                           const MpcParams& params, const StateVector& x0);

/// CSV with header k,beta,psi_dot,sigma,d,phi[,delta],u; u is empty on the last row.
std::string trajectory_csv(const KktPoint& point);
void write_trajectory_csv(const KktPoint& point, const std::filesystem::path& path);

}  // namespace mimic
