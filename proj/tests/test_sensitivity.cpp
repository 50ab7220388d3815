#include <cmath>
#include <random>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "mimic/sensitivity.hpp"
#include "test_util.hpp"

namespace mimic {
namespace {

using testing::default_track;

Eigen::SparseMatrix<double> sparse(const Eigen::MatrixXd& d) { return d.sparseView(); }

// min_u (u - theta)^2: F = 2(u - theta), dF/dz = 2, dF/dtheta = -2.
KktSystem scalar_system(double u, double theta, bool bound_active) {
  KktSystem sys;
  sys.hessian = sparse(Eigen::MatrixXd::Constant(1, 1, 2.0));
  sys.eq_jacobian.resize(0, 1);
  sys.active_jacobian = bound_active ? sparse(Eigen::MatrixXd::Ones(1, 1)) : Eigen::SparseMatrix<double>(0, 1);
  sys.grad_param_jacobian = Eigen::MatrixXd::Constant(1, 1, -2.0);
  sys.eq_x0_jacobian.resize(0, 0);
  sys.residual = Eigen::VectorXd::Constant(1, 2.0 * (u - theta));
  if (bound_active) sys.active = {0};
  return sys;
}

TEST(KktSystem, ScalarUnconstrained) {
  const KktSystem sys = scalar_system(0.3, 0.5, false);
  EXPECT_DOUBLE_EQ(sys.residual(0), -0.4);
  const Eigen::MatrixXd M = sys.matrix();
  ASSERT_EQ(M.rows(), 1);
  EXPECT_EQ(M(0, 0), 2.0);
  const Sensitivity s(sys);
  EXPECT_NEAR(s.adjoint_wrt_params(Eigen::VectorXd::Ones(1))(0), 1.0, 1e-15);
}

TEST(KktSystem, ScalarActiveBoundPinsSolution) {
  const KktSystem sys = scalar_system(1.0, 2.0, true);
  const Eigen::MatrixXd M = sys.matrix();
  ASSERT_EQ(M.rows(), 2);
  EXPECT_NE(M.determinant(), 0.0);
  const Sensitivity s(sys);
  EXPECT_NEAR(s.adjoint_wrt_params(Eigen::VectorXd::Ones(1))(0), 0.0, 1e-15);
}

TEST(KktSystem, DetectsLicqViolation) {
  KktSystem sys = scalar_system(1.0, 2.0, true);
  sys.active_jacobian = sparse(Eigen::MatrixXd::Ones(2, 1));
  sys.active = {0, 1};
  try {
    Sensitivity s(sys);
    FAIL();
  } catch (const SensitivityError& e) {
    EXPECT_EQ(e.kind(), SensitivityError::Kind::LicqViolated);
  }
}

TEST(KktSystem, StrictModeRejectsWeakComplementarity) {
  KktSystem sys = scalar_system(1.0, 1.0, true);
  sys.weak = true;
  SensitivityOptions strict;
  strict.strict = true;
  EXPECT_THROW(Sensitivity(sys, strict), SensitivityError);
  EXPECT_NO_THROW(Sensitivity(sys, {}));
}

// Oracle: one Newton step on the saddle-point system solves an equality
// constrained QP exactly.
TEST(KktSystem, LqrSaddlePointReproducesSolver) {
  std::mt19937_64 rng(1);
  const FrenetModel frenet(default_track(), {}, ControlMode::SteeringAngle, 0.1);
  const StateVector xl = testing::random_state(rng, ControlMode::SteeringAngle);
  StateMatrix A;
  StateVector B;
  const StateVector f = frenet.linearize(xl, 0.0, A, B);
  const AffineModel model(A, B, f - A * xl);
  OcpSpec spec;
  spec.horizon = 9;
  spec.limits = {1e3, 1e3, 1e3, 1e3};
  spec.half_width = 1e3;
  const MpcParams params = testing::random_params(rng, Variant::Weights);
  const StateVector x0 = testing::random_state(rng, ControlMode::SteeringAngle);
  SolverOptions opt;
  opt.tolerance = 1e-12;
  const KktPoint sol = solve(model, spec, params, x0, nullptr, opt);

  const Ocp ocp(model, spec, params, false);
  KktPoint start;
  start.x.assign(spec.horizon + 1, StateVector::Zero(5));
  start.u = Eigen::VectorXd::Zero(spec.horizon);
  start.lam.assign(spec.horizon + 1, StateVector::Zero(5));
  start.mu = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ocp.inequalities().size()));
  const KktSystem sys = kkt_system(ocp, start, x0);
  ASSERT_EQ(sys.num_active(), 0);
  const Eigen::MatrixXd M = sys.matrix();
  const Eigen::VectorXd dz = M.fullPivLu().solve(-sys.residual);
  const Eigen::VectorXd w = dz.head(ocp.num_vars());
  EXPECT_LE((w - ocp.stack(sol)).lpNorm<Eigen::Infinity>(), 1e-8);
  for (int k = 0; k <= spec.horizon; ++k) {
    EXPECT_LE((dz.segment(ocp.num_vars() + 5 * k, 5) - sol.lam[k]).lpNorm<Eigen::Infinity>(), 1e-8);
  }
}

struct Instance {
  std::unique_ptr<FrenetModel> model;
  OcpSpec spec;
  MpcParams params;
  StateVector x0;
  KktPoint point;
};

Instance make_instance(std::mt19937_64& rng, Variant variant, int horizon, bool wide) {
  Instance in;
  in.model = std::make_unique<FrenetModel>(default_track(), VehicleParams{}, control_mode(variant), 0.1);
  in.spec.variant = variant;
  in.spec.horizon = horizon;
  in.params = wide ? testing::wide_random_params(rng, variant) : testing::random_params(rng, variant);
  in.x0 = wide ? testing::wide_random_state(rng, control_mode(variant)) : testing::random_state(rng, control_mode(variant));
  SolverOptions opt;
  opt.tolerance = 1e-13;
  in.point = solve(*in.model, in.spec, in.params, in.x0, nullptr, opt);
  return in;
}

// Oracle: central finite differences that re-solve the NLP at theta +- eps.
TEST(Adjoint, WrtParamsMatchesFiniteDifferences) {
  std::mt19937_64 rng(101);
  for (Variant variant : {Variant::Weights, Variant::SetpointAngle, Variant::SetpointRate}) {
    int checked = 0;
    int constrained = 0;
    for (int trial = 0; trial < 12; ++trial) {
      const Instance in = make_instance(rng, variant, 7, trial % 2 == 1);
      if (in.point.complementarity_margin < 1e-6) continue;
      const Ocp ocp(*in.model, in.spec, in.params, in.point.soft);
      const Sensitivity s(kkt_system(ocp, in.point, in.x0));
      constrained += s.system().num_active() > 0;
      const double seed = trial % 3 ? 1.0 : -1.0;
      const Eigen::VectorXd adj = s.adjoint_wrt_params(u0_seed(ocp, seed));
      const Eigen::VectorXd fd = seed * testing::fd_u0_wrt_theta(*in.model, in.spec, in.params, in.x0);
      EXPECT_LE(testing::vector_rel_err(adj, fd), 1e-4) << to_string(variant) << " trial " << trial;
      ++checked;
    }
    EXPECT_GE(checked, 8);
    EXPECT_GE(constrained, 1) << to_string(variant);
  }
}

TEST(Adjoint, WrtInitialStateMatchesFiniteDifferences) {
  std::mt19937_64 rng(202);
  for (Variant variant : {Variant::Weights, Variant::SetpointRate}) {
    for (int trial = 0; trial < 6; ++trial) {
      const Instance in = make_instance(rng, variant, 7, trial % 2 == 1);
      if (in.point.complementarity_margin < 1e-6) continue;
      const Ocp ocp(*in.model, in.spec, in.params, in.point.soft);
      const Sensitivity s(kkt_system(ocp, in.point, in.x0));
      const Eigen::VectorXd adj = s.adjoint_wrt_initial_state(u0_seed(ocp));
      const Eigen::VectorXd fd = testing::fd_u0_wrt_x0(*in.model, in.spec, in.params, in.x0);
      EXPECT_LE(testing::vector_rel_err(adj, fd), 1e-4) << to_string(variant) << " trial " << trial;
    }
  }
}

// Oracle: Riccati feedback gain on the same affine model.
TEST(Adjoint, WrtInitialStateMatchesRiccatiGain) {
  std::mt19937_64 rng(7);
  for (Variant variant : {Variant::Weights, Variant::SetpointRate}) {
    const ControlMode mode = control_mode(variant);
    const FrenetModel frenet(default_track(), {}, mode, 0.1);
    const StateVector xl = testing::random_state(rng, mode);
    StateMatrix A;
    StateVector B;
    const StateVector f = frenet.linearize(xl, 0.0, A, B);
    const AffineModel model(A, B, f - A * xl);
    OcpSpec spec;
    spec.variant = variant;
    spec.horizon = 12;
    spec.limits = {1e3, 1e3, 1e3, 1e3};
    spec.half_width = 1e3;
    const MpcParams params = testing::random_params(rng, variant);
    const StateVector x0 = testing::random_state(rng, mode);
    const KktPoint p = solve(model, spec, params, x0);
    const Ocp ocp(model, spec, params, false);
    const Sensitivity s(kkt_system(ocp, p, x0));
    const Eigen::VectorXd grad = s.adjoint_wrt_initial_state(u0_seed(ocp));

    const StageWeights w = stage_weights(params);
    Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(x0.size(), x0.size());
    Q(sx::d, sx::d) = w.w_d;
    Q(sx::phi, sx::phi) = w.w_phi;
    Eigen::VectorXd r = Eigen::VectorXd::Zero(x0.size());
    r(sx::d) = w.d_ref;
    r(sx::phi) = w.phi_ref;
    const auto ric = testing::riccati_first_control(A, B, f - A * xl, Q, r, w.w_u, spec.horizon, x0);
    for (Eigen::Index i = 0; i < x0.size(); ++i) {
      EXPECT_NEAR(grad(i), -ric.K(i), 1e-6 * std::max(1.0, std::abs(ric.K(i)))) << i;
    }
  }
}

TEST(Adjoint, StraightRoadIgnoresSigma) {
  const Track track = testing::straight_track();
  const FrenetModel model(track, {}, ControlMode::SteeringAngle, 0.1);
  OcpSpec spec;
  spec.horizon = 7;
  MpcParams params = MpcParams::zeros(Variant::Weights);
  params.theta << 0.2, -0.1, 0.3, 0.4;
  StateVector x0(5);
  x0 << 0.01, 0.02, 300.0, -0.2, 0.03;
  const KktPoint p = solve(model, spec, params, x0);
  const Ocp ocp(model, spec, params, false);
  const Sensitivity s(kkt_system(ocp, p, x0));
  EXPECT_NEAR(s.adjoint_wrt_initial_state(u0_seed(ocp))(sx::sigma), 0.0, 1e-14);
}

// Oracle: J assembled column by column from independent tangent solves.
TEST(Adjoint, TransposeConsistency) {
  std::mt19937_64 rng(303);
  std::normal_distribution<double> g(0.0, 1.0);
  for (Variant variant : {Variant::Weights, Variant::SetpointAngle, Variant::SetpointRate}) {
    const Instance in = make_instance(rng, variant, 2, false);
    const Ocp ocp(*in.model, in.spec, in.params, in.point.soft);
    const Sensitivity s(kkt_system(ocp, in.point, in.x0));
    const int n = ocp.num_vars();
    const int nt = param_dim(variant);
    Eigen::MatrixXd J(n, nt), Jx(n, ocp.nx());
    for (int j = 0; j < nt; ++j) J.col(j) = s.tangent_params(Eigen::VectorXd::Unit(nt, j));
    for (int j = 0; j < ocp.nx(); ++j) Jx.col(j) = s.tangent_initial_state(Eigen::VectorXd::Unit(ocp.nx(), j));
    for (int r = 0; r < 5; ++r) {
      const Eigen::VectorXd w = Eigen::VectorXd::NullaryExpr(n, [&] { return g(rng); });
      const Eigen::VectorXd v = Eigen::VectorXd::NullaryExpr(nt, [&] { return g(rng); });
      const Eigen::VectorXd vx = Eigen::VectorXd::NullaryExpr(ocp.nx(), [&] { return g(rng); });
      const AdjointResult adj = s.adjoint(w);
      EXPECT_NEAR(w.dot(J * v), adj.theta.dot(v), 1e-10 * std::max(1.0, std::abs(w.dot(J * v))));
      EXPECT_NEAR(w.dot(Jx * vx), adj.x0.dot(vx), 1e-10 * std::max(1.0, std::abs(w.dot(Jx * vx))));
    }
  }
}

// Chain rule through the log mapping: d/d(log W) = W d/dW.
TEST(Adjoint, LogWeightChainRule) {
  std::mt19937_64 rng(404);
  const Instance in = make_instance(rng, Variant::Weights, 7, false);
  const Ocp ocp(*in.model, in.spec, in.params, false);
  const Sensitivity s(kkt_system(ocp, in.point, in.x0));
  const Eigen::VectorXd adj = s.adjoint_wrt_params(u0_seed(ocp));
  SolverOptions opt;
  opt.tolerance = 1e-13;
  for (int j = 0; j < 3; ++j) {
    const double W = std::exp(in.params.theta(j));
    const double eps = 1e-5 * W;
    MpcParams plus = in.params, minus = in.params;
    plus.theta(j) = std::log(W + eps);
    minus.theta(j) = std::log(W - eps);
    const double dW = (solve(*in.model, in.spec, plus, in.x0, nullptr, opt).u0() -
                       solve(*in.model, in.spec, minus, in.x0, nullptr, opt).u0()) /
                      (2.0 * eps);
    EXPECT_NEAR(adj(j), W * dW, 1e-5 * std::max(1e-3, std::abs(adj(j)))) << j;
  }
}

TEST(Adjoint, ActiveSetStableUnderTinyPerturbation) {
  std::mt19937_64 rng(505);
  int stable_checked = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const Instance in = make_instance(rng, Variant::SetpointAngle, 7, true);
    if (in.point.complementarity_margin <= 1e-4) continue;
    MpcParams p = in.params;
    p.theta.array() += 1e-7;
    const KktPoint q = solve(*in.model, in.spec, p, in.x0, nullptr, {});
    ASSERT_EQ(q.soft, in.point.soft);
    EXPECT_EQ(q.active_set, in.point.active_set) << trial;
    ++stable_checked;
  }
  EXPECT_GE(stable_checked, 10);
}

TEST(Adjoint, RejectsWrongSeedDimension) {
  std::mt19937_64 rng(606);
  const Instance in = make_instance(rng, Variant::Weights, 3, false);
  const Ocp ocp(*in.model, in.spec, in.params, false);
  const Sensitivity s(kkt_system(ocp, in.point, in.x0));
  EXPECT_THROW(s.adjoint(Eigen::VectorXd::Zero(3)), InvalidArgument);
}

}  // namespace
}  // namespace mimic
