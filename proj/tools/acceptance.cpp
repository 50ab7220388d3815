// Acceptance runner: one PASS/FAIL line per criterion, tolerances fixed below.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "mimic/experiment.hpp"
#include "mimic/io.hpp"
#include "mimic/learning.hpp"
#include "mimic/metrics.hpp"
#include "mimic/model.hpp"
#include "mimic/mpc.hpp"
#include "test_util.hpp"

#ifndef MIMIC_SOURCE_DIR
#define MIMIC_SOURCE_DIR "."
#endif

namespace fs = std::filesystem;
using namespace mimic;

namespace {

constexpr double kSensitivityTol = 1e-4;
constexpr double kSensitivitySeconds = 120.0;
constexpr double kRiccatiTol = 1e-6;
constexpr double kKktTol = 1e-6;
constexpr double kBpttTol = 1e-3;
constexpr double kBpttSeconds = 60.0;
constexpr double kRk4MinOrder = 3.8;
constexpr double kT1Seconds = 600.0;
constexpr double kT3Gain = 0.30;
constexpr double kT3Seconds = 1800.0;
constexpr double kSrrTarget = 24.0;
constexpr double kSrrTol = 1.0;
constexpr double kJerkPeakRelTol = 0.02;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void line(const std::string& name, bool pass, const std::string& detail) {
  if (!pass) ++failures;
  std::cout << fmt::format("{}  {:<14} {}", pass ? "PASS" : "FAIL", name, detail) << std::endl;
}

void info(const std::string& msg) { std::cout << "      " << msg << std::endl; }

void check_sensitivity() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  int instances = 0;
  int excluded = 0;
  for (Variant v : {Variant::Weights, Variant::SetpointAngle, Variant::SetpointRate}) {
    const DiffCheckResult r = diff_check(v, 50, 1, 7);
    worst = std::max(worst, r.max_rel_err);
    instances += r.instances;
    excluded += r.excluded;
  }
  const double t = seconds_since(t0);
  line("sensitivity", worst <= kSensitivityTol && t < kSensitivitySeconds,
       fmt::format("max rel err {:.2e} (tol {:.0e}) over {} instances, {} excluded at margin < 1e-6, {:.1f} s", worst,
                   kSensitivityTol, instances, excluded, t));
}

void check_solver() {
  std::mt19937_64 rng(2024);
  const Track track = build_track(default_track_spec());
  double worst_u0 = 0.0;
  double worst_kkt = 0.0;
  int solved = 0;
  for (int i = 0; i < 20; ++i) {
    const Variant variant = std::array{Variant::Weights, Variant::SetpointAngle, Variant::SetpointRate}[i % 3];
    const ControlMode mode = control_mode(variant);
    const FrenetModel frenet(track, {}, mode, 0.1);
    const StateVector xl = testing::random_state(rng, mode);
    StateMatrix A;
    StateVector B;
    const StateVector f = frenet.linearize(xl, 0.01, A, B);
    const StateVector c = f - A * xl - B * 0.01;
    const AffineModel model(A, B, c);
    OcpSpec spec;
    spec.variant = variant;
    spec.horizon = 7 + i;
    spec.limits = {1e3, 1e3, 1e3, 1e3};
    spec.half_width = 1e3;
    const MpcParams params = testing::random_params(rng, variant);
    const StateVector x0 = testing::random_state(rng, mode);
    SolverOptions opt;
    opt.tolerance = 1e-12;
    const KktPoint p = solve(model, spec, params, x0, nullptr, opt);
    const StageWeights w = stage_weights(params);
    const int nx = state_dim(mode);
    Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(nx, nx);
    Q(sx::d, sx::d) = w.w_d;
    Q(sx::phi, sx::phi) = w.w_phi;
    Eigen::VectorXd r = Eigen::VectorXd::Zero(nx);
    r(sx::d) = w.d_ref;
    r(sx::phi) = w.phi_ref;
    const auto ric = testing::riccati_first_control(A, B, c, Q, r, w.w_u, spec.horizon, x0);
    worst_u0 = std::max(worst_u0, std::abs(p.u0() - ric.u0) / std::max(1.0, std::abs(ric.u0)));
    worst_kkt = std::max(worst_kkt, kkt_residuals(p, model, spec, params, x0).max());
    ++solved;
  }
  // Constrained instances on the nonlinear model.
  for (Variant variant : {Variant::Weights, Variant::SetpointAngle, Variant::SetpointRate}) {
    const FrenetModel model(track, {}, control_mode(variant), 0.1);
    for (int trial = 0; trial < 10; ++trial) {
      OcpSpec spec;
      spec.variant = variant;
      spec.horizon = trial % 2 ? 22 : 7;
      const MpcParams params = trial % 3 ? testing::random_params(rng, variant)
                                         : testing::wide_random_params(rng, variant);
      const StateVector x0 = trial % 3 ? testing::random_state(rng, control_mode(variant))
                                       : testing::wide_random_state(rng, control_mode(variant));
      const KktPoint p = solve(model, spec, params, x0);
      worst_kkt = std::max(worst_kkt, kkt_residuals(p, model, spec, params, x0).max());
      ++solved;
    }
  }
  line("solver", worst_u0 <= kRiccatiTol && worst_kkt <= kKktTol,
       fmt::format("Riccati u0 rel err {:.2e} (tol {:.0e}, 20 instances); max KKT residual {:.2e} (tol {:.0e}, {} "
                   "instances)",
                   worst_u0, kRiccatiTol, worst_kkt, kKktTol, solved));
}

void check_bptt(const std::vector<Lap>& laps, const Track& track) {
  const auto t0 = Clock::now();
  double worst = 0.0;
  const Plant plant{};  // plant = MPC prediction model
  auto loss = [&](const Policy& p, const Lap& lap, const Slice& s) {
    return sc_gradient(p, plant, track, lap, s, ScOptions{}, false).loss;
  };
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    std::mt19937_64 rng(seed);
    const bool nn = seed % 2 == 0;
    const OcpSpec spec =
        OcpSpec::from_lookahead(nn ? 9.72 : 30.0, 13.889, 0.1, nn ? Variant::SetpointRate : Variant::Weights, 3.5);
    Policy p = nn ? Policy::nn_mpc(spec, seed) : Policy::mpc(spec, testing::random_params(rng, Variant::Weights));
    p.solver_options().tolerance = 1e-13;
    const Lap& lap = laps[seed % laps.size()];
    const Slice s{static_cast<int>(seed % laps.size()), static_cast<int>(50 + 60 * seed), 11};  // T = 1 s
    const ScGradient g = sc_gradient(p, plant, track, lap, s, ScOptions{});
    const Eigen::VectorXd base = p.params();
    std::normal_distribution<double> normal;
    for (int dir = 0; dir < 3; ++dir) {
      Eigen::VectorXd v(base.size());
      for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = normal(rng);
      if (dir == 0) v = Eigen::VectorXd::Unit(base.size(), base.size() - 1);
      Policy plus = p;
      Policy minus = p;
      plus.set_params(base + 1e-5 * v);
      minus.set_params(base - 1e-5 * v);
      const double fd = (loss(plus, lap, s) - loss(minus, lap, s)) / 2e-5;
      worst = std::max(worst, testing::rel_err(g.grad.dot(v), fd, 1e-8));
    }
  }
  const double t = seconds_since(t0);
  line("bptt", worst <= kBpttTol && t < kBpttSeconds,
       fmt::format("max rel err {:.2e} (tol {:.0e}) over 10 seeds x 3 directions, T = 1 s, {:.1f} s", worst, kBpttTol,
                   t));
}

void check_rk4() {
  double worst = 1e9;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (double kappa : {1.0 / 60.0, -1.0 / 40.0, 1.0 / 120.0}) {
    const Track track = testing::constant_curvature_track(kappa);
    for (ControlMode mode : {ControlMode::SteeringAngle, ControlMode::SteeringRate}) {
      StateVector x0(state_dim(mode));
      x0(sx::beta) = 0.02 * u(rng);
      x0(sx::psi_dot) = 0.15 * u(rng);
      x0(sx::sigma) = 10.0;
      x0(sx::d) = 0.4 * u(rng);
      x0(sx::phi) = 0.05 * u(rng);
      if (mode == ControlMode::SteeringRate) x0(sx::delta) = 0.05 * u(rng);
      const double uc = mode == ControlMode::SteeringRate ? 0.1 : 0.05;
      auto integrate = [&](double dt) {
        StateVector x = x0;
        const int steps = static_cast<int>(std::lround(2.0 / dt));
        for (int k = 0; k < steps; ++k) x = rk4_advance<double>(x, uc, mode, track, VehicleParams{}, dt);
        return x;
      };
      const StateVector ref = integrate(0.1 / 64.0);
      // Least-squares slope of log error against log dt.
      const double e1 = std::log2((integrate(0.1) - ref).norm());
      const double e2 = std::log2((integrate(0.05) - ref).norm());
      const double e3 = std::log2((integrate(0.025) - ref).norm());
      const double order = (e1 - e3) / 2.0;
      info(fmt::format("kappa {:+.4f} {} order {:.2f} (pairwise {:.2f}, {:.2f})", kappa,
                       mode == ControlMode::SteeringRate ? "rate " : "angle", order, e1 - e2, e2 - e3));
      worst = std::min(worst, order);
    }
  }
  line("rk4-order", worst >= kRk4MinOrder,
       fmt::format("min fitted order {:.2f} (>= {:.1f}) over dt 0.1, 0.05, 0.025 s, 6 curved instances", worst,
                   kRk4MinOrder));
}

void check_horizon() {
  const int n = horizon_steps(9.72, 50.0 / 3.6, 0.1);
  const int n30 = horizon_steps(30.0, 50.0 / 3.6, 0.1);
  line("horizon", n == 7, fmt::format("d_la 9.72 m at 50 km/h, dt 0.1 s -> N = {} (expected 7); d_la 30 m -> N = {}", n,
                                      n30));
}

void check_metrics() {
  constexpr double pi = std::numbers::pi;
  std::vector<double> hw;
  for (int i = 0; i < 600; ++i) hw.push_back(0.2 * std::sin(2 * pi * 0.2 * i * 0.1));
  const double rate = srr_hand_wheel(hw, 0.1);

  std::vector<double> a;
  for (int i = 0; i < 200; ++i) a.push_back(std::sin(2 * pi * 0.5 * i * 0.1));
  double peak = 0.0;
  for (double v : lateral_jerk(a, 0.1)) peak = std::max(peak, std::abs(v));

  ReferenceStats st;
  st.track_length = 50.0;
  for (int b = 0; b < 50; ++b) {
    st.mean.push_back(0.2 * std::cos(b / 7.0));
    st.var.push_back(1.0 / (2.0 * pi));
    st.interpolated.push_back(false);
  }
  std::vector<double> sigma;
  std::vector<double> d;
  for (double s = 0.0; s < 120.0; s += 1.389) {
    sigma.push_back(s);
    d.push_back(st.mean_at(s));
  }
  const double cl = cl_likelihood(sigma, d, st);
  const bool pass = std::abs(rate - kSrrTarget) <= kSrrTol && std::abs(peak - pi) <= kJerkPeakRelTol * pi && cl == 1.0;
  line("metrics", pass,
       fmt::format("SRR sinusoid {:.2f}/min (24 +- 1); jerk peak {:.4f} m/s^3 (pi +- 2%); CL at peak density {}", rate,
                   peak, format_double(cl)));
}

struct TrendRun {
  RunConfig config;
  MetricsReport report;
  double seconds = 0.0;
};

TrendRun run_config(const RunConfig& cfg, const Track& track, const std::vector<Lap>& laps,
                    const ReferenceStats& stats, const fs::path& work) {
  const auto t0 = Clock::now();
  const TrainResult result = train(cfg, track, laps);
  const Plant plant{cfg.plant_params(), cfg.dt};
  const Evaluation ev = evaluate(result.policy, to_string(cfg.algorithm), plant, track, laps, stats, cfg.eval_laps);
  TrendRun out{cfg, ev.report, seconds_since(t0)};
  const fs::path dir = work / cfg.id;
  write_training_artifacts(dir, cfg, result, "mimic_acceptance");
  write_evaluation_artifacts(dir, ev, stats, cfg.dt);
  info(fmt::format("{:<18} CL {:.3f}  off-road {:4d}  d {:+.2f} +- {:.2f}  {:.0f} s{}", cfg.id, ev.report.cl_likelihood,
                   ev.report.offroad, ev.report.d.mean, ev.report.d.std, out.seconds,
                   ev.rollout.truncated ? "  (" + ev.rollout.reason + ")" : ""));
  return out;
}

void check_trends(const fs::path& configs, const fs::path& work, const Track& track, const std::vector<Lap>& laps,
                  const ReferenceStats& stats) {
  auto load = [&](const std::string& name) { return load_run_config(configs / (name + ".toml")); };
  {
    const Policy expert = expert_policy(track, parse_demo_config(read_text_file(configs / "demos.toml")).profile);
    const Evaluation ev = evaluate(expert, "expert", Plant{}, track, laps, stats);
    write_evaluation_artifacts(work / "expert", ev, stats, 0.1);
    info(fmt::format("{:<18} CL {:.3f}  off-road {:4d}  d {:+.2f} +- {:.2f}", "expert", ev.report.cl_likelihood,
                     ev.report.offroad, ev.report.d.mean, ev.report.d.std));
  }

  const TrendRun nn_bc = run_config(load("nn_bc"), track, laps, stats, work);
  const TrendRun mpc_bc = run_config(load("mpc_bc"), track, laps, stats, work);
  const TrendRun sl30 = run_config(load("nn_mpc_sl_30"), track, laps, stats, work);
  const double t1 = nn_bc.seconds + mpc_bc.seconds + sl30.seconds;
  line("T1", nn_bc.report.offroad > 0 && mpc_bc.report.offroad == 0 && sl30.report.offroad == 0 && t1 < kT1Seconds,
       fmt::format("off-road NN BC {} (> 0), MPC BC {} (= 0), NN_MPC SL d_la 30 {} (= 0); {:.0f} s (< {:.0f})",
                   nn_bc.report.offroad, mpc_bc.report.offroad, sl30.report.offroad, t1, kT1Seconds));

  const TrendRun sl972 = run_config(load("nn_mpc_sl_972"), track, laps, stats, work);
  const double drop = 1.0 - sl972.report.cl_likelihood / sl30.report.cl_likelihood;
  line("T2", sl972.report.cl_likelihood < sl30.report.cl_likelihood,
       fmt::format("CL NN_MPC SL d_la 9.72 {:.3f} < d_la 30 {:.3f} (drop {:.0f}%)", sl972.report.cl_likelihood,
                   sl30.report.cl_likelihood, 100.0 * drop));

  const TrendRun slsc = run_config(load("nn_mpc_sl_sc_972"), track, laps, stats, work);
  const double gain = slsc.report.cl_likelihood / sl972.report.cl_likelihood - 1.0;
  line("T3", gain >= kT3Gain && slsc.report.offroad == 0 && slsc.seconds < kT3Seconds,
       fmt::format("CL SL+SC {:.3f} vs SL {:.3f}: {:+.0f}% (>= +{:.0f}%), off-road {} (= 0); {:.0f} s (< {:.0f})",
                   slsc.report.cl_likelihood, sl972.report.cl_likelihood, 100.0 * gain, 100.0 * kT3Gain,
                   slsc.report.offroad, slsc.seconds, kT3Seconds));

  const TrendRun sc = run_config(load("nn_mpc_sc_972"), track, laps, stats, work);
  const bool same_budget = sc.config.sc.epochs == slsc.config.sc.epochs;
  line("T4", same_budget && sc.report.cl_likelihood < slsc.report.cl_likelihood,
       fmt::format("CL SC from random init {:.3f} < SL+SC {:.3f}, both {} SC epochs{}", sc.report.cl_likelihood,
                   slsc.report.cl_likelihood, sc.config.sc.epochs, same_budget ? "" : " (budgets differ)"));
}

void check_determinism(const fs::path& configs, const fs::path& work, const Track& track,
                       const std::vector<Lap>& laps, const ReferenceStats& stats) {
  RunConfig cfg = load_run_config(configs / "nn_mpc_sl_sc_972.toml");
  cfg.id = "determinism";
  cfg.ol.epochs = 20;
  cfg.sc.epochs = 1;
  std::string bytes[2];
  for (int i = 0; i < 2; ++i) {
    const TrainResult result = train(cfg, track, laps);
    const Evaluation ev = evaluate(result.policy, to_string(cfg.algorithm), Plant{cfg.plant_params(), cfg.dt}, track,
                                   laps, stats, cfg.eval_laps);
    const fs::path dir = work / ("determinism_" + std::to_string(i));
    write_evaluation_artifacts(dir, ev, stats, cfg.dt);
    bytes[i] = read_text_file(dir / "metrics.json");
  }
  line("determinism", bytes[0] == bytes[1],
       fmt::format("two sl+sc train+evaluate runs with seed {}: metrics.json {} ({} bytes)", *cfg.seed,
                   bytes[0] == bytes[1] ? "byte-identical" : "differs", bytes[0].size()));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria of the lane-keeping imitation toolkit"};
  std::string work = "runs";
  std::string configs = std::string(MIMIC_SOURCE_DIR) + "/configs";
  std::vector<std::string> only;
  app.add_option("--work", work, "Directory for run artifacts");
  app.add_option("--configs", configs, "Experiment config directory");
  app.add_option("--only", only, "Subset: sensitivity solver bptt rk4-order horizon trends metrics determinism");
  CLI11_PARSE(app, argc, argv);
  const std::set<std::string> selected(only.begin(), only.end());
  auto want = [&](const std::string& name) { return selected.empty() || selected.count(name); };

  try {
    const Track track = build_track(default_track_spec());
    std::vector<Lap> laps;
    ReferenceStats stats;
    if (want("bptt") || want("trends") || want("determinism")) {
      const DemoConfig dc = parse_demo_config(read_text_file(fs::path(configs) / "demos.toml"));
      laps = generate_expert_laps(track, dc.profile, dc.laps, dc.vehicle, dc.dt);
      stats = reference_stats(laps, track);
    }
    if (want("sensitivity")) check_sensitivity();
    if (want("solver")) check_solver();
    if (want("bptt")) check_bptt(laps, track);
    if (want("rk4-order")) check_rk4();
    if (want("horizon")) check_horizon();
    if (want("trends")) check_trends(configs, work, track, laps, stats);
    if (want("metrics")) check_metrics();
    if (want("determinism")) check_determinism(configs, work, track, laps, stats);
  } catch (const std::exception& e) {
    std::cout << "FAIL  runner         " << e.what() << std::endl;
    return 2;
  }
  std::cout << (failures ? fmt::format("{} criteria failed", failures) : std::string("all criteria passed"))
            << std::endl;
  return failures ? 1 : 0;
}
