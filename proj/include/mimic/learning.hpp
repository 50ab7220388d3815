#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "mimic/metrics.hpp"
#include "mimic/neural.hpp"
#include "mimic/policies.hpp"
#include "mimic/track.hpp"
#include "mimic/vehicle.hpp"

namespace mimic {

/// One recorded lap at a uniform time step. States always carry the steering
/// angle, so angle-mode consumers read the first five entries and use delta as
/// the action, rate-mode consumers use all six and delta_rate.
struct Lap {
  int id = 0;
  double dt = 0.1;
  std::vector<StateVector> states;
  std::vector<double> delta_rate;

  int size() const { return static_cast<int>(states.size()); }
  double duration() const { return size() * dt; }
  StateVector state(int t, ControlMode mode) const;
  double action(int t, ControlMode mode) const;
  LapTrace trace() const;
};

/// CSV t_s,beta,psi_dot,sigma,d,phi,delta,delta_rate.
std::string lap_csv(const Lap& lap);
Lap parse_lap_csv(const std::filesystem::path& path, int id);

struct ExpertProfile {
  double offset_mean = -0.54;   // m
  double offset_std = 0.33;     // m, stationary std of the setpoint noise
  double time_constant = 12.0;  // s, low-pass of the setpoint noise
  double log_w_rate = 3.8;      // steering-rate weight of the expert OCP
  double lookahead = 30.0;      // m
  std::uint64_t seed = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static ExpertProfile from_json(const nlohmann::json& j);
};

class ExpertOffroadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// OCP of the synthetic expert: SetpointRate at the profile lookahead. The
/// expert is not constraint-aware, so the lane bound is relaxed to three lane
/// widths; lane exits are detected on the plant instead.
OcpSpec expert_ocp_spec(const Track& track, const ExpertProfile& profile, const VehicleParams& plant = {},
                        double dt = 0.1);

/// The expert without setpoint noise, as an MPC policy with
/// theta = (offset_mean, 0, log_w_rate).
Policy expert_policy(const Track& track, const ExpertProfile& profile, const VehicleParams& plant = {},
                     double dt = 0.1);

/// Synthetic expert: rate-mode MPC tracking d_ref = offset + low-pass noise,
/// phi_ref = 0, driven on the plant. One unrecorded lap settles the start
/// transient, then `n_laps` consecutive laps are recorded.
std::vector<Lap> generate_expert_laps(const Track& track, const ExpertProfile& profile, int n_laps,
                                      const VehicleParams& plant = {}, double dt = 0.1);

struct DemoManifest {
  std::uint64_t track_hash = 0;
  double vx = 0.0;
  double dt = 0.1;
  ExpertProfile profile;
  std::uint64_t seed = 0;
  std::vector<std::string> files;

  nlohmann::json to_json() const;
  static DemoManifest from_json(const nlohmann::json& j);
};

/// Writes lap_XX.csv files and manifest.json.
void write_demos(const std::filesystem::path& dir, const std::vector<Lap>& laps, const DemoManifest& manifest);
std::vector<Lap> read_demos(const std::filesystem::path& dir, DemoManifest* manifest = nullptr);

/// Contiguous window [start, start + length) of one lap.
struct Slice {
  int lap = 0;
  int start = 0;
  int length = 0;
};

struct SlicedDataset {
  std::vector<std::vector<Slice>> train;
  std::vector<Slice> validation;

  std::size_t num_slices() const;
};

/// Number of T-second windows starting every T/2 seconds.
int slice_count(int lap_samples, int slice_samples);

/// Windows of `seconds` with T/2 overlap, shuffled with `seed`, cut into
/// batches of `batch_size`; the last batch is held out for validation.
SlicedDataset slice_dataset(const std::vector<Lap>& laps, double seconds, int batch_size, std::uint64_t seed);

struct Plant {
  VehicleParams params;
  double dt = 0.1;
};

struct Rollout {
  std::vector<StateVector> states;  // steps + 1 when complete
  std::vector<double> actions;
  std::vector<PolicyAux> aux;       // filled when requested
  int planned_steps = 0;
  bool truncated = false;
  std::string reason;

  std::vector<double> d() const;
  std::vector<double> sigma() const;
  /// Road-wheel steering angle per state (the action in angle mode).
  std::vector<double> steering() const;
};

/// Truncates (flag and reason set) on the first exception from the policy or
/// the plant, or once |phi| reaches pi/2 where the Frenet frame stops being
/// meaningful.
Rollout rollout(const Policy& policy, const Plant& plant, const Track& track, const StateVector& s0, int steps,
                bool keep_aux = false);

/// Worker count, capped by MIMIC_MPC_THREADS (default 1).
int worker_count();

/// Runs fn(i) for i in [0, n) on up to worker_count() threads.
void parallel_for(int n, const std::function<void(int)>& fn);

/// Trainer state: one Adam per parameter group (network, MPC).
struct Optimizer {
  Adam net;
  Adam mpc;
  double clip_norm = 0.0;  // 0 disables clipping

  Optimizer(double lr_net = 1e-4, double lr_mpc = 1e-2) : net(lr_net), mpc(lr_mpc) {}
  /// Applies one update; returns the (pre-clip) gradient norm.
  double step(Policy& policy, Eigen::VectorXd grad);
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double validation_loss = 0.0;
  int samples = 0;
  int skipped = 0;
  int weak = 0;
};

struct TrainOptions {
  int epochs = 25;
  double lr_net = 1e-4;
  double lr_mpc = 1e-2;
  /// Called after each epoch; returning false stops training.
  std::function<bool(const EpochStats&)> on_epoch;
};

/// Mean squared action error over the samples of each batch.
std::vector<EpochStats> train_bc(Policy& policy, const std::vector<Lap>& laps, const SlicedDataset& data,
                                 const Track& track, const TrainOptions& options);

/// Setpoint regression g(chi*_t) -> (d*_{t+N}, phi*_{t+N}) on the network only.
std::vector<EpochStats> train_sl(Policy& policy, const std::vector<Lap>& laps, const SlicedDataset& data,
                                 const Track& track, const TrainOptions& options);

struct ScOptions {
  int epochs = 10;
  double lr_net = 1e-4;
  double lr_mpc = 1e-2;
  double clip_norm = 10.0;
  bool full_state_loss = false;  // default: lateral deviation only
  double ol_weight = 0.0;        // weight of an added BC term, 0 = pure state cloning
  std::function<bool(const EpochStats&)> on_epoch;
};

struct ScGradient {
  double loss = 0.0;
  Eigen::VectorXd grad;
  int steps = 0;
  bool truncated = false;
  int weak = 0;
};

/// s_{t+1} ~ A_t s_t + B_t a_t along a rollout.
struct StepLinearization {
  Eigen::MatrixXd A;
  Eigen::VectorXd B;
};

/// Policy cotangents of a_t: (dL/dparams, dL/ds_t) for a given dL/da_t.
using ActionVjp = std::function<PolicyGradient(int t, double a_bar)>;

/// Reverse sweep over T steps. loss_grad[t] is dL/ds_t for t = 0..T (entry 0
/// is ignored, s_0 is fixed). Returns dL/dparams; `weak` counts flagged steps.
Eigen::VectorXd bptt(const std::vector<StepLinearization>& steps, const std::vector<Eigen::VectorXd>& loss_grad,
                     int num_params, const ActionVjp& vjp, int* weak = nullptr);

/// Loss sum_t w . (s_t - s*_t)^2 / steps of one rollout from the slice start,
/// and its BPTT gradient through the MPC prediction model.
ScGradient sc_gradient(const Policy& policy, const Plant& plant, const Track& track, const Lap& lap, const Slice& slice,
                       const ScOptions& options, bool with_gradient = true);

/// Closed-loop state cloning; batches are groups of trajectories.
std::vector<EpochStats> train_sc(Policy& policy, const Plant& plant, const std::vector<Lap>& laps,
                                 const SlicedDataset& data, const Track& track, const ScOptions& options);

/// |pi(s*_t) - a*_t| over the samples of the given slices.
MeanStd policy_ol_error(const Policy& policy, const std::vector<Lap>& laps, const std::vector<Slice>& slices,
                        const Track& track);

}  // namespace mimic
