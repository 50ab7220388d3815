#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mimic/learning.hpp"
#include "mimic/metrics.hpp"
#include "mimic/mpc.hpp"
#include "mimic/policies.hpp"
#include "mimic/track.hpp"
#include "mimic/vehicle.hpp"

namespace mimic {

/// Bad or inconsistent run configuration; the message names the key.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training aborted because too many samples hit solver failures.
class SolverFailureError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Algorithm { None, BC, SL, SC, BC_SC, SL_SC };

std::string to_string(Algorithm a);
Algorithm parse_algorithm(const std::string& name);
bool has_open_loop_stage(Algorithm a);
bool has_closed_loop_stage(Algorithm a);

enum class PlantKind { Bicycle, PerturbedBicycle };

std::string to_string(PlantKind p);
PlantKind parse_plant(const std::string& name);

struct OpenLoopConfig {
  int epochs = 25;
  int batch_size = 64;
  double slice_s = 2.0;
  double lr_net = 1e-4;
  double lr_mpc = 1e-2;
};

struct ClosedLoopConfig {
  int epochs = 10;
  int batch_size = 10;
  double slice_s = 10.0;
  double lr_net = 1e-4;
  double lr_mpc = 1e-2;
  double clip_norm = 10.0;
  bool full_state_loss = false;
  double ol_weight = 0.0;
  bool keep_best = false;  // restore the epoch with the lowest validation loss
};

struct RunConfig {
  std::string id;
  std::optional<std::uint64_t> seed;
  PolicyKind policy = PolicyKind::NN_MPC;
  Variant variant = Variant::SetpointRate;
  Algorithm algorithm = Algorithm::SL;
  double lookahead = 30.0;  // m
  int horizon = 0;          // 0: derived from the lookahead
  double dt = 0.1;
  PlantKind plant = PlantKind::Bicycle;
  std::string track;            // track.csv; empty selects the built-in track
  std::string demos;            // demo directory
  std::string init_checkpoint;  // warm start instead of a fresh policy
  OpenLoopConfig ol;
  ClosedLoopConfig sc;
  int eval_laps = 1;
  int max_failure_percent = 5;
  VehicleParams vehicle;
  BoxLimits limits;

  /// Chain valid for the policy kind, sizes positive, seed present.
  void validate() const;
  OcpSpec ocp_spec(const Track& track) const;
  VehicleParams plant_params() const;
  std::string to_toml() const;
};

/// Parses the TOML run config. Unknown keys are rejected.
RunConfig parse_run_config(const std::string& text, const std::string& origin = "config");
RunConfig load_run_config(const std::filesystem::path& path);

/// Expert demonstration settings: top-level laps, dt_s, plant and an
/// [expert] table with the profile.
struct DemoConfig {
  ExpertProfile profile;
  int laps = 10;
  double dt = 0.1;
  PlantKind plant = PlantKind::Bicycle;
  VehicleParams vehicle;
};

DemoConfig parse_demo_config(const std::string& text, const std::string& origin = "config");

/// Derived seeds of a run, drawn in a fixed order from one generator.
struct RunSeeds {
  std::uint64_t network = 0;
  std::uint64_t ol_shuffle = 0;
  std::uint64_t sc_shuffle = 0;
};

RunSeeds derive_seeds(std::uint64_t seed);

/// Built-in track when `path` is empty.
Track load_track(const std::string& path);

/// Policy as configured, untrained, or the warm-start checkpoint.
Policy make_policy(const RunConfig& config, const Track& track);

struct StageLog {
  std::string stage;
  std::vector<EpochStats> epochs;
  int selected_epoch = 0;  // 0: last epoch
};

struct TrainResult {
  Policy policy;
  std::vector<StageLog> stages;
};

/// Runs the configured algorithm chain. Throws SolverFailureError when a
/// stage skips more than max_failure_percent of its samples.
TrainResult train(const RunConfig& config, const Track& track, const std::vector<Lap>& laps);

/// CSV stage,epoch,train_loss,validation_loss,samples,skipped,weak.
std::string loss_trace_csv(const std::vector<StageLog>& stages);

struct Evaluation {
  MetricsReport report;
  Rollout rollout;
  std::vector<double> a_y;
  std::vector<double> j_y;
};

/// Closed loop from the neutral centerline state over eval_laps laps, and
/// open-loop error on every demo sample.
Evaluation evaluate(const Policy& policy, const std::string& algorithm, const Plant& plant, const Track& track,
                    const std::vector<Lap>& laps, const ReferenceStats& stats, int laps_to_drive = 1);

/// Samples per lap at the plant speed.
int lap_steps(const Track& track, const VehicleParams& plant, double dt);

/// Neutral start: zeros except sigma = 0 on the centerline.
StateVector neutral_state(ControlMode mode);

/// CSV t_s,sigma,d,phi,delta,a_y,j_y of an evaluation.
std::string rollout_trace_csv(const Evaluation& eval, double dt);

/// Reference statistics of the demo laps.
ReferenceStats reference_stats(const std::vector<Lap>& laps, const Track& track);

/// Run directory layout shared by the CLI and the acceptance runner:
/// config.toml, run_info.json, checkpoint/, traces/loss.csv ...
void write_training_artifacts(const std::filesystem::path& dir, const RunConfig& config, const TrainResult& result,
                              const std::string& command);
/// ... and metrics.json, table.txt, traces/rollout.csv, traces/reference.csv.
void write_evaluation_artifacts(const std::filesystem::path& dir, const Evaluation& eval, const ReferenceStats& stats,
                                double dt);

/// Adjoint vs central differences of u_0 with respect to theta.
struct DiffCheckRow {
  int instance = 0;
  int param = 0;
  double adjoint = 0.0;
  double fd = 0.0;
  double rel_err = 0.0;
};

struct DiffCheckResult {
  std::vector<DiffCheckRow> rows;
  int instances = 0;
  int excluded = 0;  // complementarity margin below the exclusion threshold
  double max_rel_err = 0.0;

  std::string csv() const;
};

/// Random feasible instances of the lane-keeping OCP on the built-in track.
/// The relative error of each parameter is taken against the gradient norm.
DiffCheckResult diff_check(Variant variant, int instances, std::uint64_t seed, int horizon = 7,
                           double margin_threshold = 1e-6);

/// `git describe` of the working tree, or "unknown".
std::string git_describe();

}  // namespace mimic
