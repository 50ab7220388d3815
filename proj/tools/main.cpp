// mimic_mpc: batch front end for track/demo generation, training, evaluation,
// rollouts and gradient audits.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "mimic/errors.hpp"
#include "mimic/experiment.hpp"
#include "mimic/io.hpp"
#include "mimic/learning.hpp"
#include "mimic/metrics.hpp"
#include "mimic/track.hpp"

namespace fs = std::filesystem;
using namespace mimic;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kFile = 3, kSolver = 4 };

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string track;
  std::string demos;
  std::string checkpoint;
  std::string plant;
};

struct FileError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_file(const std::string& path, const char* what) {
  if (!fs::exists(path)) throw FileError(fmt::format("{} not found: {}", what, path));
}

// Command-line flags take precedence over the config file.
RunConfig run_config(const Common& c) {
  if (c.config.empty()) throw ConfigError("--config is required");
  require_file(c.config, "config");
  RunConfig cfg = load_run_config(c.config);
  if (c.seed) cfg.seed = c.seed;
  if (!c.track.empty()) cfg.track = c.track;
  if (!c.demos.empty()) cfg.demos = c.demos;
  if (!c.plant.empty()) cfg.plant = parse_plant(c.plant);
  cfg.validate();
  return cfg;
}

struct Inputs {
  Track track;
  std::vector<Lap> laps;
  DemoManifest manifest;
};

Inputs load_inputs(const std::string& track_path, const std::string& demos_dir) {
  if (!track_path.empty()) require_file(track_path, "track");
  if (demos_dir.empty()) throw ConfigError("demos: no demonstration directory given (--demos or config key)");
  require_file(demos_dir, "demo directory");
  Inputs in{load_track(track_path), {}, {}};
  in.laps = read_demos(demos_dir, &in.manifest);
  if (in.manifest.track_hash != in.track.hash()) {
    throw ConfigError(fmt::format("demos: recorded on a different track (hash {:016x}, track {:016x})",
                                  in.manifest.track_hash, in.track.hash()));
  }
  return in;
}

void print_report(const Evaluation& ev) {
  std::cout << render_table({ev.report});
  if (ev.rollout.truncated) std::cout << "rollout truncated: " << ev.rollout.reason << "\n";
}

int cmd_generate_track(const Common& c) {
  if (c.out.empty()) throw ConfigError("--out is required");
  TrackSpec spec = default_track_spec();
  if (!c.config.empty()) {
    require_file(c.config, "track spec");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_text_file(c.config));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(fmt::format("{}: {}", c.config, e.what()));
    }
    spec = parse_track_spec(j);
  }
  const Track track = build_track(spec);
  write_track(track, c.out);
  std::cout << fmt::format("track: {:.1f} m, {} plateaus, hash {:016x} -> {}\n", track.length(),
                           count_curvature_plateaus(track), track.hash(), c.out);
  return kOk;
}

int cmd_generate_demos(const Common& c, std::optional<int> laps_flag) {
  if (c.out.empty()) throw ConfigError("--out is required");
  DemoConfig dc;
  if (!c.config.empty()) {
    require_file(c.config, "demo config");
    dc = parse_demo_config(read_text_file(c.config), c.config);
  }
  if (laps_flag) dc.laps = *laps_flag;
  if (c.seed) dc.profile.seed = *c.seed;
  if (!c.plant.empty()) dc.plant = parse_plant(c.plant);
  if (!c.track.empty()) require_file(c.track, "track");
  const Track track = load_track(c.track);
  const VehicleParams plant = dc.plant == PlantKind::Bicycle ? dc.vehicle : dc.vehicle.perturbed();
  const std::vector<Lap> laps = generate_expert_laps(track, dc.profile, dc.laps, plant, dc.dt);
  DemoManifest m;
  m.track_hash = track.hash();
  m.vx = plant.vx;
  m.dt = dc.dt;
  m.profile = dc.profile;
  m.seed = dc.profile.seed;
  write_demos(c.out, laps, m);
  std::cout << fmt::format("demos: {} laps -> {}\n", laps.size(), c.out);
  return kOk;
}

int cmd_train(const Common& c, const std::string& command, bool then_evaluate) {
  const RunConfig cfg = run_config(c);
  const Inputs in = load_inputs(cfg.track, cfg.demos);
  const fs::path dir = fs::path(c.out.empty() ? "runs" : c.out) / cfg.id;
  const TrainResult result = train(cfg, in.track, in.laps);
  write_training_artifacts(dir, cfg, result, command);
  for (const StageLog& s : result.stages) {
    if (s.epochs.empty()) continue;
    const EpochStats& e = s.epochs.back();
    std::cout << fmt::format("{}: {} epochs, train {:.4e}, validation {:.4e}, skipped {}\n", s.stage, s.epochs.size(),
                             e.train_loss, e.validation_loss, e.skipped);
  }
  std::cout << "checkpoint -> " << (dir / "checkpoint").string() << "\n";
  if (!then_evaluate) return kOk;

  const ReferenceStats stats = reference_stats(in.laps, in.track);
  const Plant plant{cfg.plant_params(), cfg.dt};
  const Evaluation ev = evaluate(result.policy, to_string(cfg.algorithm), plant, in.track, in.laps, stats, cfg.eval_laps);
  write_evaluation_artifacts(dir, ev, stats, cfg.dt);
  print_report(ev);
  return kOk;
}

int cmd_evaluate(const Common& c, bool expert) {
  if (expert) {
    if (c.demos.empty()) throw ConfigError("--demos is required with --expert");
    if (c.out.empty()) throw ConfigError("--out is required with --expert");
    const Inputs in = load_inputs(c.track, c.demos);
    const VehicleParams plant_params =
        c.plant.empty() || parse_plant(c.plant) == PlantKind::Bicycle ? VehicleParams{} : VehicleParams{}.perturbed();
    const Policy policy = expert_policy(in.track, in.manifest.profile, plant_params, in.manifest.dt);
    const ReferenceStats stats = reference_stats(in.laps, in.track);
    const Evaluation ev = evaluate(policy, "expert", Plant{plant_params, in.manifest.dt}, in.track, in.laps, stats);
    write_evaluation_artifacts(c.out, ev, stats, in.manifest.dt);
    print_report(ev);
    return kOk;
  }
  const RunConfig cfg = run_config(c);
  const Inputs in = load_inputs(cfg.track, cfg.demos);
  const fs::path run = fs::path(c.out.empty() ? "runs" : c.out) / cfg.id;
  const fs::path ckpt = c.checkpoint.empty() ? run / "checkpoint" : fs::path(c.checkpoint);
  require_file(ckpt.string(), "checkpoint");
  const Policy policy = Policy::load(ckpt);
  const ReferenceStats stats = reference_stats(in.laps, in.track);
  const Plant plant{cfg.plant_params(), cfg.dt};
  const Evaluation ev = evaluate(policy, to_string(cfg.algorithm), plant, in.track, in.laps, stats, cfg.eval_laps);
  write_evaluation_artifacts(run, ev, stats, cfg.dt);
  print_report(ev);
  return kOk;
}

int cmd_rollout(const Common& c, double seconds) {
  if (c.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  require_file(c.checkpoint, "checkpoint");
  if (!c.track.empty()) require_file(c.track, "track");
  if (!(seconds > 0.0)) throw ConfigError("--seconds must be positive");
  const Policy policy = Policy::load(c.checkpoint);
  const Track track = load_track(c.track);
  const PlantKind kind = c.plant.empty() ? PlantKind::Bicycle : parse_plant(c.plant);
  const VehicleParams params = kind == PlantKind::Bicycle ? policy.model_params() : policy.model_params().perturbed();
  const Plant plant{params, policy.spec().dt};
  const int steps = static_cast<int>(std::lround(seconds / plant.dt));
  Evaluation ev;
  ev.rollout = rollout(policy, plant, track, neutral_state(policy.mode()), steps);
  if (!ev.rollout.actions.empty()) {
    ev.a_y = lateral_acceleration(ev.rollout.states, ev.rollout.actions, policy.mode(), track, params);
    if (ev.a_y.size() >= 3) ev.j_y = lateral_jerk(ev.a_y, plant.dt);
  }
  const std::string csv = rollout_trace_csv(ev, plant.dt);
  if (c.out.empty()) {
    std::cout << csv;
  } else {
    write_text_file(c.out, csv);
  }
  const int off = offroad_count(ev.rollout.d(), track.half_width(), steps + 1);
  std::cerr << fmt::format("rollout: {} steps, {} off-road{}\n", ev.rollout.actions.size(), off,
                           ev.rollout.truncated ? ", truncated: " + ev.rollout.reason : "");
  return kOk;
}

int cmd_diff_check(const Common& c, int instances, const std::string& variant_name, int horizon) {
  const std::uint64_t seed = c.seed.value_or(1);
  std::vector<Variant> variants;
  if (variant_name == "all") {
    variants = {Variant::Weights, Variant::SetpointAngle, Variant::SetpointRate};
  } else {
    variants = {parse_variant(variant_name)};
  }
  std::string csv;
  double worst = 0.0;
  for (Variant v : variants) {
    const DiffCheckResult r = diff_check(v, instances, seed, horizon);
    std::cout << fmt::format("{}: {} instances, {} excluded, max rel err {:.3e}\n", to_string(v), r.instances,
                             r.excluded, r.max_rel_err);
    csv += fmt::format("# variant {}\n", to_string(v)) + r.csv();
    worst = std::max(worst, r.max_rel_err);
  }
  std::cout << fmt::format("max_rel_err {:.3e}\n", worst);
  if (!c.out.empty()) write_text_file(c.out, csv);
  return kOk;
}

void add_common(CLI::App* sub, Common& c, bool config, bool out, bool seed, bool track, bool demos, bool ckpt,
                bool plant) {
  if (config) sub->add_option("--config", c.config, "Config file");
  if (out) sub->add_option("--out", c.out, "Output path");
  if (seed) sub->add_option("--seed", c.seed, "Seed override");
  if (track) sub->add_option("--track", c.track, "Track CSV (default: built-in track)");
  if (demos) sub->add_option("--demos", c.demos, "Demonstration directory");
  if (ckpt) sub->add_option("--checkpoint", c.checkpoint, "Checkpoint directory");
  if (plant) sub->add_option("--plant", c.plant, "bicycle | perturbed-bicycle");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Differentiable-MPC imitation learning for lane keeping"};
  app.require_subcommand(1);
  Common c;

  auto* gtrack = app.add_subcommand("generate-track", "Write a track CSV and JSON sidecar");
  add_common(gtrack, c, true, true, false, false, false, false, false);

  std::optional<int> laps;
  auto* gdemos = app.add_subcommand("generate-demos", "Record expert laps");
  add_common(gdemos, c, true, true, true, true, false, false, true);
  gdemos->add_option("--laps", laps, "Number of laps");

  auto* train_cmd = app.add_subcommand("train", "Train a policy into runs/<id>");
  add_common(train_cmd, c, true, true, true, true, true, false, true);

  auto* run_cmd = app.add_subcommand("run", "train, then evaluate");
  add_common(run_cmd, c, true, true, true, true, true, false, true);

  bool expert = false;
  auto* eval_cmd = app.add_subcommand("evaluate", "Closed-loop and open-loop metrics of a checkpoint");
  add_common(eval_cmd, c, true, true, true, true, true, true, true);
  eval_cmd->add_flag("--expert", expert, "Evaluate the noise-free expert of the demo manifest");

  double seconds = 86.4;
  auto* roll_cmd = app.add_subcommand("rollout", "Closed-loop trace of a checkpoint");
  add_common(roll_cmd, c, false, true, false, true, false, true, true);
  roll_cmd->add_option("--seconds", seconds, "Duration");

  int instances = 50;
  int horizon = 7;
  std::string variant = "all";
  auto* diff_cmd = app.add_subcommand("diff-check", "Adjoint vs finite-difference audit of the MPC sensitivities");
  add_common(diff_cmd, c, false, true, true, false, false, false, false);
  diff_cmd->add_option("--instances", instances, "Instances per variant");
  diff_cmd->add_option("--variant", variant, "weights | setpoint_angle | setpoint_rate | all");
  diff_cmd->add_option("--horizon", horizon, "Prediction steps");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  std::string command;
  for (int i = 0; i < argc; ++i) command += (i ? " " : "") + std::string(argv[i]);

  try {
    if (gtrack->parsed()) return cmd_generate_track(c);
    if (gdemos->parsed()) return cmd_generate_demos(c, laps);
    if (train_cmd->parsed()) return cmd_train(c, command, false);
    if (run_cmd->parsed()) return cmd_train(c, command, true);
    if (eval_cmd->parsed()) return cmd_evaluate(c, expert);
    if (roll_cmd->parsed()) return cmd_rollout(c, seconds);
    if (diff_cmd->parsed()) return cmd_diff_check(c, instances, variant, horizon);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfig;
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfig;
  } catch (const FileError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFile;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFile;
  } catch (const SolverFailureError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kSolver;
  } catch (const ExpertOffroadError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}
