#include "mimic/experiment.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <memory>
#include <random>
#include <set>

#include <fmt/format.h>
#include <toml.hpp>

#include "mimic/errors.hpp"
#include "mimic/io.hpp"
#include "mimic/model.hpp"
#include "mimic/sensitivity.hpp"

#ifndef MIMIC_SOURCE_DIR
#define MIMIC_SOURCE_DIR "."
#endif

namespace mimic {

namespace {

// Typed access to one TOML table; every key read is remembered so that
// leftovers can be reported as unknown.
class TableReader {
 public:
  TableReader(const toml::table& table, std::string prefix) : table_(table), prefix_(std::move(prefix)) {}

  bool has(const std::string& key) const { return table_.contains(key); }

  void read(const std::string& key, double& out) {
    const toml::node* n = lookup(key);
    if (!n) return;
    if (auto v = n->value_exact<double>()) {
      out = *v;
    } else if (auto i = n->value_exact<std::int64_t>()) {
      out = static_cast<double>(*i);
    } else {
      fail(key, "expected a number");
    }
  }

  void read(const std::string& key, int& out) {
    const toml::node* n = lookup(key);
    if (!n) return;
    auto v = n->value_exact<std::int64_t>();
    if (!v) fail(key, "expected an integer");
    out = static_cast<int>(*v);
  }

  void read(const std::string& key, bool& out) {
    const toml::node* n = lookup(key);
    if (!n) return;
    auto v = n->value_exact<bool>();
    if (!v) fail(key, "expected true or false");
    out = *v;
  }

  void read(const std::string& key, std::string& out) {
    const toml::node* n = lookup(key);
    if (!n) return;
    auto v = n->value_exact<std::string>();
    if (!v) fail(key, "expected a string");
    out = *v;
  }

  void read(const std::string& key, std::uint64_t& out) {
    const toml::node* n = lookup(key);
    if (!n) return;
    auto v = n->value_exact<std::int64_t>();
    if (!v || *v < 0) fail(key, "expected a non-negative integer");
    out = static_cast<std::uint64_t>(*v);
  }

  template <class T, class Parse>
  void read_enum(const std::string& key, T& out, Parse parse) {
    std::string s;
    if (!lookup(key)) return;
    read(key, s);
    try {
      out = parse(s);
    } catch (const std::exception& e) {
      fail(key, e.what());
    }
  }

  const toml::table* subtable(const std::string& key) {
    const toml::node* n = lookup(key);
    if (!n) return nullptr;
    if (!n->is_table()) fail(key, "expected a table");
    return n->as_table();
  }

  void finish() const {
    for (const auto& [k, v] : table_) {
      const std::string key(k.str());
      if (!seen_.count(key)) throw ConfigError(fmt::format("{}: unknown key", name(key)));
    }
  }

  [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
    throw ConfigError(fmt::format("{}: {}", name(key), msg));
  }

 private:
  const toml::node* lookup(const std::string& key) {
    seen_.insert(key);
    return table_.get(key);
  }
  std::string name(const std::string& key) const { return prefix_.empty() ? key : prefix_ + "." + key; }

  const toml::table& table_;
  std::string prefix_;
  std::set<std::string> seen_;
};

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out + "\"";
}

std::string num(double v) {
  std::string s = format_double(v);
  // TOML floats need a fractional part or an exponent.
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

void read_vehicle(TableReader& r, VehicleParams& v) {
  r.read("mass_kg", v.mass);
  r.read("yaw_inertia_kgm2", v.yaw_inertia);
  r.read("lf_m", v.lf);
  r.read("lr_m", v.lr);
  r.read("cf_n_per_rad", v.cf);
  r.read("cr_n_per_rad", v.cr);
  r.read("vx_mps", v.vx);
  r.read("steering_ratio", v.steering_ratio);
}

void read_limits(TableReader& r, BoxLimits& l) {
  r.read("delta_max_rad", l.delta_max);
  r.read("delta_rate_max_radps", l.delta_rate_max);
  r.read("beta_max_rad", l.beta_max);
  r.read("psi_dot_max_radps", l.psi_dot_max);
}

toml::table parse_toml(const std::string& text, const std::string& origin) {
  try {
    return toml::parse(text, origin);
  } catch (const toml::parse_error& e) {
    const auto& b = e.source().begin;
    throw ConfigError(fmt::format("{}:{}:{}: {}", origin, b.line, b.column, e.description()));
  }
}

void check_failures(const StageLog& log, int max_percent) {
  long samples = 0;
  long skipped = 0;
  for (const EpochStats& e : log.epochs) {
    samples += e.samples;
    skipped += e.skipped;
  }
  if (samples + skipped == 0) return;
  const double pct = 100.0 * static_cast<double>(skipped) / static_cast<double>(samples + skipped);
  if (pct > max_percent) {
    std::string detail;
    for (const EpochStats& e : log.epochs) {
      if (e.skipped) detail += fmt::format("\n  epoch {}: {} of {} skipped", e.epoch, e.skipped, e.samples + e.skipped);
    }
    throw SolverFailureError(fmt::format("{}: solver failures on {:.1f}% of the samples (limit {}%){}", log.stage,
                                         pct, max_percent, detail));
  }
}

MpcParams random_params(std::mt19937_64& rng, Variant variant, bool wide) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  MpcParams p = MpcParams::zeros(variant);
  switch (variant) {
    case Variant::Weights:
      p.theta << u(rng), u(rng), u(rng), 0.8 * u(rng);
      break;
    case Variant::SetpointAngle:
      p.theta << 0.8 * u(rng), 0.05 * u(rng);
      break;
    case Variant::SetpointRate:
      p.theta << 0.8 * u(rng), 0.05 * u(rng), u(rng);
      break;
  }
  if (wide) p.theta(variant == Variant::Weights ? 3 : 0) = 2.5 * u(rng);
  return p;
}

StateVector random_state(std::mt19937_64& rng, ControlMode mode, double length, bool wide) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  StateVector x(state_dim(mode));
  x(sx::beta) = 0.02 * u(rng);
  x(sx::psi_dot) = 0.1 * u(rng);
  x(sx::sigma) = 0.5 * length * (1.0 + u(rng));
  x(sx::d) = (wide ? 1.6 : 1.0) * u(rng);
  x(sx::phi) = (wide ? 0.1 : 0.05) * u(rng);
  if (mode == ControlMode::SteeringRate) x(sx::delta) = 0.05 * u(rng);
  return x;
}

}  // namespace

std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::None:
      return "none";
    case Algorithm::BC:
      return "bc";
    case Algorithm::SL:
      return "sl";
    case Algorithm::SC:
      return "sc";
    case Algorithm::BC_SC:
      return "bc+sc";
    case Algorithm::SL_SC:
      return "sl+sc";
  }
  return "?";
}

Algorithm parse_algorithm(const std::string& name) {
  for (Algorithm a : {Algorithm::None, Algorithm::BC, Algorithm::SL, Algorithm::SC, Algorithm::BC_SC, Algorithm::SL_SC}) {
    if (name == to_string(a)) return a;
  }
  throw InvalidArgument(fmt::format("unknown algorithm '{}' (expected none, bc, sl, sc, bc+sc or sl+sc)", name));
}

bool has_open_loop_stage(Algorithm a) {
  return a == Algorithm::BC || a == Algorithm::SL || a == Algorithm::BC_SC || a == Algorithm::SL_SC;
}

bool has_closed_loop_stage(Algorithm a) {
  return a == Algorithm::SC || a == Algorithm::BC_SC || a == Algorithm::SL_SC;
}

std::string to_string(PlantKind p) { return p == PlantKind::Bicycle ? "bicycle" : "perturbed-bicycle"; }

PlantKind parse_plant(const std::string& name) {
  if (name == "bicycle") return PlantKind::Bicycle;
  if (name == "perturbed-bicycle") return PlantKind::PerturbedBicycle;
  throw InvalidArgument(fmt::format("unknown plant '{}' (expected bicycle or perturbed-bicycle)", name));
}

void RunConfig::validate() const {
  if (id.empty()) throw ConfigError("id: required");
  if (id.find_first_of("/\\") != std::string::npos || id == "." || id == "..") {
    throw ConfigError("id: must be a plain directory name");
  }
  if (!seed) throw ConfigError("seed: required");
  if (!(lookahead > 0.0)) throw ConfigError("lookahead_m: must be positive");
  if (horizon < 0) throw ConfigError("horizon: must be >= 0");
  if (!(dt > 0.0)) throw ConfigError("dt_s: must be positive");
  if (policy == PolicyKind::NN_MPC && variant == Variant::Weights) {
    throw ConfigError("variant: nn_mpc needs setpoint_angle or setpoint_rate");
  }
  if ((algorithm == Algorithm::SL || algorithm == Algorithm::SL_SC) && policy != PolicyKind::NN_MPC) {
    throw ConfigError(fmt::format("algorithm: {} requires policy nn_mpc", to_string(algorithm)));
  }
  auto positive = [](double v, const char* key) {
    if (!(v > 0.0)) throw ConfigError(fmt::format("{}: must be positive", key));
  };
  if (ol.epochs < 0) throw ConfigError("ol.epochs: must be >= 0");
  if (ol.batch_size < 1) throw ConfigError("ol.batch_size: must be >= 1");
  positive(ol.slice_s, "ol.slice_s");
  positive(ol.lr_net, "ol.lr_net");
  positive(ol.lr_mpc, "ol.lr_mpc");
  if (sc.epochs < 0) throw ConfigError("sc.epochs: must be >= 0");
  if (sc.batch_size < 1) throw ConfigError("sc.batch_size: must be >= 1");
  positive(sc.slice_s, "sc.slice_s");
  positive(sc.lr_net, "sc.lr_net");
  positive(sc.lr_mpc, "sc.lr_mpc");
  if (sc.clip_norm < 0.0) throw ConfigError("sc.clip_norm: must be >= 0");
  if (sc.ol_weight < 0.0) throw ConfigError("sc.ol_weight: must be >= 0");
  if (eval_laps < 1) throw ConfigError("eval.laps: must be >= 1");
  if (max_failure_percent < 0 || max_failure_percent > 100) {
    throw ConfigError("max_failure_percent: must be in [0, 100]");
  }
  try {
    vehicle.validate();
  } catch (const std::exception& e) {
    throw ConfigError(fmt::format("vehicle: {}", e.what()));
  }
}

OcpSpec RunConfig::ocp_spec(const Track& track) const {
  OcpSpec spec = OcpSpec::from_lookahead(lookahead, vehicle.vx, dt, variant, track.width(), limits);
  if (horizon > 0) spec.horizon = horizon;
  spec.validate();
  return spec;
}

VehicleParams RunConfig::plant_params() const {
  return plant == PlantKind::Bicycle ? vehicle : vehicle.perturbed();
}

std::string RunConfig::to_toml() const {
  const VehicleParams v;
  std::string s;
  s += fmt::format("id = {}\n", quote(id));
  if (seed) s += fmt::format("seed = {}\n", *seed);
  s += fmt::format("policy = {}\n", quote(to_string(policy)));
  s += fmt::format("variant = {}\n", quote(to_string(variant)));
  s += fmt::format("algorithm = {}\n", quote(to_string(algorithm)));
  s += fmt::format("lookahead_m = {}\n", num(lookahead));
  s += fmt::format("horizon = {}\n", horizon);
  s += fmt::format("dt_s = {}\n", num(dt));
  s += fmt::format("plant = {}\n", quote(to_string(plant)));
  s += fmt::format("track = {}\n", quote(track));
  s += fmt::format("demos = {}\n", quote(demos));
  s += fmt::format("init_checkpoint = {}\n", quote(init_checkpoint));
  s += fmt::format("max_failure_percent = {}\n", max_failure_percent);
  s += "\n[ol]\n";
  s += fmt::format("epochs = {}\nbatch_size = {}\nslice_s = {}\nlr_net = {}\nlr_mpc = {}\n", ol.epochs, ol.batch_size,
                   num(ol.slice_s), num(ol.lr_net), num(ol.lr_mpc));
  s += "\n[sc]\n";
  s += fmt::format("epochs = {}\nbatch_size = {}\nslice_s = {}\nlr_net = {}\nlr_mpc = {}\n", sc.epochs, sc.batch_size,
                   num(sc.slice_s), num(sc.lr_net), num(sc.lr_mpc));
  s += fmt::format("clip_norm = {}\nfull_state_loss = {}\nol_weight = {}\nkeep_best = {}\n", num(sc.clip_norm),
                   sc.full_state_loss ? "true" : "false", num(sc.ol_weight), sc.keep_best ? "true" : "false");
  s += "\n[eval]\n";
  s += fmt::format("laps = {}\n", eval_laps);
  s += "\n[vehicle]\n";
  s += fmt::format("mass_kg = {}\nyaw_inertia_kgm2 = {}\nlf_m = {}\nlr_m = {}\n", num(vehicle.mass),
                   num(vehicle.yaw_inertia), num(vehicle.lf), num(vehicle.lr));
  s += fmt::format("cf_n_per_rad = {}\ncr_n_per_rad = {}\nvx_mps = {}\nsteering_ratio = {}\n", num(vehicle.cf),
                   num(vehicle.cr), num(vehicle.vx), num(vehicle.steering_ratio));
  s += "\n[limits]\n";
  s += fmt::format("delta_max_rad = {}\ndelta_rate_max_radps = {}\nbeta_max_rad = {}\npsi_dot_max_radps = {}\n",
                   num(limits.delta_max), num(limits.delta_rate_max), num(limits.beta_max), num(limits.psi_dot_max));
  return s;
}

RunConfig parse_run_config(const std::string& text, const std::string& origin) {
  const toml::table root = parse_toml(text, origin);
  RunConfig c;
  TableReader r(root, "");
  r.read("id", c.id);
  if (r.has("seed")) {
    std::uint64_t seed = 0;
    r.read("seed", seed);
    c.seed = seed;
  }
  r.read_enum("policy", c.policy, parse_policy_kind);
  r.read_enum("variant", c.variant, parse_variant);
  r.read_enum("algorithm", c.algorithm, parse_algorithm);
  r.read("lookahead_m", c.lookahead);
  r.read("horizon", c.horizon);
  r.read("dt_s", c.dt);
  r.read_enum("plant", c.plant, parse_plant);
  r.read("track", c.track);
  r.read("demos", c.demos);
  r.read("init_checkpoint", c.init_checkpoint);
  r.read("max_failure_percent", c.max_failure_percent);
  if (const toml::table* t = r.subtable("ol")) {
    TableReader s(*t, "ol");
    s.read("epochs", c.ol.epochs);
    s.read("batch_size", c.ol.batch_size);
    s.read("slice_s", c.ol.slice_s);
    s.read("lr_net", c.ol.lr_net);
    s.read("lr_mpc", c.ol.lr_mpc);
    s.finish();
  }
  if (const toml::table* t = r.subtable("sc")) {
    TableReader s(*t, "sc");
    s.read("epochs", c.sc.epochs);
    s.read("batch_size", c.sc.batch_size);
    s.read("slice_s", c.sc.slice_s);
    s.read("lr_net", c.sc.lr_net);
    s.read("lr_mpc", c.sc.lr_mpc);
    s.read("clip_norm", c.sc.clip_norm);
    s.read("full_state_loss", c.sc.full_state_loss);
    s.read("ol_weight", c.sc.ol_weight);
    s.read("keep_best", c.sc.keep_best);
    s.finish();
  }
  if (const toml::table* t = r.subtable("eval")) {
    TableReader s(*t, "eval");
    s.read("laps", c.eval_laps);
    s.finish();
  }
  if (const toml::table* t = r.subtable("vehicle")) {
    TableReader s(*t, "vehicle");
    read_vehicle(s, c.vehicle);
    s.finish();
  }
  if (const toml::table* t = r.subtable("limits")) {
    TableReader s(*t, "limits");
    read_limits(s, c.limits);
    s.finish();
  }
  r.finish();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return parse_run_config(read_text_file(path), path.string());
}

DemoConfig parse_demo_config(const std::string& text, const std::string& origin) {
  const toml::table root = parse_toml(text, origin);
  DemoConfig c;
  TableReader r(root, "");
  r.read("laps", c.laps);
  r.read("dt_s", c.dt);
  r.read_enum("plant", c.plant, parse_plant);
  if (const toml::table* t = r.subtable("expert")) {
    TableReader s(*t, "expert");
    s.read("offset_mean_m", c.profile.offset_mean);
    s.read("offset_std_m", c.profile.offset_std);
    s.read("time_constant_s", c.profile.time_constant);
    s.read("log_w_rate", c.profile.log_w_rate);
    s.read("lookahead_m", c.profile.lookahead);
    s.read("seed", c.profile.seed);
    s.finish();
  }
  if (const toml::table* t = r.subtable("vehicle")) {
    TableReader s(*t, "vehicle");
    read_vehicle(s, c.vehicle);
    s.finish();
  }
  r.finish();
  if (c.laps < 1) throw ConfigError("laps: must be >= 1");
  if (!(c.dt > 0.0)) throw ConfigError("dt_s: must be positive");
  try {
    c.profile.validate();
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  return c;
}

RunSeeds derive_seeds(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  RunSeeds s;
  s.network = rng();
  s.ol_shuffle = rng();
  s.sc_shuffle = rng();
  return s;
}

Track load_track(const std::string& path) {
  if (path.empty()) return build_track(default_track_spec());
  return read_track(path);
}

Policy make_policy(const RunConfig& config, const Track& track) {
  if (!config.init_checkpoint.empty()) {
    Policy p = Policy::load(config.init_checkpoint);
    if (p.kind() != config.policy) {
      throw ConfigError(fmt::format("init_checkpoint: holds a {} policy, config asks for {}", to_string(p.kind()),
                                    to_string(config.policy)));
    }
    if (p.kind() != PolicyKind::NN && p.spec().variant != config.variant) {
      throw ConfigError(fmt::format("init_checkpoint: variant {} differs from config variant {}",
                                    to_string(p.spec().variant), to_string(config.variant)));
    }
    return p;
  }
  const OcpSpec spec = config.ocp_spec(track);
  const RunSeeds seeds = derive_seeds(*config.seed);
  switch (config.policy) {
    case PolicyKind::NN:
      return Policy::nn(spec, seeds.network, config.vehicle);
    case PolicyKind::MPC:
      return Policy::mpc(spec, MpcParams::zeros(config.variant), config.vehicle);
    case PolicyKind::NN_MPC:
      return Policy::nn_mpc(spec, seeds.network, config.vehicle);
  }
  throw ConfigError("policy: unknown kind");
}

TrainResult train(const RunConfig& config, const Track& track, const std::vector<Lap>& laps) {
  config.validate();
  const RunSeeds seeds = derive_seeds(*config.seed);
  TrainResult out{make_policy(config, track), {}};
  Policy& policy = out.policy;
  if (has_open_loop_stage(config.algorithm)) {
    const SlicedDataset data = slice_dataset(laps, config.ol.slice_s, config.ol.batch_size, seeds.ol_shuffle);
    TrainOptions to;
    to.epochs = config.ol.epochs;
    to.lr_net = config.ol.lr_net;
    to.lr_mpc = config.ol.lr_mpc;
    const bool sl = config.algorithm == Algorithm::SL || config.algorithm == Algorithm::SL_SC;
    StageLog log{sl ? "sl" : "bc", sl ? train_sl(policy, laps, data, track, to) : train_bc(policy, laps, data, track, to)};
    check_failures(log, config.max_failure_percent);
    out.stages.push_back(std::move(log));
  }
  if (has_closed_loop_stage(config.algorithm)) {
    const SlicedDataset data = slice_dataset(laps, config.sc.slice_s, config.sc.batch_size, seeds.sc_shuffle);
    ScOptions so;
    so.epochs = config.sc.epochs;
    so.lr_net = config.sc.lr_net;
    so.lr_mpc = config.sc.lr_mpc;
    so.clip_norm = config.sc.clip_norm;
    so.full_state_loss = config.sc.full_state_loss;
    so.ol_weight = config.sc.ol_weight;
    double best_loss = std::numeric_limits<double>::infinity();
    int best_epoch = 0;
    Eigen::VectorXd best_params;
    if (config.sc.keep_best) {
      so.on_epoch = [&](const EpochStats& st) {
        if (st.validation_loss < best_loss) {
          best_loss = st.validation_loss;
          best_epoch = st.epoch;
          best_params = policy.params();
        }
        return true;
      };
    }
    const Plant plant{config.plant_params(), config.dt};
    StageLog log{"sc", train_sc(policy, plant, laps, data, track, so)};
    check_failures(log, config.max_failure_percent);
    if (best_epoch > 0) {
      policy.set_params(best_params);
      log.selected_epoch = best_epoch;
    }
    out.stages.push_back(std::move(log));
  }
  return out;
}

std::string loss_trace_csv(const std::vector<StageLog>& stages) {
  std::string s = "stage,epoch,train_loss,validation_loss,samples,skipped,weak\n";
  for (const StageLog& log : stages) {
    for (const EpochStats& e : log.epochs) {
      s += fmt::format("{},{},{},{},{},{},{}\n", log.stage, e.epoch, format_double(e.train_loss),
                       format_double(e.validation_loss), e.samples, e.skipped, e.weak);
    }
  }
  return s;
}

int lap_steps(const Track& track, const VehicleParams& plant, double dt) {
  return static_cast<int>(std::lround(track.length() / (plant.vx * dt)));
}

StateVector neutral_state(ControlMode mode) { return StateVector::Zero(state_dim(mode)); }

Evaluation evaluate(const Policy& policy, const std::string& algorithm, const Plant& plant, const Track& track,
                    const std::vector<Lap>& laps, const ReferenceStats& stats, int laps_to_drive) {
  Evaluation ev;
  const int steps = laps_to_drive * lap_steps(track, plant.params, plant.dt);
  ev.rollout = rollout(policy, plant, track, neutral_state(policy.mode()), steps);
  const Rollout& r = ev.rollout;

  MetricsReport& rep = ev.report;
  rep.policy = to_string(policy.kind());
  rep.algorithm = algorithm;
  rep.action = policy.mode() == ControlMode::SteeringRate ? "delta_rate" : "delta";
  rep.lookahead = policy.kind() == PolicyKind::NN ? 0.0 : policy.spec().lookahead;

  std::vector<Slice> all;
  for (std::size_t i = 0; i < laps.size(); ++i) all.push_back({static_cast<int>(i), 0, laps[i].size()});
  rep.ol_error = policy_ol_error(policy, laps, all, track);

  const std::vector<double> d = r.d();
  rep.cl_likelihood = cl_likelihood(r.sigma(), d, stats);
  rep.offroad = offroad_count(d, track.half_width(), steps + 1);
  rep.d = mean_std(d);
  rep.steps = static_cast<int>(r.actions.size());
  rep.truncated = r.truncated;
  if (!r.actions.empty()) {
    ev.a_y = lateral_acceleration(r.states, r.actions, policy.mode(), track, plant.params);
    if (ev.a_y.size() >= 3) {
      ev.j_y = lateral_jerk(ev.a_y, plant.dt);
      rep.jerk = jerk_stats(ev.j_y);
    }
    // The zero-phase filter needs a few seconds of signal.
    if (r.actions.size() >= 50) rep.srr = srr(r.steering(), plant.dt, plant.params.steering_ratio);
  }
  return ev;
}

std::string rollout_trace_csv(const Evaluation& ev, double dt) {
  CsvWriter w({"t_s", "sigma", "d", "phi", "delta", "a_y", "j_y"});
  const Rollout& r = ev.rollout;
  for (std::size_t t = 0; t < r.states.size(); ++t) {
    const StateVector& x = r.states[t];
    double delta = 0.0;
    if (x.size() == 6) {
      delta = x(sx::delta);
    } else if (!r.actions.empty()) {
      delta = r.actions[std::min(t, r.actions.size() - 1)];
    }
    const double ay = t < ev.a_y.size() ? ev.a_y[t] : 0.0;
    const double jy = t < ev.j_y.size() ? ev.j_y[t] : 0.0;
    w.add_row({static_cast<double>(t) * dt, x(sx::sigma), x(sx::d), x(sx::phi), delta, ay, jy});
  }
  return w.str();
}

ReferenceStats reference_stats(const std::vector<Lap>& laps, const Track& track) {
  std::vector<LapTrace> traces;
  for (const Lap& lap : laps) traces.push_back(lap.trace());
  return build_reference_stats(traces, track.length());
}

void write_training_artifacts(const std::filesystem::path& dir, const RunConfig& config, const TrainResult& result,
                              const std::string& command) {
  std::filesystem::create_directories(dir / "traces");
  write_text_file(dir / "config.toml", config.to_toml());
  nlohmann::json info = {
      {"id", config.id}, {"seed", config.seed.value_or(0)}, {"git_describe", git_describe()}, {"command", command}};
  info["selected_epochs"] = nlohmann::json::object();
  for (const StageLog& s : result.stages) {
    info["selected_epochs"][s.stage] = s.selected_epoch ? s.selected_epoch : static_cast<int>(s.epochs.size());
  }
  write_text_file(dir / "run_info.json", info.dump(2) + "\n");
  result.policy.save(dir / "checkpoint");
  write_text_file(dir / "traces" / "loss.csv", loss_trace_csv(result.stages));
}

void write_evaluation_artifacts(const std::filesystem::path& dir, const Evaluation& eval, const ReferenceStats& stats,
                                double dt) {
  std::filesystem::create_directories(dir / "traces");
  write_text_file(dir / "metrics.json", eval.report.to_json().dump(2) + "\n");
  write_text_file(dir / "table.txt", render_table({eval.report}));
  write_text_file(dir / "traces" / "rollout.csv", rollout_trace_csv(eval, dt));
  write_text_file(dir / "traces" / "reference.csv", stats.csv());
}

std::string DiffCheckResult::csv() const {
  std::string s = "instance_id,param_index,adjoint,fd,rel_err\n";
  for (const DiffCheckRow& r : rows) {
    s += fmt::format("{},{},{},{},{}\n", r.instance, r.param, format_double(r.adjoint), format_double(r.fd),
                     format_double(r.rel_err));
  }
  s += fmt::format("# max_rel_err {} instances {} excluded {}\n", format_double(max_rel_err), instances, excluded);
  return s;
}

DiffCheckResult diff_check(Variant variant, int instances, std::uint64_t seed, int horizon, double margin_threshold) {
  if (instances < 1) throw InvalidArgument("diff-check: instances must be positive");
  const Track track = build_track(default_track_spec());
  const ControlMode mode = control_mode(variant);
  const FrenetModel model(track, VehicleParams{}, mode, 0.1);
  OcpSpec spec;
  spec.variant = variant;
  spec.horizon = horizon;
  spec.half_width = track.half_width();
  SolverOptions opt;
  opt.tolerance = 1e-13;
  constexpr double eps = 1e-5;

  std::mt19937_64 rng(seed);
  DiffCheckResult out;
  int attempts = 0;
  while (out.instances < instances) {
    if (++attempts > 50 * instances) {
      throw std::runtime_error(fmt::format("diff-check: only {} usable instances in {} draws", out.instances, attempts));
    }
    const bool wide = attempts % 2 == 0;
    const MpcParams params = random_params(rng, variant, wide);
    const StateVector x0 = random_state(rng, mode, track.length(), wide);
    Eigen::VectorXd adj;
    Eigen::VectorXd fd(params.theta.size());
    try {
      const KktPoint point = solve(model, spec, params, x0, nullptr, opt);
      if (point.complementarity_margin < margin_threshold) {
        ++out.excluded;
        continue;
      }
      const Ocp ocp(model, spec, params, point.soft);
      const Sensitivity s(kkt_system(ocp, point, x0));
      adj = s.adjoint_wrt_params(u0_seed(ocp));
      for (Eigen::Index j = 0; j < fd.size(); ++j) {
        MpcParams plus = params;
        MpcParams minus = params;
        plus.theta(j) += eps;
        minus.theta(j) -= eps;
        fd(j) = (solve(model, spec, plus, x0, nullptr, opt).u0() - solve(model, spec, minus, x0, nullptr, opt).u0()) /
                (2.0 * eps);
      }
    } catch (const MpcConvergenceError&) {
      continue;
    } catch (const SingularityError&) {
      continue;
    } catch (const SensitivityError&) {
      ++out.excluded;
      continue;
    }
    const double scale = std::max(fd.lpNorm<Eigen::Infinity>(), 1e-6);
    for (Eigen::Index j = 0; j < fd.size(); ++j) {
      const double e = std::abs(adj(j) - fd(j)) / scale;
      out.rows.push_back({out.instances, static_cast<int>(j), adj(j), fd(j), e});
      out.max_rel_err = std::max(out.max_rel_err, e);
    }
    ++out.instances;
  }
  return out;
}

std::string git_describe() {
  const std::string cmd = fmt::format("git -C \"{}\" describe --always --dirty 2>/dev/null", MIMIC_SOURCE_DIR);
  std::unique_ptr<FILE, int (*)(FILE*)> pipe(popen(cmd.c_str(), "r"), pclose);
  if (!pipe) return "unknown";
  std::array<char, 256> buf{};
  std::string out;
  while (fgets(buf.data(), static_cast<int>(buf.size()), pipe.get())) out += buf.data();
  while (!out.empty() && (out.back() == '\n' || out.back() == '\r')) out.pop_back();
  return out.empty() ? "unknown" : out;
}

}  // namespace mimic
