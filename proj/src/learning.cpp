#include "mimic/learning.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <random>
#include <thread>

#include <fmt/format.h>

#include "mimic/errors.hpp"
#include "mimic/io.hpp"
#include "mimic/model.hpp"
#include "mimic/mpc.hpp"

namespace mimic {

namespace {

const std::vector<std::string> kLapHeader = {"t_s", "beta", "psi_dot", "sigma", "d", "phi", "delta", "delta_rate"};

nlohmann::json read_json(const std::filesystem::path& path) {
  try {
    return nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(fmt::format("{}: {}", path.string(), e.what()));
  }
}

// Fisher-Yates on the raw engine output, identical on every standard library.
template <class T>
void seeded_shuffle(std::vector<T>& v, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng() % i]);
}

struct Partial {
  double loss = 0.0;
  Eigen::VectorXd grad;
  int samples = 0;
  int skipped = 0;
  int weak = 0;
};

Partial reduce(const std::vector<Partial>& parts, int num_params) {
  Partial total;
  total.grad = Eigen::VectorXd::Zero(num_params);
  for (const Partial& p : parts) {
    total.loss += p.loss;
    if (p.grad.size()) total.grad += p.grad;
    total.samples += p.samples;
    total.skipped += p.skipped;
    total.weak += p.weak;
  }
  return total;
}

// Squared action error over a slice; gradient optional.
Partial bc_slice(const Policy& policy, const Lap& lap, const Slice& slice, const Track& track, bool with_gradient) {
  Partial out;
  if (with_gradient) out.grad = Eigen::VectorXd::Zero(policy.num_params());
  const ControlMode mode = policy.mode();
  std::optional<PolicyAux> prev;
  for (int t = slice.start; t < slice.start + slice.length; ++t) {
    try {
      PolicyOutput o = policy.act(lap.state(t, mode), track, prev ? &*prev : nullptr);
      const double err = o.action - lap.action(t, mode);
      if (with_gradient) {
        const PolicyGradient g = policy.vjp(o.aux, track, 2.0 * err);
        out.grad += g.params;
        out.weak += g.weak ? 1 : 0;
      }
      out.loss += err * err;
      ++out.samples;
      prev = std::move(o.aux);
    } catch (const PolicyError&) {
      ++out.skipped;
      prev.reset();
    }
  }
  return out;
}

Partial sl_slice(const Policy& policy, const Lap& lap, const Slice& slice, const Track& track, bool with_gradient) {
  Partial out;
  if (with_gradient) out.grad = Eigen::VectorXd::Zero(policy.num_params());
  const int n = policy.spec().horizon;
  const Mlp& net = policy.network();
  Eigen::VectorXd net_grad = Eigen::VectorXd::Zero(net.num_params());
  for (int t = slice.start; t + n < slice.start + slice.length; ++t) {
    const StateVector x = lap.state(t, policy.mode());
    const StateVector target = lap.state(t + n, policy.mode());
    Mlp::Tape tape;
    const Eigen::VectorXd y = net.forward(policy.scaling().apply(extract_features(x, track)), tape);
    const Eigen::VectorXd err = policy.head(y) - Eigen::Vector2d(target(sx::d), target(sx::phi));
    out.loss += err.squaredNorm();
    ++out.samples;
    if (with_gradient) net.backward(tape, 2.0 * err.cwiseProduct(policy.head_slope(y)), net_grad);
  }
  if (with_gradient) out.grad.head(net.num_params()) = net_grad;
  return out;
}

double wrapped_difference(double a, double b, double length) {
  double d = std::fmod(a - b, length);
  if (d > 0.5 * length) d -= length;
  if (d < -0.5 * length) d += length;
  return d;
}

std::vector<EpochStats> run_epochs(Policy& policy, const SlicedDataset& data, int epochs, Optimizer& opt,
                                   const std::function<Partial(const Policy&, const Slice&, bool)>& slice_fn,
                                   const std::function<bool(const EpochStats&)>& on_epoch, bool mean_per_slice) {
  std::vector<EpochStats> trace;
  for (int epoch = 1; epoch <= epochs; ++epoch) {
    EpochStats st;
    st.epoch = epoch;
    double loss_sum = 0.0;
    int loss_count = 0;
    for (const auto& batch : data.train) {
      std::vector<Partial> parts(batch.size());
      parallel_for(static_cast<int>(batch.size()), [&](int i) { parts[i] = slice_fn(policy, batch[i], true); });
      Partial total = reduce(parts, policy.num_params());
      st.skipped += total.skipped;
      st.weak += total.weak;
      st.samples += total.samples;
      const int denom = mean_per_slice ? static_cast<int>(batch.size()) - total.skipped : total.samples;
      if (denom <= 0) continue;
      loss_sum += total.loss;
      loss_count += denom;
      opt.step(policy, total.grad / denom);
    }
    st.train_loss = loss_count ? loss_sum / loss_count : 0.0;
    std::vector<Partial> parts(data.validation.size());
    parallel_for(static_cast<int>(parts.size()),
                 [&](int i) { parts[i] = slice_fn(policy, data.validation[i], false); });
    const Partial val = reduce(parts, 0);
    const int denom = mean_per_slice ? static_cast<int>(parts.size()) - val.skipped : val.samples;
    st.validation_loss = denom > 0 ? val.loss / denom : 0.0;
    trace.push_back(st);
    if (on_epoch && !on_epoch(st)) break;
  }
  return trace;
}

}  // namespace

StateVector Lap::state(int t, ControlMode mode) const {
  const StateVector& x = states.at(static_cast<std::size_t>(t));
  return mode == ControlMode::SteeringRate ? x : StateVector(x.head(5));
}

double Lap::action(int t, ControlMode mode) const {
  return mode == ControlMode::SteeringRate ? delta_rate.at(static_cast<std::size_t>(t))
                                           : states.at(static_cast<std::size_t>(t))(sx::delta);
}

LapTrace Lap::trace() const {
  LapTrace tr;
  for (const StateVector& x : states) {
    tr.sigma.push_back(x(sx::sigma));
    tr.d.push_back(x(sx::d));
  }
  return tr;
}

std::string lap_csv(const Lap& lap) {
  CsvWriter w(kLapHeader);
  for (int t = 0; t < lap.size(); ++t) {
    const StateVector& x = lap.states[t];
    w.add_row({t * lap.dt, x(0), x(1), x(2), x(3), x(4), x(5), lap.delta_rate[t]});
  }
  return w.str();
}

Lap parse_lap_csv(const std::filesystem::path& path, int id) {
  const CsvTable table = read_csv(path);
  std::vector<std::size_t> col;
  for (const auto& name : kLapHeader) col.push_back(table.column(name));
  Lap lap;
  lap.id = id;
  if (table.rows.size() < 2) throw InvalidArgument(fmt::format("{}: need at least two rows", path.string()));
  lap.dt = table.rows[1][col[0]] - table.rows[0][col[0]];
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    if (std::abs(row[col[0]] - r * lap.dt) > 1e-6) {
      throw InvalidArgument(fmt::format("{}: non-uniform time step at row {}", path.string(), r + 1));
    }
    StateVector x(6);
    for (int i = 0; i < 6; ++i) x(i) = row[col[1 + i]];
    lap.states.push_back(x);
    lap.delta_rate.push_back(row[col[7]]);
  }
  lap.dt = std::round(lap.dt * 1e9) / 1e9;
  return lap;
}

void ExpertProfile::validate() const {
  if (!(offset_std >= 0.0)) throw InvalidArgument("expert profile: offset_std must be >= 0");
  if (!(time_constant > 0.0)) throw InvalidArgument("expert profile: time_constant must be positive");
  if (!(lookahead > 0.0)) throw InvalidArgument("expert profile: lookahead must be positive");
}

nlohmann::json ExpertProfile::to_json() const {
  return {{"offset_mean", offset_mean}, {"offset_std", offset_std}, {"time_constant", time_constant},
          {"log_w_rate", log_w_rate},   {"lookahead", lookahead},   {"seed", seed}};
}

ExpertProfile ExpertProfile::from_json(const nlohmann::json& j) {
  ExpertProfile p;
  try {
    p.offset_mean = j.at("offset_mean").get<double>();
    p.offset_std = j.at("offset_std").get<double>();
    p.time_constant = j.at("time_constant").get<double>();
    p.log_w_rate = j.at("log_w_rate").get<double>();
    p.lookahead = j.at("lookahead").get<double>();
    p.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(fmt::format("expert profile: {}", e.what()));
  }
  p.validate();
  return p;
}

OcpSpec expert_ocp_spec(const Track& track, const ExpertProfile& profile, const VehicleParams& plant, double dt) {
  OcpSpec spec = OcpSpec::from_lookahead(profile.lookahead, plant.vx, dt, Variant::SetpointRate, track.width());
  spec.half_width = 3.0 * track.width();
  return spec;
}

Policy expert_policy(const Track& track, const ExpertProfile& profile, const VehicleParams& plant, double dt) {
  profile.validate();
  MpcParams theta = MpcParams::zeros(Variant::SetpointRate);
  theta.theta << profile.offset_mean, 0.0, profile.log_w_rate;
  return Policy::mpc(expert_ocp_spec(track, profile, plant, dt), theta, plant);
}

std::vector<Lap> generate_expert_laps(const Track& track, const ExpertProfile& profile, int n_laps,
                                      const VehicleParams& plant, double dt) {
  if (n_laps < 1) throw InvalidArgument("expert: n_laps must be positive");
  Policy expert = expert_policy(track, profile, plant, dt);
  const int lap_steps = static_cast<int>(std::lround(track.length() / (plant.vx * dt)));

  std::mt19937_64 rng(profile.seed);
  std::normal_distribution<double> normal;
  const double a = std::exp(-dt / profile.time_constant);
  const double b = profile.offset_std * std::sqrt(1.0 - a * a);
  double noise = profile.offset_std * normal(rng);

  Eigen::VectorXd theta = expert.params();
  StateVector x = StateVector::Zero(6);
  std::optional<PolicyAux> prev;
  std::vector<Lap> laps(static_cast<std::size_t>(n_laps));
  for (int i = 0; i < n_laps; ++i) {
    laps[i].id = i;
    laps[i].dt = dt;
  }
  for (int step = 0; step < (n_laps + 1) * lap_steps; ++step) {
    const int lap = step / lap_steps - 1;
    if (std::abs(x(sx::d)) > track.half_width()) {
      throw ExpertOffroadError(fmt::format("expert off-road: d={:.3f} m at sigma={:.1f} m (lap {})", x(sx::d),
                                           x(sx::sigma), lap + 1));
    }
    theta(0) = profile.offset_mean + noise;
    expert.set_params(theta);
    PolicyOutput out = expert.act(x, track, prev ? &*prev : nullptr);
    if (lap >= 0) {
      laps[lap].states.push_back(x);
      laps[lap].delta_rate.push_back(out.action);
    }
    x = rk4_step(x, out.action, ControlMode::SteeringRate, track, plant, dt);
    noise = a * noise + b * normal(rng);
    prev = std::move(out.aux);
  }
  return laps;
}

nlohmann::json DemoManifest::to_json() const {
  return {{"track_hash", fmt::format("{:016x}", track_hash)},
          {"vx", vx},
          {"dt", dt},
          {"profile", profile.to_json()},
          {"seed", seed},
          {"files", files}};
}

DemoManifest DemoManifest::from_json(const nlohmann::json& j) {
  DemoManifest m;
  try {
    m.track_hash = std::stoull(j.at("track_hash").get<std::string>(), nullptr, 16);
    m.vx = j.at("vx").get<double>();
    m.dt = j.at("dt").get<double>();
    m.profile = ExpertProfile::from_json(j.at("profile"));
    m.seed = j.at("seed").get<std::uint64_t>();
    m.files = j.at("files").get<std::vector<std::string>>();
  } catch (const std::exception& e) {
    throw InvalidArgument(fmt::format("demo manifest: {}", e.what()));
  }
  return m;
}

void write_demos(const std::filesystem::path& dir, const std::vector<Lap>& laps, const DemoManifest& manifest) {
  std::filesystem::create_directories(dir);
  DemoManifest m = manifest;
  m.files.clear();
  for (const Lap& lap : laps) {
    const std::string name = fmt::format("lap_{:02d}.csv", lap.id);
    write_text_file(dir / name, lap_csv(lap));
    m.files.push_back(name);
  }
  write_text_file(dir / "manifest.json", m.to_json().dump(2) + "\n");
}

std::vector<Lap> read_demos(const std::filesystem::path& dir, DemoManifest* manifest) {
  const DemoManifest m = DemoManifest::from_json(read_json(dir / "manifest.json"));
  std::vector<Lap> laps;
  for (std::size_t i = 0; i < m.files.size(); ++i) {
    laps.push_back(parse_lap_csv(dir / m.files[i], static_cast<int>(i)));
    if (std::abs(laps.back().dt - m.dt) > 1e-9) {
      throw InvalidArgument(fmt::format("{}: time step differs from the manifest", m.files[i]));
    }
  }
  if (laps.empty()) throw InvalidArgument(fmt::format("{}: manifest lists no laps", dir.string()));
  if (manifest) *manifest = m;
  return laps;
}

std::size_t SlicedDataset::num_slices() const {
  std::size_t n = validation.size();
  for (const auto& b : train) n += b.size();
  return n;
}

int slice_count(int lap_samples, int slice_samples) {
  const int stride = std::max(1, slice_samples / 2);
  if (lap_samples < slice_samples) return 0;
  return (lap_samples - slice_samples) / stride + 1;
}

SlicedDataset slice_dataset(const std::vector<Lap>& laps, double seconds, int batch_size, std::uint64_t seed) {
  if (laps.empty()) throw InvalidArgument("slice dataset: no laps");
  if (batch_size < 1) throw InvalidArgument("slice dataset: batch size must be positive");
  std::vector<Slice> slices;
  for (std::size_t l = 0; l < laps.size(); ++l) {
    const int len = static_cast<int>(std::lround(seconds / laps[l].dt));
    if (len < 2) throw InvalidArgument("slice dataset: slice shorter than two samples");
    if (laps[l].size() < len) {
      throw InvalidArgument(fmt::format("slice dataset: lap {} is shorter than {} s", laps[l].id, seconds));
    }
    const int stride = std::max(1, len / 2);
    for (int k = 0; k < slice_count(laps[l].size(), len); ++k) slices.push_back({static_cast<int>(l), k * stride, len});
  }
  seeded_shuffle(slices, seed);
  SlicedDataset out;
  for (std::size_t i = 0; i < slices.size(); i += static_cast<std::size_t>(batch_size)) {
    const auto end = slices.begin() + static_cast<long>(std::min(slices.size(), i + batch_size));
    out.train.emplace_back(slices.begin() + static_cast<long>(i), end);
  }
  if (out.train.size() < 2) throw InvalidArgument("slice dataset: need at least two batches (one for validation)");
  out.validation = std::move(out.train.back());
  out.train.pop_back();
  return out;
}

std::vector<double> Rollout::d() const {
  std::vector<double> v;
  for (const auto& x : states) v.push_back(x(sx::d));
  return v;
}

std::vector<double> Rollout::sigma() const {
  std::vector<double> v;
  for (const auto& x : states) v.push_back(x(sx::sigma));
  return v;
}

std::vector<double> Rollout::steering() const {
  std::vector<double> v;
  for (std::size_t t = 0; t < actions.size(); ++t) {
    v.push_back(states[t].size() == 6 ? states[t](sx::delta) : actions[t]);
  }
  return v;
}

Rollout rollout(const Policy& policy, const Plant& plant, const Track& track, const StateVector& s0, int steps,
                bool keep_aux) {
  Rollout r;
  r.planned_steps = steps;
  r.states.push_back(s0);
  std::optional<PolicyAux> prev;
  for (int t = 0; t < steps; ++t) {
    const StateVector& x = r.states.back();
    PolicyOutput out;
    StateVector next;
    try {
      out = policy.act(x, track, prev ? &*prev : nullptr);
      next = rk4_step(x, out.action, policy.mode(), track, plant.params, plant.dt);
      if (std::abs(next(sx::phi)) >= 0.5 * M_PI) {
        throw std::runtime_error(fmt::format("heading error {:.3f} rad, driving against the track", next(sx::phi)));
      }
    } catch (const std::exception& e) {
      r.truncated = true;
      r.reason = fmt::format("step {}: {}", t, e.what());
      break;
    }
    r.actions.push_back(out.action);
    r.states.push_back(next);
    if (keep_aux) r.aux.push_back(out.aux);
    prev = std::move(out.aux);
  }
  return r;
}

int worker_count() {
  int n = 1;
  if (const char* env = std::getenv("MIMIC_MPC_THREADS")) {
    try {
      n = std::stoi(env);
    } catch (const std::exception&) {
      throw InvalidArgument(fmt::format("MIMIC_MPC_THREADS: not an integer: '{}'", env));
    }
  }
  const int hw = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  return std::clamp(n, 1, hw);
}

void parallel_for(int n, const std::function<void(int)>& fn) {
  const int workers = std::min(worker_count(), n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

double Optimizer::step(Policy& policy, Eigen::VectorXd grad) {
  const double norm = grad.norm();
  if (clip_norm > 0.0 && norm > clip_norm) grad *= clip_norm / norm;
  Eigen::VectorXd p = policy.params();
  const int nn = policy.num_net_params();
  const int nm = policy.num_mpc_params();
  if (nn) {
    Eigen::VectorXd head = p.head(nn);
    net.step(head, grad.head(nn));
    p.head(nn) = head;
  }
  if (nm) {
    Eigen::VectorXd tail = p.tail(nm);
    mpc.step(tail, grad.tail(nm));
    p.tail(nm) = tail;
  }
  policy.set_params(p);
  return norm;
}

std::vector<EpochStats> train_bc(Policy& policy, const std::vector<Lap>& laps, const SlicedDataset& data,
                                 const Track& track, const TrainOptions& options) {
  Optimizer opt(options.lr_net, options.lr_mpc);
  return run_epochs(
      policy, data, options.epochs, opt,
      [&](const Policy& p, const Slice& s, bool grad) { return bc_slice(p, laps.at(s.lap), s, track, grad); },
      options.on_epoch, false);
}

std::vector<EpochStats> train_sl(Policy& policy, const std::vector<Lap>& laps, const SlicedDataset& data,
                                 const Track& track, const TrainOptions& options) {
  if (policy.kind() != PolicyKind::NN_MPC) throw InvalidArgument("train_sl: requires the nn_mpc policy kind");
  int longest = 0;
  for (const auto& b : data.train) {
    for (const Slice& s : b) longest = std::max(longest, s.length);
  }
  if (longest <= policy.spec().horizon) {
    throw InvalidArgument(fmt::format("train_sl: horizon of {} steps exceeds the slice length of {} samples",
                                      policy.spec().horizon, longest));
  }
  Optimizer opt(options.lr_net, options.lr_mpc);
  return run_epochs(
      policy, data, options.epochs, opt,
      [&](const Policy& p, const Slice& s, bool grad) { return sl_slice(p, laps.at(s.lap), s, track, grad); },
      options.on_epoch, false);
}

Eigen::VectorXd bptt(const std::vector<StepLinearization>& steps, const std::vector<Eigen::VectorXd>& loss_grad,
                     int num_params, const ActionVjp& vjp, int* weak) {
  const int n = static_cast<int>(steps.size());
  if (static_cast<int>(loss_grad.size()) < n + 1) throw InvalidArgument("bptt: need dL/ds_t for t = 0..T");
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(num_params);
  if (n == 0) return grad;
  Eigen::VectorXd s_bar = Eigen::VectorXd::Zero(steps.front().B.size());
  for (int t = n - 1; t >= 0; --t) {
    s_bar += loss_grad[t + 1];
    const PolicyGradient g = vjp(t, steps[t].B.dot(s_bar));
    grad += g.params;
    if (weak && g.weak) ++*weak;
    s_bar = steps[t].A.transpose() * s_bar + Eigen::VectorXd(g.state);
  }
  return grad;
}

ScGradient sc_gradient(const Policy& policy, const Plant& plant, const Track& track, const Lap& lap, const Slice& slice,
                       const ScOptions& options, bool with_gradient) {
  const ControlMode mode = policy.mode();
  const int steps = slice.length - 1;
  const Rollout r = rollout(policy, plant, track, lap.state(slice.start, mode), steps, with_gradient);
  ScGradient out;
  out.steps = static_cast<int>(r.actions.size());
  out.truncated = r.truncated;
  const int nx = state_dim(mode);

  // dL/ds_t for t = 1..steps reached.
  std::vector<StateVector> loss_grad(r.states.size(), StateVector::Zero(nx));
  const double scale = 1.0 / steps;
  for (std::size_t t = 1; t < r.states.size(); ++t) {
    const StateVector target = lap.state(slice.start + static_cast<int>(t), mode);
    for (int i = 0; i < nx; ++i) {
      if (!options.full_state_loss && i != sx::d) continue;
      const double e = i == sx::sigma ? wrapped_difference(r.states[t](i), target(i), track.length())
                                      : r.states[t](i) - target(i);
      out.loss += scale * e * e;
      loss_grad[t](i) = 2.0 * scale * e;
    }
  }

  Partial ol;
  if (options.ol_weight > 0.0) {
    ol = bc_slice(policy, lap, slice, track, with_gradient);
    if (ol.samples) out.loss += options.ol_weight * ol.loss / ol.samples;
  }
  if (!with_gradient) return out;

  const FrenetModel model(track, policy.model_params(), mode, plant.dt);
  std::vector<StepLinearization> lin(static_cast<std::size_t>(out.steps));
  std::vector<Eigen::VectorXd> g(loss_grad.begin(), loss_grad.end());
  for (int t = 0; t < out.steps; ++t) {
    StateMatrix A;
    StateVector B;
    model.linearize(r.states[t], r.actions[t], A, B);
    lin[t] = {A, B};
  }
  out.grad = bptt(
      lin, g, policy.num_params(), [&](int t, double a_bar) { return policy.vjp(r.aux[t], track, a_bar); },
      &out.weak);
  if (ol.samples) out.grad += options.ol_weight * ol.grad / ol.samples;
  return out;
}

std::vector<EpochStats> train_sc(Policy& policy, const Plant& plant, const std::vector<Lap>& laps,
                                 const SlicedDataset& data, const Track& track, const ScOptions& options) {
  Optimizer opt(options.lr_net, options.lr_mpc);
  opt.clip_norm = options.clip_norm;
  auto fn = [&](const Policy& p, const Slice& s, bool grad) {
    Partial part;
    try {
      const ScGradient g = sc_gradient(p, plant, track, laps.at(s.lap), s, options, grad);
      part.loss = g.loss;
      part.grad = g.grad;
      part.samples = 1;
      part.weak = g.weak;
    } catch (const PolicyError&) {
      part.skipped = 1;
    }
    return part;
  };
  return run_epochs(policy, data, options.epochs, opt, fn, options.on_epoch, true);
}

MeanStd policy_ol_error(const Policy& policy, const std::vector<Lap>& laps, const std::vector<Slice>& slices,
                        const Track& track) {
  std::vector<std::vector<double>> per(slices.size());
  parallel_for(static_cast<int>(slices.size()), [&](int i) {
    const Slice& s = slices[i];
    const Lap& lap = laps.at(s.lap);
    std::optional<PolicyAux> prev;
    for (int t = s.start; t < s.start + s.length; ++t) {
      try {
        PolicyOutput o = policy.act(lap.state(t, policy.mode()), track, prev ? &*prev : nullptr);
        per[i].push_back(std::abs(o.action - lap.action(t, policy.mode())));
        prev = std::move(o.aux);
      } catch (const PolicyError&) {
        prev.reset();
      }
    }
  });
  std::vector<double> all;
  for (const auto& v : per) all.insert(all.end(), v.begin(), v.end());
  return mean_std(all);
}

}  // namespace mimic
