#include "mimic/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "mimic/errors.hpp"
#include "mimic/io.hpp"

namespace mimic {

namespace {

constexpr double kRadToDeg = 180.0 / std::numbers::pi;

int wrap_bin(long i, int n) {
  const long m = i % n;
  return static_cast<int>(m < 0 ? m + n : m);
}

double interpolate(const std::vector<double>& v, double sigma, double bin_width, double length) {
  const int n = static_cast<int>(v.size());
  double s = std::fmod(sigma, length);
  if (s < 0.0) s += length;
  const double pos = s / bin_width - 0.5;
  const double f = std::floor(pos);
  const double frac = pos - f;
  const long i0 = static_cast<long>(f);
  return (1.0 - frac) * v[wrap_bin(i0, n)] + frac * v[wrap_bin(i0 + 1, n)];
}

// Values where the sampled signal changes direction.
std::vector<double> stationary_points(const std::vector<double>& x) {
  std::vector<double> out;
  int prev = 0;
  for (std::size_t i = 1; i < x.size(); ++i) {
    const double diff = x[i] - x[i - 1];
    const int dir = diff > 0.0 ? 1 : (diff < 0.0 ? -1 : 0);
    if (dir == 0) continue;
    if (prev != 0 && dir != prev) out.push_back(x[i - 1]);
    prev = dir;
  }
  return out;
}

// Rises of at least `gap` from a running minimum, restarting after each.
int count_upward_reversals(const std::vector<double>& theta, double gap) {
  int count = 0;
  std::size_t k = 0;
  for (std::size_t l = 1; l < theta.size(); ++l) {
    if (theta[l] - theta[k] >= gap) {
      ++count;
      k = l;
    } else if (theta[l] < theta[k]) {
      k = l;
    }
  }
  return count;
}

struct Biquad {
  double b0, b1, b2, a1, a2;
};

Biquad butterworth_lowpass(double cutoff_hz, double dt) {
  const double k = std::tan(std::numbers::pi * cutoff_hz * dt);
  const double norm = 1.0 / (1.0 + std::numbers::sqrt2 * k + k * k);
  Biquad f;
  f.b0 = k * k * norm;
  f.b1 = 2.0 * f.b0;
  f.b2 = f.b0;
  f.a1 = 2.0 * (k * k - 1.0) * norm;
  f.a2 = (1.0 - std::numbers::sqrt2 * k + k * k) * norm;
  return f;
}

// Transposed direct form II, started in steady state for the first sample.
void filter_inplace(const Biquad& f, std::vector<double>& x) {
  double z1 = (1.0 - f.b0) * x.front();
  double z2 = (f.b2 - f.a2) * x.front();
  for (double& v : x) {
    const double in = v;
    const double y = f.b0 * in + z1;
    z1 = f.b1 * in - f.a1 * y + z2;
    z2 = f.b2 * in - f.a2 * y;
    v = y;
  }
}

}  // namespace

MeanStd mean_std(const std::vector<double>& values) {
  MeanStd out;
  if (values.empty()) return out;
  double sum = 0.0;
  for (double v : values) sum += v;
  out.mean = sum / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - out.mean) * (v - out.mean);
  out.std = std::sqrt(ss / static_cast<double>(values.size()));
  return out;
}

double ReferenceStats::mean_at(double sigma) const { return interpolate(mean, sigma, bin_width, track_length); }
double ReferenceStats::var_at(double sigma) const { return interpolate(var, sigma, bin_width, track_length); }

int ReferenceStats::num_interpolated() const {
  return static_cast<int>(std::count(interpolated.begin(), interpolated.end(), true));
}

std::string ReferenceStats::csv() const {
  std::string out = "sigma_m,mean_d,var_d,interpolated\n";
  for (int i = 0; i < num_bins(); ++i) {
    out += fmt::format("{},{},{},{}\n", format_double(center(i)), format_double(mean[i]), format_double(var[i]),
                       interpolated[i] ? 1 : 0);
  }
  return out;
}

ReferenceStats build_reference_stats(const std::vector<LapTrace>& laps, double track_length,
                                     const ReferenceOptions& options) {
  if (laps.size() < 2) throw InvalidArgument("reference stats: need at least two laps");
  if (track_length <= 0.0 || options.bin_width <= 0.0) throw InvalidArgument("reference stats: invalid binning");
  const int n = std::max(1, static_cast<int>(std::ceil(track_length / options.bin_width - 1e-9)));
  std::vector<double> sum(n, 0.0), sum_sq(n, 0.0);
  std::vector<int> count(n, 0);
  for (const LapTrace& lap : laps) {
    if (lap.sigma.size() != lap.d.size()) throw InvalidArgument("reference stats: sigma and d lengths differ");
    for (std::size_t t = 0; t < lap.d.size(); ++t) {
      double s = std::fmod(lap.sigma[t], track_length);
      if (s < 0.0) s += track_length;
      const int b = std::min(n - 1, static_cast<int>(s / options.bin_width));
      sum[b] += lap.d[t];
      ++count[b];
    }
  }
  ReferenceStats st;
  st.bin_width = options.bin_width;
  st.track_length = track_length;
  st.var_floor = options.var_floor;
  st.mean.assign(n, 0.0);
  st.var.assign(n, 0.0);
  st.interpolated.assign(n, false);
  for (int b = 0; b < n; ++b) {
    if (count[b]) st.mean[b] = sum[b] / count[b];
  }
  for (const LapTrace& lap : laps) {
    for (std::size_t t = 0; t < lap.d.size(); ++t) {
      double s = std::fmod(lap.sigma[t], track_length);
      if (s < 0.0) s += track_length;
      const int b = std::min(n - 1, static_cast<int>(s / options.bin_width));
      sum_sq[b] += (lap.d[t] - st.mean[b]) * (lap.d[t] - st.mean[b]);
    }
  }
  std::vector<int> filled;
  for (int b = 0; b < n; ++b) {
    if (!count[b]) continue;
    st.var[b] = std::max(sum_sq[b] / count[b], options.var_floor);
    filled.push_back(b);
  }
  if (filled.empty()) throw InvalidArgument("reference stats: laps contain no samples");
  for (int b = 0; b < n; ++b) {
    if (count[b]) continue;
    st.interpolated[b] = true;
    // Nearest filled neighbours on either side, around the loop.
    auto next = std::upper_bound(filled.begin(), filled.end(), b);
    const int hi = next == filled.end() ? filled.front() + n : *next;
    const int lo = next == filled.begin() ? filled.back() - n : *(next - 1);
    const double w = static_cast<double>(b - lo) / (hi - lo);
    st.mean[b] = (1.0 - w) * st.mean[wrap_bin(lo, n)] + w * st.mean[wrap_bin(hi, n)];
    st.var[b] = (1.0 - w) * st.var[wrap_bin(lo, n)] + w * st.var[wrap_bin(hi, n)];
  }
  if (options.smoothing_bins > 1) {
    const int half = options.smoothing_bins / 2;
    std::vector<double> smooth(n, 0.0);
    for (int b = 0; b < n; ++b) {
      double acc = 0.0;
      for (int o = -half; o < options.smoothing_bins - half; ++o) acc += st.var[wrap_bin(b + o, n)];
      smooth[b] = acc / options.smoothing_bins;
    }
    st.var = std::move(smooth);
  }
  return st;
}

double cl_likelihood(const std::vector<double>& sigma, const std::vector<double>& d, const ReferenceStats& stats,
                     LikelihoodPrefactor prefactor) {
  if (sigma.size() != d.size()) throw InvalidArgument("cl likelihood: sigma and d lengths differ");
  if (d.empty()) return 0.0;
  const double T = static_cast<double>(d.size());
  double acc = 0.0;
  for (std::size_t t = 0; t < d.size(); ++t) {
    const double mu = stats.mean_at(sigma[t]);
    const double var = stats.var_at(sigma[t]);
    const double density = std::exp(-(d[t] - mu) * (d[t] - mu) / (2.0 * var)) / std::sqrt(2.0 * std::numbers::pi * var);
    acc += prefactor == LikelihoodPrefactor::Mean ? density : density * static_cast<double>(t + 1) / T;
  }
  return prefactor == LikelihoodPrefactor::Mean ? acc / T : acc;
}

MeanStd ol_error(const std::vector<double>& predicted, const std::vector<double>& recorded) {
  if (predicted.size() != recorded.size()) throw InvalidArgument("ol error: action lengths differ");
  std::vector<double> err(predicted.size());
  for (std::size_t i = 0; i < err.size(); ++i) err[i] = std::abs(predicted[i] - recorded[i]);
  return mean_std(err);
}

int offroad_count(const std::vector<double>& d, double half_width, int planned_steps) {
  int count = 0;
  for (double v : d) count += std::abs(v) > half_width ? 1 : 0;
  const int missing = planned_steps - static_cast<int>(d.size());
  return count + std::max(0, missing);
}

std::vector<double> lateral_acceleration(const std::vector<StateVector>& states, const std::vector<double>& controls,
                                         ControlMode mode, const Track& track, const VehicleParams& params) {
  if (states.empty()) return {};
  if (controls.empty()) throw InvalidArgument("lateral acceleration: no controls");
  std::vector<double> a(states.size());
  for (std::size_t t = 0; t < states.size(); ++t) {
    const double u = controls[std::min(t, controls.size() - 1)];
    const StateVector dx = continuous_derivative(states[t], u, mode, track, params);
    a[t] = params.vx * (states[t](sx::psi_dot) + dx(sx::beta));
  }
  return a;
}

std::vector<double> lateral_jerk(const std::vector<double>& a_y, double dt) {
  const std::size_t n = a_y.size();
  if (n < 3) throw InvalidArgument("lateral jerk: need at least three samples");
  std::vector<double> j(n);
  j[0] = (a_y[1] - a_y[0]) / dt;
  j[n - 1] = (a_y[n - 1] - a_y[n - 2]) / dt;
  for (std::size_t t = 1; t + 1 < n; ++t) j[t] = (a_y[t + 1] - a_y[t - 1]) / (2.0 * dt);
  return j;
}

MeanStd jerk_stats(const std::vector<double>& j_y, bool signed_stats) {
  if (signed_stats) return mean_std(j_y);
  std::vector<double> mag(j_y.size());
  for (std::size_t i = 0; i < j_y.size(); ++i) mag[i] = std::abs(j_y[i]);
  return mean_std(mag);
}

std::vector<double> zero_phase_lowpass(const std::vector<double>& x, double cutoff_hz, double dt) {
  if (x.empty()) return {};
  const Biquad f = butterworth_lowpass(cutoff_hz, dt);
  // Odd reflection at both ends limits the start-up transient.
  const std::size_t pad = std::min<std::size_t>(x.size() - 1, 9);
  std::vector<double> ext;
  ext.reserve(x.size() + 2 * pad);
  for (std::size_t i = pad; i >= 1; --i) ext.push_back(2.0 * x.front() - x[i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::size_t i = 1; i <= pad; ++i) ext.push_back(2.0 * x.back() - x[x.size() - 1 - i]);
  filter_inplace(f, ext);
  std::reverse(ext.begin(), ext.end());
  filter_inplace(f, ext);
  std::reverse(ext.begin(), ext.end());
  return {ext.begin() + static_cast<long>(pad), ext.end() - static_cast<long>(pad)};
}

double srr_hand_wheel(const std::vector<double>& hand_wheel, double dt, const SrrOptions& options) {
  if (hand_wheel.size() < 2) return 0.0;
  std::vector<double> deg = zero_phase_lowpass(hand_wheel, options.cutoff_hz, dt);
  for (double& v : deg) v *= kRadToDeg;
  std::vector<double> theta = stationary_points(deg);
  if (theta.empty()) return 0.0;
  int count = count_upward_reversals(theta, options.gap_deg);
  for (double& v : theta) v = -v;
  count += count_upward_reversals(theta, options.gap_deg);
  const double minutes = static_cast<double>(hand_wheel.size()) * dt / 60.0;
  return count / minutes;
}

double srr(const std::vector<double>& road_wheel, double dt, double steering_ratio, const SrrOptions& options) {
  std::vector<double> hw(road_wheel.size());
  for (std::size_t i = 0; i < hw.size(); ++i) hw[i] = steering_ratio * road_wheel[i];
  return srr_hand_wheel(hw, dt, options);
}

nlohmann::json MetricsReport::to_json() const {
  return {{"configuration", {{"policy", policy}, {"algorithm", algorithm}, {"action", action}, {"d_la", lookahead}}},
          {"ol_error", {{"mean", ol_error.mean}, {"std", ol_error.std}}},
          {"cl_likelihood", cl_likelihood},
          {"offroad_count", offroad},
          {"jerk", {{"mean", jerk.mean}, {"std", jerk.std}}},
          {"d", {{"mean", d.mean}, {"std", d.std}}},
          {"srr", srr},
          {"steps", steps},
          {"truncated", truncated}};
}

MetricsReport MetricsReport::from_json(const nlohmann::json& j) {
  MetricsReport r;
  try {
    const auto& c = j.at("configuration");
    r.policy = c.at("policy").get<std::string>();
    r.algorithm = c.at("algorithm").get<std::string>();
    r.action = c.at("action").get<std::string>();
    r.lookahead = c.at("d_la").get<double>();
    r.ol_error = {j.at("ol_error").at("mean").get<double>(), j.at("ol_error").at("std").get<double>()};
    r.cl_likelihood = j.at("cl_likelihood").get<double>();
    r.offroad = j.at("offroad_count").get<int>();
    r.jerk = {j.at("jerk").at("mean").get<double>(), j.at("jerk").at("std").get<double>()};
    r.d = {j.at("d").at("mean").get<double>(), j.at("d").at("std").get<double>()};
    r.srr = j.at("srr").get<double>();
    r.steps = j.at("steps").get<int>();
    r.truncated = j.at("truncated").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(fmt::format("metrics report: {}", e.what()));
  }
  return r;
}

std::string render_table(const std::vector<MetricsReport>& reports) {
  const std::vector<std::string> header = {"Policy", "Algorithm", "a",        "d_la", "OL error",
                                           "CL",     "Off-road",  "j_y",      "d",    "SRR"};
  std::vector<std::vector<std::string>> rows = {header};
  auto pm = [](const MeanStd& v) { return fmt::format("{:.2f} +- {:.2f}", v.mean, v.std); };
  for (const MetricsReport& r : reports) {
    rows.push_back({r.policy, r.algorithm, r.action, fmt::format("{:.2f}", r.lookahead),
                    fmt::format("{:.3f} +- {:.3f}", r.ol_error.mean, r.ol_error.std),
                    fmt::format("{:.2f}", r.cl_likelihood), fmt::format("{}", r.offroad), pm(r.jerk), pm(r.d),
                    fmt::format("{:.2f}", r.srr)});
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  // Column groups: configuration | imitation | safety | comfort | human-like.
  const std::vector<std::size_t> group_end = {3, 5, 6, 7};
  std::string out;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::string line;
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      if (c) line += std::find(group_end.begin(), group_end.end(), c - 1) != group_end.end() ? " | " : "  ";
      line += fmt::format("{:<{}}", rows[r][c], width[c]);
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out += line + "\n";
    if (r == 0) out += std::string(line.size(), '-') + "\n";
  }
  return out;
}

}  // namespace mimic
