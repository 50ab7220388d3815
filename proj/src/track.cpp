#include "mimic/track.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "mimic/errors.hpp"
#include "mimic/io.hpp"

namespace mimic {

SingularityError::SingularityError(double sigma, double d, double margin)
    : std::domain_error(fmt::format(
          "Frenet singularity guard violated at sigma={:.6g} m, d={:.6g} m (1 - kappa*d = {:.6g} < 0.5)", sigma,
          d, margin)),
      sigma_(sigma),
      d_(d) {}

Track::Track(std::vector<double> kappa_samples, double delta_sigma, double width, bool closed)
    : kappa_(std::move(kappa_samples)), delta_sigma_(delta_sigma), width_(width), closed_(closed) {
  if (kappa_.size() < 2) throw InvalidArgument("track needs at least 2 curvature samples");
  if (!(delta_sigma_ > 0.0)) throw InvalidArgument("track sample spacing must be positive");
  if (!(width_ > 0.0)) throw InvalidArgument("track width must be positive");
}

double Track::wrap(double sigma) const {
  if (!closed_) return sigma;
  const double len = length();
  double s = std::fmod(sigma, len);
  if (s < 0.0) s += len;
  if (s >= len) s -= len;
  return s;
}

Track::Locator Track::locate(double sigma) const {
  const std::size_t n = kappa_.size();
  if (!closed_) {
    const double s = std::clamp(sigma, 0.0, length());
    auto i0 = static_cast<std::size_t>(std::floor(s / delta_sigma_));
    i0 = std::min(i0, n - 2);
    if (sigma < 0.0 || sigma > length()) {
      // Constant extension beyond the ends.
      const std::size_t edge = sigma < 0.0 ? 0 : n - 1;
      return {edge, edge, sigma};
    }
    return {i0, i0 + 1, static_cast<double>(i0) * delta_sigma_};
  }
  const double s = wrap(sigma);
  auto i0 = static_cast<std::size_t>(std::floor(s / delta_sigma_));
  if (i0 >= n) i0 = n - 1;
  const double local = s - static_cast<double>(i0) * delta_sigma_;
  return {i0, (i0 + 1) % n, sigma - local};
}

double Track::curvature_slope(double sigma) const {
  const Locator loc = locate(sigma);
  return (kappa_[loc.i1] - kappa_[loc.i0]) / delta_sigma_;
}

double Track::max_slope() const {
  double out = 0.0;
  const std::size_t n = kappa_.size();
  const std::size_t pairs = closed_ ? n : n - 1;
  for (std::size_t i = 0; i < pairs; ++i) {
    out = std::max(out, std::abs(kappa_[(i + 1) % n] - kappa_[i]) / delta_sigma_);
  }
  return out;
}

std::uint64_t Track::hash() const {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  mix(kappa_.data(), kappa_.size() * sizeof(double));
  mix(&delta_sigma_, sizeof(double));
  mix(&width_, sizeof(double));
  return h;
}

Track build_track(const TrackSpec& spec) {
  if (spec.segments.empty()) throw InvalidArgument("track spec has no segments");
  if (!(spec.delta_sigma > 0.0)) throw InvalidArgument("track spec: delta_sigma_m must be positive");
  if (!(spec.width > 0.0)) throw InvalidArgument("track spec: width_m must be positive");
  if (spec.ramp_length < 0.0) throw InvalidArgument("track spec: ramp_m must be nonnegative");
  double total = 0.0;
  for (const auto& seg : spec.segments) {
    if (!(seg.length > 0.0)) throw InvalidArgument("track spec: segment length_m must be positive");
    if (seg.length < spec.ramp_length) {
      throw InvalidArgument(fmt::format("track spec: segment length_m {} shorter than ramp {}", seg.length,
                                        spec.ramp_length));
    }
    total += seg.length;
  }
  if (std::abs(total - spec.length) > 1e-9 * std::max(1.0, spec.length)) {
    throw InvalidArgument(
        fmt::format("track spec: segments sum to {} m but length_m is {} m", total, spec.length));
  }
  const double samples_f = spec.length / spec.delta_sigma;
  const auto n = static_cast<std::size_t>(std::llround(samples_f));
  if (std::abs(samples_f - static_cast<double>(n)) > 1e-9 || n < 2) {
    throw InvalidArgument("track spec: length_m must be a multiple of delta_sigma_m");
  }

  // Joint j sits at the start of segment j; joint 0 closes the loop.
  const std::size_t m = spec.segments.size();
  std::vector<double> starts(m);
  double acc = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    starts[j] = acc;
    acc += spec.segments[j].length;
  }

  const double half_ramp = 0.5 * spec.ramp_length;
  std::vector<double> kappa(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double s = static_cast<double>(i) * spec.delta_sigma;
    std::size_t seg = m - 1;
    for (std::size_t j = 0; j < m; ++j) {
      if (s < starts[j] + spec.segments[j].length) {
        seg = j;
        break;
      }
    }
    double value = spec.segments[seg].curvature;
    if (half_ramp > 0.0) {
      for (std::size_t j = 0; j < m; ++j) {
        const double prev = spec.segments[(j + m - 1) % m].curvature;
        const double next = spec.segments[j].curvature;
        // Signed distance to joint j, taken on the circle.
        double delta = s - starts[j];
        if (delta > 0.5 * spec.length) delta -= spec.length;
        if (delta < -0.5 * spec.length) delta += spec.length;
        if (std::abs(delta) < half_ramp) {
          value = prev + (next - prev) * (delta + half_ramp) / spec.ramp_length;
          break;
        }
      }
    }
    kappa[i] = value;
  }
  return Track(std::move(kappa), spec.delta_sigma, spec.width, true);
}

TrackSpec default_track_spec() {
  TrackSpec spec;
  spec.segments = {
      {120.0, 0.0}, {110.0, 1.0 / 80.0},  {70.0, 0.0}, {90.0, -1.0 / 60.0},   {80.0, 0.0},
      {130.0, 1.0 / 120.0}, {60.0, 0.0}, {80.0, -1.0 / 90.0}, {70.0, 0.0},  {100.0, 1.0 / 70.0},
      {60.0, 0.0}, {70.0, -1.0 / 100.0}, {50.0, 0.0}, {110.0, 1.0 / 150.0},
  };
  return spec;
}

namespace {

template <class T>
T required(const nlohmann::json& j, const char* key, const char* where) {
  if (!j.contains(key)) throw InvalidArgument(fmt::format("{}: missing field '{}'", where, key));
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw InvalidArgument(fmt::format("{}: field '{}' has the wrong type", where, key));
  }
}

}  // namespace

TrackSpec parse_track_spec(const nlohmann::json& j) {
  TrackSpec spec;
  const nlohmann::json* segments = &j;
  bool declared_length = false;
  if (j.is_object()) {
    if (j.contains("length_m")) {
      spec.length = required<double>(j, "length_m", "track spec");
      declared_length = true;
    }
    if (j.contains("width_m")) spec.width = required<double>(j, "width_m", "track spec");
    if (j.contains("delta_sigma_m")) spec.delta_sigma = required<double>(j, "delta_sigma_m", "track spec");
    if (j.contains("ramp_m")) spec.ramp_length = required<double>(j, "ramp_m", "track spec");
    if (!j.contains("segments")) throw InvalidArgument("track spec: missing field 'segments'");
    segments = &j.at("segments");
  }
  if (!segments->is_array()) throw InvalidArgument("track spec: 'segments' must be a list");
  for (std::size_t i = 0; i < segments->size(); ++i) {
    const auto& s = (*segments)[i];
    const std::string where = fmt::format("track spec segment {}", i);
    if (!s.is_object()) throw InvalidArgument(where + ": expected an object");
    spec.segments.push_back({required<double>(s, "length_m", where.c_str()),
                             required<double>(s, "curvature_per_m", where.c_str())});
  }
  if (!declared_length) {
    spec.length = 0.0;
    for (const auto& seg : spec.segments) spec.length += seg.length;
  }
  return spec;
}

int count_curvature_plateaus(const Track& track) {
  const auto k = track.samples();
  const std::size_t n = k.size();
  // Start scanning at a sample that differs from its predecessor so a plateau
  // straddling the wrap point is counted once.
  std::size_t start = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (k[i] != k[(i + n - 1) % n]) {
      start = i;
      break;
    }
  }
  int count = 0;
  std::size_t run = 0;
  double value = k[start];
  for (std::size_t step = 0; step <= n; ++step) {
    const double v = k[(start + step) % n];
    if (step < n && v == value) {
      ++run;
      continue;
    }
    if (value != 0.0 && run >= 3) ++count;
    value = v;
    run = 1;
  }
  return count;
}

void write_track(const Track& track, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ostringstream csv;
  csv << "sigma_m,kappa_per_m\n";
  const auto k = track.samples();
  for (std::size_t i = 0; i < k.size(); ++i) {
    csv << format_double(static_cast<double>(i) * track.delta_sigma()) << ',' << format_double(k[i]) << '\n';
  }
  write_text_file(dir / "track.csv", csv.str());
  nlohmann::ordered_json side;
  side["length_m"] = track.length();
  side["width_m"] = track.width();
  side["delta_sigma_m"] = track.delta_sigma();
  write_text_file(dir / "track.json", side.dump(2) + "\n");
}

Track read_track(const std::filesystem::path& csv_path) {
  const CsvTable table = read_csv(csv_path);
  const std::size_t col = table.column("kappa_per_m");
  std::vector<double> kappa;
  kappa.reserve(table.rows.size());
  for (const auto& row : table.rows) kappa.push_back(row[col]);

  std::filesystem::path sidecar = csv_path;
  sidecar.replace_extension(".json");
  if (!std::filesystem::exists(sidecar)) {
    throw InvalidArgument(fmt::format("track sidecar {} not found", sidecar.string()));
  }
  const nlohmann::json side = nlohmann::json::parse(read_text_file(sidecar));
  const double ds = required<double>(side, "delta_sigma_m", "track sidecar");
  const double width = required<double>(side, "width_m", "track sidecar");
  const double length = required<double>(side, "length_m", "track sidecar");
  Track track(std::move(kappa), ds, width, true);
  if (std::abs(track.length() - length) > 1e-9 * length) {
    throw InvalidArgument(fmt::format("track sidecar length {} disagrees with {} samples", length,
                                      track.samples().size()));
  }
  return track;
}

}  // namespace mimic
