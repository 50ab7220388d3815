#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <json.hpp>

#include "mimic/autodiff.hpp"

namespace mimic {

struct TrackSegment {
  double length = 0.0;     // m
  double curvature = 0.0;  // 1/m
};

/// Piecewise-constant curvature description of a closed track.
struct TrackSpec {
  double length = 1200.0;
  double width = 3.5;
  double delta_sigma = 1.0;
  double ramp_length = 10.0;
  std::vector<TrackSegment> segments;
};

/// Closed, arclength-parametrized curvature profile sampled on a uniform grid.
///
/// Curvature is linearly interpolated between samples and periodic in sigma.
class Track {
 public:
  Track(std::vector<double> kappa_samples, double delta_sigma, double width, bool closed = true);

  double length() const { return delta_sigma_ * static_cast<double>(closed_ ? kappa_.size() : kappa_.size() - 1); }
  double width() const { return width_; }
  double half_width() const { return 0.5 * width_; }
  double delta_sigma() const { return delta_sigma_; }
  bool closed() const { return closed_; }
  std::span<const double> samples() const { return kappa_; }

  double wrap(double sigma) const;

  double curvature(double sigma) const { return curvature_at(sigma); }

  /// d kappa / d sigma of the interpolant (right-sided at sample points).
  double curvature_slope(double sigma) const;

  /// Largest |slope| between adjacent samples; a Lipschitz bound for curvature().
  double max_slope() const;

  /// Curvature evaluated on a forward-mode scalar. The segment is selected from
  /// the primal value; the derivative is the slope of that segment.
  template <class T>
  T curvature_at(const T& sigma) const {
    const Locator loc = locate(value_of(sigma));
    const double k0 = kappa_[loc.i0];
    const double k1 = kappa_[loc.i1];
    const double slope = (k1 - k0) / delta_sigma_;
    // sigma - loc.offset is the local coordinate inside [0, delta_sigma).
    return T(k0) + slope * (sigma - loc.offset);
  }

  /// FNV-1a over the sample bytes, width and spacing.
  std::uint64_t hash() const;

 private:
  struct Locator {
    std::size_t i0;
    std::size_t i1;
    double offset;  // sigma value (unwrapped frame) of sample i0
  };
  Locator locate(double sigma) const;

  std::vector<double> kappa_;
  double delta_sigma_;
  double width_;
  bool closed_;
};

/// Samples a segment list at spec.delta_sigma, blending adjacent segments with
/// linear ramps of spec.ramp_length centered on each joint (including the
/// closing joint between the last and first segment).
Track build_track(const TrackSpec& spec);

/// Seven curves separated by straights, 1200 m total.
TrackSpec default_track_spec();

/// Accepts either a bare segment list or an object with `length_m`,
/// `width_m`, `delta_sigma_m`, `ramp_m` and `segments`.
TrackSpec parse_track_spec(const nlohmann::json& j);

/// Number of maximal runs of >= 3 equal, nonzero samples.
int count_curvature_plateaus(const Track& track);

/// Writes `track.csv` (sigma_m,kappa_per_m) and `track.json` into `dir`.
void write_track(const Track& track, const std::filesystem::path& dir);

/// Reads a track CSV; the JSON sidecar next to it supplies width and spacing.
Track read_track(const std::filesystem::path& csv_path);

}  // namespace mimic
