#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "mimic/track.hpp"
#include "mimic/vehicle.hpp"

namespace mimic {

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population
};

MeanStd mean_std(const std::vector<double>& values);

/// Lateral deviation d(sigma) traced by one lap.
struct LapTrace {
  std::vector<double> sigma;
  std::vector<double> d;
};

/// Independent Gaussians of the expert lateral deviation per arclength bin.
struct ReferenceStats {
  double bin_width = 1.0;
  double track_length = 0.0;
  double var_floor = 1e-4;
  std::vector<double> mean;
  std::vector<double> var;
  std::vector<bool> interpolated;  // bin held no samples

  int num_bins() const { return static_cast<int>(mean.size()); }
  double center(int bin) const { return (bin + 0.5) * bin_width; }
  /// Linear interpolation between bin centers, periodic in sigma.
  double mean_at(double sigma) const;
  double var_at(double sigma) const;
  int num_interpolated() const;

  /// CSV sigma_m,mean_d,var_d,interpolated.
  std::string csv() const;
};

struct ReferenceOptions {
  double bin_width = 1.0;
  double var_floor = 1e-4;
  int smoothing_bins = 5;  // moving average over the variance
};

ReferenceStats build_reference_stats(const std::vector<LapTrace>& laps, double track_length,
                                     const ReferenceOptions& options = {});

enum class LikelihoodPrefactor {
  Mean,     // (1/T) sum_t
  Literal,  // sum_t (t/T)
};

/// Mean Gaussian density of d_t under the per-bin expert statistics.
double cl_likelihood(const std::vector<double>& sigma, const std::vector<double>& d, const ReferenceStats& stats,
                     LikelihoodPrefactor prefactor = LikelihoodPrefactor::Mean);

/// |a_t - a*_t| aggregated over samples.
MeanStd ol_error(const std::vector<double>& predicted, const std::vector<double>& recorded);

/// Steps with |d| > half_width, plus every step a truncated rollout did not reach.
int offroad_count(const std::vector<double>& d, double half_width, int planned_steps = 0);

/// a_y = vx (psi_dot + beta_dot) with beta_dot from the continuous model.
std::vector<double> lateral_acceleration(const std::vector<StateVector>& states, const std::vector<double>& controls,
                                         ControlMode mode, const Track& track, const VehicleParams& params);

/// Central differences of a_y; one-sided at both ends.
std::vector<double> lateral_jerk(const std::vector<double>& a_y, double dt);

/// Statistics of |j_y| (or of signed j_y).
MeanStd jerk_stats(const std::vector<double>& j_y, bool signed_stats = false);

/// Second-order Butterworth low-pass applied forward and backward.
std::vector<double> zero_phase_lowpass(const std::vector<double>& x, double cutoff_hz, double dt);

struct SrrOptions {
  double cutoff_hz = 0.6;
  double gap_deg = 5.0;
};

/// Reversals per minute of a hand-wheel angle trace (rad).
double srr_hand_wheel(const std::vector<double>& hand_wheel, double dt, const SrrOptions& options = {});

/// Road-wheel steering converted to hand-wheel angle through the steering ratio.
double srr(const std::vector<double>& road_wheel, double dt, double steering_ratio, const SrrOptions& options = {});

struct MetricsReport {
  std::string policy;
  std::string algorithm;
  std::string action;
  double lookahead = 0.0;
  MeanStd ol_error;
  double cl_likelihood = 0.0;
  int offroad = 0;
  MeanStd jerk;
  MeanStd d;
  double srr = 0.0;
  int steps = 0;
  bool truncated = false;

  nlohmann::json to_json() const;
  static MetricsReport from_json(const nlohmann::json& j);
};

/// Aligned text table with one row per report.
std::string render_table(const std::vector<MetricsReport>& reports);

}  // namespace mimic
