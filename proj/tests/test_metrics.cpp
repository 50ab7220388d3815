#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "mimic/metrics.hpp"
#include "test_util.hpp"

namespace mimic {
namespace {

constexpr double kPi = std::numbers::pi;

LapTrace constant_lap(double d, double length = 100.0, double ds = 0.25) {
  LapTrace lap;
  for (double s = 0.0; s < length; s += ds) {
    lap.sigma.push_back(s);
    lap.d.push_back(d);
  }
  return lap;
}

std::vector<double> sinusoid(double amplitude, double hz, double seconds, double dt) {
  std::vector<double> x;
  for (int i = 0; i < static_cast<int>(std::lround(seconds / dt)); ++i) x.push_back(amplitude * std::sin(2 * kPi * hz * i * dt));
  return x;
}

// Brute force on the raw samples: local extrema by neighbour comparison, then
// count consecutive extremum pairs at least `gap` apart.
int brute_force_reversals(const std::vector<double>& x, double gap) {
  std::vector<double> ext;
  for (std::size_t i = 1; i + 1 < x.size(); ++i) {
    if ((x[i] > x[i - 1] && x[i] >= x[i + 1]) || (x[i] < x[i - 1] && x[i] <= x[i + 1])) ext.push_back(x[i]);
  }
  int n = 0;
  for (std::size_t i = 1; i < ext.size(); ++i) n += std::abs(ext[i] - ext[i - 1]) >= gap ? 1 : 0;
  return n;
}

TEST(ReferenceStats, IdenticalLapsGiveFloorVariance) {
  LapTrace lap;
  for (double s = 0.0; s < 100.0; s += 0.25) {
    lap.sigma.push_back(s);
    lap.d.push_back(0.3 * std::sin(s / 10.0));
  }
  const ReferenceStats st = build_reference_stats({lap, lap}, 100.0);
  ASSERT_EQ(st.num_bins(), 100);
  EXPECT_EQ(st.num_interpolated(), 0);
  for (int b = 0; b < st.num_bins(); ++b) {
    EXPECT_NEAR(st.var[b], 1e-4, 1e-18);
    double expect = 0.0;
    for (int i = 0; i < 4; ++i) expect += 0.3 * std::sin((b + 0.25 * i) / 10.0);
    EXPECT_NEAR(st.mean[b], expect / 4.0, 1e-15);
  }
}

TEST(ReferenceStats, PopulationVarianceOfTwoLaps) {
  const ReferenceStats st = build_reference_stats({constant_lap(0.1), constant_lap(-0.1)}, 100.0);
  for (int b = 0; b < st.num_bins(); ++b) {
    EXPECT_NEAR(st.mean[b], 0.0, 1e-15);
    EXPECT_NEAR(st.var[b], 0.01, 1e-15);
  }
}

TEST(ReferenceStats, EmptyBinsAreInterpolatedAndFlagged) {
  LapTrace a, b;
  for (double s = 0.5; s < 100.0; s += 2.0) {
    a.sigma.push_back(s);
    a.d.push_back(s / 100.0);
  }
  b = a;
  const ReferenceStats st = build_reference_stats({a, b}, 100.0, {1.0, 1e-4, 1});
  EXPECT_EQ(st.num_interpolated(), 50);
  EXPECT_TRUE(st.interpolated[1]);
  EXPECT_FALSE(st.interpolated[2]);
  EXPECT_NEAR(st.mean[1], 0.5 * (0.005 + 0.025), 1e-15);
  for (double v : st.var) EXPECT_GE(v, 1e-4);
}

TEST(ReferenceStats, RejectsSingleLap) {
  EXPECT_THROW(build_reference_stats({constant_lap(0.0)}, 100.0), InvalidArgument);
}

ReferenceStats unit_peak_stats() {
  ReferenceStats st;
  st.track_length = 50.0;
  for (int b = 0; b < 50; ++b) {
    st.mean.push_back(0.2 * std::cos(b / 7.0));
    st.var.push_back(1.0 / (2.0 * kPi));
    st.interpolated.push_back(false);
  }
  return st;
}

TEST(ClLikelihood, PeakDensityIsOne) {
  const ReferenceStats st = unit_peak_stats();
  std::vector<double> sigma, d;
  for (double s = 0.0; s < 120.0; s += 1.389) {
    sigma.push_back(s);
    d.push_back(st.mean_at(s));
  }
  EXPECT_EQ(cl_likelihood(sigma, d, st), 1.0);
}

TEST(ClLikelihood, OneStandardDeviationOffset) {
  const ReferenceStats st = unit_peak_stats();
  const double sd = std::sqrt(1.0 / (2.0 * kPi));
  std::vector<double> sigma, d;
  for (double s = 0.0; s < 40.0; s += 0.7) {
    sigma.push_back(s);
    d.push_back(st.mean_at(s) + sd);
  }
  EXPECT_NEAR(cl_likelihood(sigma, d, st), std::exp(-0.5), 1e-14);
}

TEST(ClLikelihood, MaximizedAtZeroOffset) {
  const ReferenceStats st = build_reference_stats({constant_lap(0.3), constant_lap(-0.2), constant_lap(0.05)}, 100.0);
  std::vector<double> sigma;
  for (double s = 0.0; s < 100.0; s += 1.3) sigma.push_back(s);
  auto at_offset = [&](double off) {
    std::vector<double> d;
    for (double s : sigma) d.push_back(st.mean_at(s) + off);
    return cl_likelihood(sigma, d, st);
  };
  const double best = at_offset(0.0);
  double prev = best;
  for (double off = 0.02; off < 1.0; off += 0.02) {
    EXPECT_LT(at_offset(off), prev);
    EXPECT_LT(at_offset(-off), best);
    prev = at_offset(off);
  }
}

TEST(ClLikelihood, LiteralPrefactorWeightsByTime) {
  const ReferenceStats st = unit_peak_stats();
  const std::vector<double> sigma = {1.0, 2.0, 3.0, 4.0};
  std::vector<double> d;
  for (double s : sigma) d.push_back(st.mean_at(s));
  // sum_t t/T over t=1..4 = 2.5
  EXPECT_NEAR(cl_likelihood(sigma, d, st, LikelihoodPrefactor::Literal), 2.5, 1e-12);
}

TEST(OlError, Examples) {
  const std::vector<double> a = {0.1, -0.2, 0.05, 0.3};
  const MeanStd same = ol_error(a, a);
  EXPECT_EQ(same.mean, 0.0);
  EXPECT_EQ(same.std, 0.0);
  std::vector<double> biased = a;
  for (double& v : biased) v += 0.125;
  const MeanStd b = ol_error(biased, a);
  EXPECT_NEAR(b.mean, 0.125, 1e-15);
  EXPECT_NEAR(b.std, 0.0, 1e-15);
  EXPECT_THROW(ol_error({1.0}, a), InvalidArgument);
}

TEST(Offroad, Examples) {
  EXPECT_EQ(offroad_count(std::vector<double>(50, 0.0), 1.75), 0);
  EXPECT_EQ(offroad_count(std::vector<double>(10, 1.76), 1.75), 10);
  EXPECT_EQ(offroad_count(std::vector<double>(10, -1.76), 1.75), 10);
  // Truncated after 10 of 40 planned steps.
  EXPECT_EQ(offroad_count(std::vector<double>(10, 0.0), 1.75, 40), 30);
}

TEST(Offroad, MonotoneUnderEnlargingDeviation) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g(0.0, 1.5);
  std::vector<double> d(500);
  for (double& v : d) v = g(rng);
  int prev = offroad_count(d, 1.75);
  for (int k = 0; k < 10; ++k) {
    for (double& v : d) v *= 1.1;
    const int now = offroad_count(d, 1.75);
    EXPECT_GE(now, prev);
    prev = now;
  }
}

TEST(Jerk, SinusoidPeak) {
  const std::vector<double> a = sinusoid(1.0, 0.5, 20.0, 0.1);
  const std::vector<double> j = lateral_jerk(a, 0.1);
  double peak = 0.0;
  for (double v : j) peak = std::max(peak, std::abs(v));
  EXPECT_NEAR(peak, kPi, 0.02 * kPi);
}

TEST(Jerk, StraightSteadyRolloutIsZero) {
  const Track track = testing::straight_track();
  std::vector<StateVector> xs;
  StateVector x = StateVector::Zero(5);
  for (int t = 0; t < 50; ++t) {
    xs.push_back(x);
    x = rk4_step(x, 0.0, ControlMode::SteeringAngle, track, {}, 0.1);
  }
  const auto a = lateral_acceleration(xs, std::vector<double>(49, 0.0), ControlMode::SteeringAngle, track, {});
  const MeanStd s = jerk_stats(lateral_jerk(a, 0.1));
  EXPECT_EQ(s.mean, 0.0);
  EXPECT_EQ(s.std, 0.0);
}

TEST(Jerk, SteadyCorneringAcceleration) {
  // Constant yaw rate with zero sideslip rate gives a_y = vx * psi_dot.
  const Track track = testing::straight_track();
  StateVector x = StateVector::Zero(5);
  x(sx::psi_dot) = 0.1;
  const VehicleParams p;
  const StateVector dx = continuous_derivative(x, 0.0, ControlMode::SteeringAngle, track, p);
  const auto a = lateral_acceleration({x}, {0.0}, ControlMode::SteeringAngle, track, p);
  EXPECT_DOUBLE_EQ(a[0], p.vx * (0.1 + dx(sx::beta)));
}

TEST(Jerk, SignedStatsFlag) {
  const std::vector<double> j = {1.0, -1.0, 1.0, -1.0};
  EXPECT_EQ(jerk_stats(j).mean, 1.0);
  EXPECT_EQ(jerk_stats(j, true).mean, 0.0);
  EXPECT_EQ(jerk_stats(j, true).std, 1.0);
}

TEST(Srr, SinusoidCount) {
  const std::vector<double> hw = sinusoid(0.2, 0.2, 60.0, 0.1);
  const double rate = srr_hand_wheel(hw, 0.1);
  EXPECT_NEAR(rate, 24.0, 1.0);
  std::vector<double> deg = hw;
  for (double& v : deg) v *= 180.0 / kPi;
  EXPECT_NEAR(rate, brute_force_reversals(deg, 5.0), 1e-12);
}

TEST(Srr, SmallAmplitudeAndConstantGiveZero) {
  EXPECT_EQ(srr_hand_wheel(sinusoid(2.0 * kPi / 180.0, 0.2, 60.0, 0.1), 0.1), 0.0);
  EXPECT_EQ(srr_hand_wheel(std::vector<double>(600, 0.3), 0.1), 0.0);
}

TEST(Srr, InvariantUnderOffsetAndSignFlip) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> g(0.0, 0.3);
  std::vector<double> x(900);
  double v = 0.0;
  for (double& s : x) s = (v = 0.9 * v + g(rng));
  const double base = srr_hand_wheel(x, 0.1);
  std::vector<double> shifted = x, flipped = x;
  for (double& s : shifted) s += 0.7;
  for (double& s : flipped) s = -s;
  EXPECT_GT(base, 0.0);
  EXPECT_EQ(srr_hand_wheel(shifted, 0.1), base);
  EXPECT_EQ(srr_hand_wheel(flipped, 0.1), base);
}

TEST(Srr, RoadWheelUsesSteeringRatio) {
  const std::vector<double> road = sinusoid(0.2 / 16.0, 0.2, 60.0, 0.1);
  EXPECT_EQ(srr(road, 0.1, 16.0), srr_hand_wheel(sinusoid(0.2, 0.2, 60.0, 0.1), 0.1));
  EXPECT_EQ(srr(road, 0.1, 1.0), 0.0);
}

TEST(Lowpass, PassesDcAndAttenuatesHighFrequency) {
  const std::vector<double> dc(200, 1.5);
  for (double v : zero_phase_lowpass(dc, 0.6, 0.1)) EXPECT_NEAR(v, 1.5, 1e-12);
  const std::vector<double> fast = sinusoid(1.0, 3.0, 30.0, 0.1);
  const std::vector<double> y = zero_phase_lowpass(fast, 0.6, 0.1);
  double peak = 0.0;
  for (std::size_t i = 50; i + 50 < y.size(); ++i) peak = std::max(peak, std::abs(y[i]));
  // Squared second-order Butterworth gain at 3 Hz with a 0.6 Hz corner.
  const double wc = std::tan(kPi * 0.06), w = std::tan(kPi * 0.3);
  EXPECT_NEAR(peak, 1.0 / (1.0 + std::pow(w / wc, 4)), 2e-3);
}

TEST(MetricsReport, JsonRoundTripAndTable) {
  MetricsReport r;
  r.policy = "NN-MPC";
  r.algorithm = "SL + SC";
  r.action = "delta_rate";
  r.lookahead = 9.72;
  r.ol_error = {0.3, 0.07};
  r.cl_likelihood = 0.93;
  r.jerk = {0.07, 0.09};
  r.d = {-0.46, 0.17};
  r.srr = 23.33;
  r.steps = 864;
  const MetricsReport back = MetricsReport::from_json(nlohmann::json::parse(r.to_json().dump()));
  EXPECT_EQ(back.to_json(), r.to_json());
  const std::string table = render_table({r, r});
  EXPECT_NE(table.find("NN-MPC"), std::string::npos);
  EXPECT_NE(table.find("0.93"), std::string::npos);
  EXPECT_NE(table.find("-0.46 +- 0.17"), std::string::npos);
  std::size_t lines = 0;
  for (char c : table) lines += c == '\n';
  EXPECT_EQ(lines, 4u);
}

}  // namespace
}  // namespace mimic
