#include <cmath>
#include <filesystem>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "mimic/io.hpp"
#include "mimic/learning.hpp"
#include "mimic/metrics.hpp"
#include "mimic/model.hpp"
#include "mimic/track.hpp"
#include "test_util.hpp"

namespace mimic {
namespace {

using testing::default_track;
using testing::straight_track;

constexpr double kDt = 0.1;

OcpSpec spec_for(Variant variant, double lookahead = 9.72) {
  return OcpSpec::from_lookahead(lookahead, VehicleParams{}.vx, kDt, variant, 3.5);
}

std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("mimic_learning_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

// Lap whose states are given; delta_rate zero.
Lap make_lap(std::vector<StateVector> states, int id = 0) {
  Lap lap;
  lap.id = id;
  lap.dt = kDt;
  lap.delta_rate.assign(states.size(), 0.0);
  for (auto& x : states) {
    StateVector full = StateVector::Zero(6);
    full.head(x.size()) = x;
    lap.states.push_back(full);
  }
  return lap;
}

Lap zero_lap(int samples, int id = 0) { return make_lap(std::vector<StateVector>(samples, StateVector::Zero(6)), id); }

Lap lap_from_rollout(const Rollout& r) {
  Lap lap;
  lap.dt = kDt;
  for (std::size_t t = 0; t < r.actions.size(); ++t) {
    StateVector full = StateVector::Zero(6);
    full.head(r.states[t].size()) = r.states[t];
    lap.states.push_back(full);
    lap.delta_rate.push_back(r.states[t].size() == 6 ? r.actions[t] : 0.0);
    if (r.states[t].size() == 5) lap.states.back()(sx::delta) = r.actions[t];
  }
  return lap;
}

// Network with the default init, last layer scaled so outputs are O(0.1).
Mlp teacher_network(int outputs, std::uint64_t seed, double output_scale) {
  return Mlp::he_uniform({kNumFeatures, 64, 32, 16, outputs}, seed, output_scale);
}

const std::vector<Lap>& expert_laps_default() {
  static const std::vector<Lap> laps = generate_expert_laps(default_track(), ExpertProfile{}, 10);
  return laps;
}

const Lap& expert_lap_noise_free() {
  static const Lap lap = [] {
    ExpertProfile p;
    p.offset_std = 0.0;
    return generate_expert_laps(default_track(), p, 1).front();
  }();
  return lap;
}

// ---------------------------------------------------------------------------

TEST(Slicing, HundredSecondLapGivesNinetyNineSlices) {
  EXPECT_EQ(slice_count(1000, 20), 99);
  const SlicedDataset data = slice_dataset({zero_lap(1000)}, 2.0, 10, 3);
  EXPECT_EQ(data.num_slices(), 99u);
  EXPECT_EQ(data.train.size(), 9u);
  EXPECT_EQ(data.validation.size(), 9u);
}

TEST(Slicing, StartsEveryHalfWindowExactlyOnce) {
  const SlicedDataset data = slice_dataset({zero_lap(1000)}, 2.0, 10, 3);
  std::multiset<int> starts;
  for (const auto& b : data.train) {
    for (const Slice& s : b) starts.insert(s.start);
  }
  for (const Slice& s : data.validation) starts.insert(s.start);
  ASSERT_EQ(starts.size(), 99u);
  int expected = 0;
  for (int s : starts) {
    EXPECT_EQ(s, expected);
    expected += 10;
  }
}

TEST(Slicing, ShuffleIsSeeded) {
  const std::vector<Lap> laps = {zero_lap(300, 0), zero_lap(300, 1)};
  auto order = [](const SlicedDataset& d) {
    std::vector<std::pair<int, int>> v;
    for (const auto& b : d.train) {
      for (const Slice& s : b) v.emplace_back(s.lap, s.start);
    }
    for (const Slice& s : d.validation) v.emplace_back(s.lap, s.start);
    return v;
  };
  const auto a = order(slice_dataset(laps, 2.0, 4, 11));
  const auto b = order(slice_dataset(laps, 2.0, 4, 11));
  const auto c = order(slice_dataset(laps, 2.0, 4, 12));
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
}

TEST(Slicing, Errors) {
  EXPECT_THROW(slice_dataset({}, 2.0, 4, 1), InvalidArgument);
  EXPECT_THROW(slice_dataset({zero_lap(15)}, 2.0, 4, 1), InvalidArgument);
  EXPECT_THROW(slice_dataset({zero_lap(40)}, 2.0, 64, 1), InvalidArgument);
  EXPECT_THROW(slice_dataset({zero_lap(40)}, 2.0, 0, 1), InvalidArgument);
}

// ---------------------------------------------------------------------------

TEST(Demos, CsvAndManifestRoundTrip) {
  const auto dir = temp_dir("demos");
  ExpertProfile profile;
  profile.seed = 5;
  const std::vector<Lap> laps = generate_expert_laps(default_track(), profile, 2);
  DemoManifest m;
  m.track_hash = default_track().hash();
  m.vx = VehicleParams{}.vx;
  m.dt = kDt;
  m.profile = profile;
  m.seed = profile.seed;
  write_demos(dir, laps, m);

  DemoManifest back;
  const std::vector<Lap> read = read_demos(dir, &back);
  ASSERT_EQ(read.size(), laps.size());
  EXPECT_EQ(back.track_hash, m.track_hash);
  EXPECT_EQ(back.files, (std::vector<std::string>{"lap_00.csv", "lap_01.csv"}));
  EXPECT_EQ(back.profile.to_json(), profile.to_json());
  for (std::size_t l = 0; l < laps.size(); ++l) {
    ASSERT_EQ(read[l].size(), laps[l].size());
    EXPECT_EQ(read[l].dt, kDt);
    for (int t = 0; t < laps[l].size(); ++t) {
      EXPECT_EQ(read[l].states[t], laps[l].states[t]);
      EXPECT_EQ(read[l].delta_rate[t], laps[l].delta_rate[t]);
    }
  }

  // Same seed, same bytes.
  const std::vector<Lap> again = generate_expert_laps(default_track(), profile, 2);
  EXPECT_EQ(lap_csv(again[1]), read_text_file(dir / "lap_01.csv"));
  std::filesystem::remove_all(dir);
}

TEST(Demos, NonUniformTimeStepRejected) {
  const auto dir = temp_dir("bad_dt");
  std::filesystem::create_directories(dir);
  write_text_file(dir / "lap.csv",
                  "t_s,beta,psi_dot,sigma,d,phi,delta,delta_rate\n0,0,0,0,0,0,0,0\n0.1,0,0,1,0,0,0,0\n"
                  "0.3,0,0,2,0,0,0,0\n");
  EXPECT_THROW(parse_lap_csv(dir / "lap.csv", 0), InvalidArgument);
  std::filesystem::remove_all(dir);
}

// ---------------------------------------------------------------------------

TEST(Expert, NoiseFreeSettlesAtOffsetOnStraights) {
  const Lap& lap = expert_lap_noise_free();
  const Track& track = default_track();
  int checked = 0;
  for (int t = 0; t < lap.size(); ++t) {
    const double sigma = lap.states[t](sx::sigma);
    // Straight for the last 40 m and the next 20 m.
    bool straight = true;
    for (double s = -40.0; s <= 20.0; s += 1.0) straight = straight && track.curvature(sigma + s) == 0.0;
    if (!straight) continue;
    EXPECT_NEAR(lap.states[t](sx::d), -0.54, 0.02) << "sigma " << sigma;
    ++checked;
  }
  EXPECT_GT(checked, 30);
}

TEST(Expert, NoiseFreeOnStraightTrackHasNoReversals) {
  ExpertProfile p;
  p.offset_std = 0.0;
  const std::vector<Lap> laps = generate_expert_laps(straight_track(), p, 1);
  std::vector<double> delta;
  for (const auto& x : laps[0].states) delta.push_back(x(sx::delta));
  EXPECT_LT(srr(delta, kDt, VehicleParams{}.steering_ratio), 0.5);
}

TEST(Expert, DefaultProfileMatchesHumanBand) {
  const std::vector<Lap>& laps = expert_laps_default();
  ASSERT_EQ(laps.size(), 10u);
  std::vector<double> d;
  for (const Lap& lap : laps) {
    EXPECT_EQ(lap.size(), 864);
    for (const auto& x : lap.states) d.push_back(x(sx::d));
  }
  const MeanStd s = mean_std(d);
  EXPECT_NEAR(s.mean, ExpertProfile{}.offset_mean, 0.1);
  EXPECT_GE(s.std, 0.2);
  EXPECT_LE(s.std, 0.6);
}

TEST(Expert, OffsetOutsideLaneIsRejected) {
  ExpertProfile p;
  p.offset_mean = 2.0;
  p.offset_std = 0.0;
  try {
    generate_expert_laps(default_track(), p, 1);
    FAIL() << "expected ExpertOffroadError";
  } catch (const ExpertOffroadError& e) {
    EXPECT_NE(std::string(e.what()).find("expert off-road"), std::string::npos);
  }
}

TEST(Expert, ProfileValidation) {
  ExpertProfile p;
  p.offset_std = -0.1;
  EXPECT_THROW(generate_expert_laps(default_track(), p, 1), InvalidArgument);
  EXPECT_EQ(ExpertProfile::from_json(ExpertProfile{}.to_json()).to_json(), ExpertProfile{}.to_json());
}

// ---------------------------------------------------------------------------

TEST(Rollout, MpcOnStraightTrackStaysOnCenterline) {
  const Policy p = Policy::mpc(spec_for(Variant::Weights), MpcParams::zeros(Variant::Weights));
  const Rollout r = rollout(p, Plant{}, straight_track(), StateVector::Zero(5), 200);
  ASSERT_FALSE(r.truncated);
  ASSERT_EQ(r.states.size(), 201u);
  for (double d : r.d()) EXPECT_LE(std::abs(d), 1e-12);
}

TEST(Rollout, ExpertPolicyReproducesNoiseFreeLap) {
  ExpertProfile profile;
  profile.offset_std = 0.0;
  const Lap& lap = expert_lap_noise_free();
  const Policy expert = expert_policy(default_track(), profile);
  const Rollout r = rollout(expert, Plant{}, default_track(), StateVector::Zero(6), 2 * lap.size());
  ASSERT_FALSE(r.truncated) << r.reason;
  for (int t = 0; t < lap.size(); ++t) {
    ASSERT_EQ(r.states[lap.size() + t], lap.states[t]) << t;
    ASSERT_EQ(r.actions[lap.size() + t], lap.delta_rate[t]) << t;
  }
}

TEST(Rollout, Deterministic) {
  std::mt19937_64 rng(3);
  const Policy p = Policy::mpc(spec_for(Variant::Weights, 30.0), testing::random_params(rng, Variant::Weights));
  StateVector s0 = StateVector::Zero(5);
  s0(sx::d) = 0.4;
  const Rollout a = rollout(p, Plant{}, default_track(), s0, 300);
  const Rollout b = rollout(p, Plant{}, default_track(), s0, 300);
  ASSERT_EQ(a.states.size(), b.states.size());
  for (std::size_t t = 0; t < a.states.size(); ++t) ASSERT_EQ(a.states[t], b.states[t]);
}

TEST(Rollout, UnstableNetworkIsTruncated) {
  // Output saturates at full steering lock regardless of the state.
  Policy p = Policy::nn(spec_for(Variant::Weights), 1);
  Mlp net(p.network().sizes());
  Eigen::VectorXd w = Eigen::VectorXd::Zero(net.num_params());
  w(w.size() - 1) = 10.0;
  net.set_params(w);
  p.set_network(net);
  const Rollout r = rollout(p, Plant{}, default_track(), StateVector::Zero(5), 864);
  EXPECT_TRUE(r.truncated);
  EXPECT_LT(static_cast<int>(r.actions.size()), 864);
  EXPECT_FALSE(r.reason.empty());
}

// ---------------------------------------------------------------------------

TEST(TrainBc, TeacherStudentNetwork) {
  const Mlp teacher = teacher_network(1, 7, 0.3);
  Policy teacher_policy = Policy::nn(spec_for(Variant::Weights), 1);
  teacher_policy.set_network(teacher);
  // Expert states, teacher labels.
  std::vector<Lap> laps = {expert_laps_default()[0], expert_laps_default()[1]};
  for (Lap& lap : laps) {
    for (auto& x : lap.states) x(sx::delta) = teacher_policy.act(StateVector(x.head(5)), default_track()).action;
  }
  const SlicedDataset data = slice_dataset(laps, 2.0, 16, 1);
  Policy student = Policy::nn(spec_for(Variant::Weights), 2);
  TrainOptions opt;
  opt.epochs = 60;
  opt.lr_net = 1e-3;
  const auto trace = train_bc(student, laps, data, default_track(), opt);
  ASSERT_EQ(trace.size(), 60u);
  EXPECT_GT(trace.front().validation_loss, 1e-3);
  EXPECT_LT(trace.back().validation_loss, 1e-4);
}

TEST(TrainBc, MpcFromZeroThetaDecreases) {
  const std::vector<Lap> laps = {expert_laps_default()[0]};
  const SlicedDataset data = slice_dataset(laps, 2.0, 16, 1);
  Policy p = Policy::mpc(spec_for(Variant::Weights), MpcParams::zeros(Variant::Weights));
  TrainOptions opt;
  opt.epochs = 5;
  const auto trace = train_bc(p, laps, data, default_track(), opt);
  ASSERT_EQ(trace.size(), 5u);
  for (std::size_t e = 1; e < trace.size(); ++e) {
    EXPECT_LT(trace[e].validation_loss, trace[e - 1].validation_loss) << "epoch " << e + 1;
    EXPECT_LT(trace[e].train_loss, trace[e - 1].train_loss) << "epoch " << e + 1;
  }
  EXPECT_GT(p.mpc_params().theta.norm(), 0.0);
  EXPECT_EQ(trace.back().skipped, 0);
}

TEST(TrainBc, ZeroLossLeavesParametersUnchanged) {
  const Policy teacher = Policy::nn(spec_for(Variant::Weights), 4);
  std::vector<Lap> laps = {expert_laps_default()[0]};
  for (auto& x : laps[0].states) x(sx::delta) = teacher.act(StateVector(x.head(5)), default_track()).action;
  const SlicedDataset data = slice_dataset(laps, 2.0, 16, 1);
  Policy p = teacher;
  TrainOptions opt;
  opt.epochs = 1;
  opt.lr_net = 1e-2;
  const auto trace = train_bc(p, laps, data, default_track(), opt);
  EXPECT_EQ(trace.front().train_loss, 0.0);
  EXPECT_EQ(p.params(), teacher.params());
}

// ---------------------------------------------------------------------------

TEST(TrainSl, CenterlineExpertOnStraightTrack) {
  const std::vector<Lap> laps = {zero_lap(1000)};
  const SlicedDataset data = slice_dataset(laps, 2.0, 8, 1);
  Policy p = Policy::nn_mpc(spec_for(Variant::SetpointAngle), 3);
  Mlp net = p.network();
  Eigen::VectorXd w = net.params();
  w.tail(2) << 0.4, -0.2;  // output biases away from zero
  net.set_params(w);
  p.set_network(net);
  TrainOptions opt;
  opt.epochs = 40;
  opt.lr_net = 1e-2;
  train_sl(p, laps, data, straight_track(), opt);
  const Eigen::VectorXd y = p.network().forward(Eigen::VectorXd::Zero(kNumFeatures));
  EXPECT_LT(y.norm(), 1e-3);
  EXPECT_EQ(p.mpc_params().theta, MpcParams::zeros(Variant::SetpointAngle).theta);
}

TEST(TrainSl, RealizableTargets) {
  // d_{t+N}, phi_{t+N} = head(teacher(chi_t)) along the lap, N = 7.
  const Track& track = default_track();
  Policy teacher = Policy::nn_mpc(spec_for(Variant::SetpointAngle), 1);
  teacher.set_network(teacher_network(2, 9, 0.3));
  const int n = teacher.spec().horizon;
  ASSERT_EQ(n, 7);
  std::vector<StateVector> states(900, StateVector::Zero(5));
  for (int t = 0; t < 900; ++t) states[t](sx::sigma) = t * VehicleParams{}.vx * kDt;
  for (int t = 0; t + n < 900; ++t) {
    const Eigen::VectorXd y = teacher.network().forward(teacher.scaling().apply(extract_features(states[t], track)));
    const Eigen::VectorXd target = teacher.head(y);
    states[t + n](sx::d) = target(0);
    states[t + n](sx::phi) = target(1);
  }
  const std::vector<Lap> laps = {make_lap(states)};
  const SlicedDataset data = slice_dataset(laps, 2.0, 16, 1);
  Policy student = Policy::nn_mpc(spec_for(Variant::SetpointAngle), 2);
  TrainOptions opt;
  opt.epochs = 60;
  opt.lr_net = 1e-3;
  const auto trace = train_sl(student, laps, data, track, opt);
  EXPECT_GT(trace.front().validation_loss, 1e-2);
  EXPECT_LT(trace.back().validation_loss, 1e-3);
}

TEST(TrainSl, TargetIsHorizonStepsAhead) {
  std::vector<StateVector> states(40, StateVector::Zero(5));
  for (int t = 0; t < 40; ++t) states[t](sx::d) = 0.01 * t;
  const std::vector<Lap> laps = {make_lap(states)};
  const SlicedDataset data = slice_dataset(laps, 2.0, 1, 1);
  Policy p = Policy::nn_mpc(spec_for(Variant::SetpointAngle), 3);
  p.set_params(Eigen::VectorXd::Zero(p.num_params()));
  TrainOptions opt;
  opt.epochs = 1;
  opt.lr_net = 0.0;
  const auto trace = train_sl(p, laps, data, straight_track(), opt);
  ASSERT_EQ(data.validation.size(), 1u);
  const int s = data.validation[0].start;
  double expected = 0.0;
  for (int t = s; t + 7 < s + 20; ++t) expected += std::pow(0.01 * (t + 7), 2);
  expected /= 13.0;
  EXPECT_DOUBLE_EQ(trace.front().validation_loss, expected);
}

TEST(TrainSl, Errors) {
  const std::vector<Lap> laps = {zero_lap(100)};
  const SlicedDataset short_slices = slice_dataset(laps, 0.5, 2, 1);
  Policy p = Policy::nn_mpc(spec_for(Variant::SetpointAngle), 3);
  EXPECT_THROW(train_sl(p, laps, short_slices, straight_track(), TrainOptions{}), InvalidArgument);
  Policy nn = Policy::nn(spec_for(Variant::Weights), 1);
  EXPECT_THROW(train_sl(nn, laps, slice_dataset(laps, 2.0, 2, 1), straight_track(), TrainOptions{}),
               InvalidArgument);
}

// ---------------------------------------------------------------------------

double sc_loss(const Policy& p, const Lap& lap, const Slice& s) {
  return sc_gradient(p, Plant{}, default_track(), lap, s, ScOptions{}, false).loss;
}

TEST(Bptt, MpcGradientMatchesFiniteDifferences) {
  const Lap& lap = expert_laps_default()[2];
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 3; ++trial) {
    Policy p = Policy::mpc(spec_for(Variant::Weights, 30.0), testing::random_params(rng, Variant::Weights));
    p.solver_options().tolerance = 1e-13;
    const Slice s{0, 100 + 150 * trial, 11};
    const ScGradient g = sc_gradient(p, Plant{}, default_track(), lap, s, ScOptions{});
    ASSERT_FALSE(g.truncated);
    ASSERT_EQ(g.steps, 10);
    const Eigen::VectorXd theta = p.params();
    for (int j = 0; j < theta.size(); ++j) {
      Policy plus = p, minus = p;
      Eigen::VectorXd tp = theta, tm = theta;
      tp(j) += 1e-5;
      tm(j) -= 1e-5;
      plus.set_params(tp);
      minus.set_params(tm);
      const double fd = (sc_loss(plus, lap, s) - sc_loss(minus, lap, s)) / 2e-5;
      EXPECT_LE(testing::rel_err(g.grad(j), fd, 1e-8), 1e-3) << "trial " << trial << " param " << j;
    }
  }
}

TEST(Bptt, NnMpcRateGradientMatchesFiniteDifferences) {
  const Lap& lap = expert_laps_default()[3];
  Policy p = Policy::nn_mpc(spec_for(Variant::SetpointRate, 30.0), 5);
  p.set_network(teacher_network(2, 5, 0.3));
  p.solver_options().tolerance = 1e-13;
  const Slice s{0, 300, 11};
  const ScGradient g = sc_gradient(p, Plant{}, default_track(), lap, s, ScOptions{});
  ASSERT_FALSE(g.truncated);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> normal;
  const Eigen::VectorXd base = p.params();
  for (int trial = 0; trial < 3; ++trial) {
    Eigen::VectorXd v(base.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = normal(rng);
    if (trial == 0) v = Eigen::VectorXd::Unit(base.size(), base.size() - 1);  // log W_rate alone
    Policy plus = p, minus = p;
    plus.set_params(base + 1e-5 * v);
    minus.set_params(base - 1e-5 * v);
    const double fd = (sc_loss(plus, lap, s) - sc_loss(minus, lap, s)) / 2e-5;
    EXPECT_LE(testing::rel_err(g.grad.dot(v), fd, 1e-8), 1e-3) << "direction " << trial;
  }
}

TEST(Bptt, OneStepHandChainOnLinearToy) {
  // s_{t+1} = A s_t + B a_t, a_t = k' s_t, loss = |s_1 - s*|^2.
  Eigen::Matrix2d A;
  A << 1.0, 0.1, -0.2, 0.9;
  const Eigen::Vector2d B(0.05, 0.3);
  const Eigen::Vector2d k(-0.7, 0.4);
  const Eigen::Vector2d s0(1.0, -0.5);
  const Eigen::Vector2d target(0.2, 0.1);
  const Eigen::Vector2d s1 = A * s0 + B * k.dot(s0);

  std::vector<Eigen::VectorXd> loss_grad = {Eigen::Vector2d::Zero(), 2.0 * (s1 - target)};
  const Eigen::VectorXd grad = bptt({{A, B}}, loss_grad, 2, [&](int, double a_bar) {
    PolicyGradient g;
    g.params = a_bar * s0;
    g.state = a_bar * k;
    return g;
  });
  // dL/dk = (dL/ds_1 . B) s0
  const Eigen::Vector2d expected = (2.0 * (s1 - target)).dot(B) * s0;
  EXPECT_NEAR(grad(0), expected(0), 1e-15);
  EXPECT_NEAR(grad(1), expected(1), 1e-15);
}

TEST(Bptt, MultiStepLinearToyMatchesFiniteDifferences) {
  Eigen::Matrix2d A;
  A << 1.0, 0.1, -0.2, 0.9;
  const Eigen::Vector2d B(0.05, 0.3);
  const Eigen::Vector2d s0(1.0, -0.5);
  const int steps = 6;
  auto forward = [&](const Eigen::Vector2d& k, std::vector<Eigen::Vector2d>* states) {
    std::vector<Eigen::Vector2d> s = {s0};
    double loss = 0.0;
    for (int t = 0; t < steps; ++t) {
      s.push_back(A * s.back() + B * k.dot(s.back()));
      loss += s.back().squaredNorm();
    }
    if (states) *states = s;
    return loss;
  };
  const Eigen::Vector2d k(-0.7, 0.4);
  std::vector<Eigen::Vector2d> s;
  forward(k, &s);
  std::vector<StepLinearization> lin(steps, StepLinearization{A, B});
  std::vector<Eigen::VectorXd> loss_grad;
  for (const auto& x : s) loss_grad.push_back(2.0 * x);
  const Eigen::VectorXd grad = bptt(lin, loss_grad, 2, [&](int t, double a_bar) {
    PolicyGradient g;
    g.params = a_bar * s[t];
    g.state = a_bar * k;
    return g;
  });
  for (int j = 0; j < 2; ++j) {
    Eigen::Vector2d kp = k, km = k;
    kp(j) += 1e-6;
    km(j) -= 1e-6;
    const double fd = (forward(kp, nullptr) - forward(km, nullptr)) / 2e-6;
    EXPECT_LE(testing::rel_err(grad(j), fd), 1e-7) << j;
  }
}

TEST(Bptt, ExpertAsOwnTargetHasZeroLossAndGradient) {
  ExpertProfile profile;
  const Policy expert = expert_policy(default_track(), profile);
  StateVector s0 = StateVector::Zero(6);
  s0(sx::sigma) = 200.0;
  s0(sx::d) = 0.3;
  const Lap lap = lap_from_rollout(rollout(expert, Plant{}, default_track(), s0, 101));
  ScOptions opt;
  opt.full_state_loss = true;
  const ScGradient g = sc_gradient(expert, Plant{}, default_track(), lap, Slice{0, 0, 101}, opt);
  EXPECT_EQ(g.loss, 0.0);
  EXPECT_EQ(g.grad.norm(), 0.0);
  EXPECT_EQ(g.steps, 100);
}

TEST(TrainSc, ReducesLossFromBadSetpoint) {
  // MPC kind with constant setpoints starting 0.5 m away from the expert offset.
  const std::vector<Lap> laps = {expert_laps_default()[4]};
  const SlicedDataset data = slice_dataset(laps, 10.0, 5, 1);
  MpcParams theta = MpcParams::zeros(Variant::SetpointRate);
  theta.theta << 0.0, 0.0, ExpertProfile{}.log_w_rate;
  Policy p = Policy::mpc(expert_ocp_spec(default_track(), ExpertProfile{}), theta);
  ScOptions opt;
  opt.epochs = 4;
  opt.lr_mpc = 0.05;
  const auto trace = train_sc(p, Plant{}, laps, data, default_track(), opt);
  ASSERT_EQ(trace.size(), 4u);
  EXPECT_LT(trace.back().validation_loss, 0.5 * trace.front().validation_loss);
  EXPECT_LT(p.mpc_params().theta(0), -0.2);
  EXPECT_EQ(trace.back().skipped, 0);
}

TEST(Optimizer, ClipsByGlobalNorm) {
  Policy p = Policy::mpc(spec_for(Variant::Weights), MpcParams::zeros(Variant::Weights));
  Optimizer opt(1e-4, 1e-2);
  opt.clip_norm = 1.0;
  const double norm = opt.step(p, Eigen::Vector4d(30.0, 0.0, 40.0, 0.0));
  EXPECT_DOUBLE_EQ(norm, 50.0);
  // First Adam step moves each coordinate by lr * sign(g).
  EXPECT_NEAR(p.params()(0), -1e-2, 1e-9);
  EXPECT_NEAR(p.params()(2), -1e-2, 1e-9);
  EXPECT_EQ(p.params()(1), 0.0);
}

TEST(Threads, ParallelForMatchesSerial) {
  std::vector<int> out(37, 0);
  parallel_for(37, [&](int i) { out[i] = i * i; });
  for (int i = 0; i < 37; ++i) EXPECT_EQ(out[i], i * i);
  EXPECT_GE(worker_count(), 1);
}

}  // namespace
}  // namespace mimic
