#include <filesystem>
#include <string>

#include <gtest/gtest.h>

#include "mimic/experiment.hpp"
#include "mimic/io.hpp"
#include "test_util.hpp"

namespace mimic {
namespace {

namespace fs = std::filesystem;

const std::string kMinimal = R"(
id = "probe"
seed = 3
policy = "nn_mpc"
variant = "setpoint_rate"
algorithm = "sl+sc"
lookahead_m = 9.72
)";

std::string error_of(const std::string& text) {
  try {
    parse_run_config(text, "probe.toml").validate();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

TEST(RunConfig, DefaultsAndDerivedHorizon) {
  const RunConfig c = parse_run_config(kMinimal);
  EXPECT_EQ(c.id, "probe");
  EXPECT_EQ(*c.seed, 3u);
  EXPECT_EQ(c.algorithm, Algorithm::SL_SC);
  EXPECT_EQ(c.ol.batch_size, 64);
  EXPECT_EQ(c.ol.slice_s, 2.0);
  EXPECT_EQ(c.sc.batch_size, 10);
  EXPECT_EQ(c.sc.slice_s, 10.0);
  EXPECT_EQ(c.sc.clip_norm, 10.0);
  EXPECT_EQ(c.ocp_spec(testing::default_track()).horizon, 7);
  EXPECT_TRUE(has_open_loop_stage(c.algorithm));
  EXPECT_TRUE(has_closed_loop_stage(c.algorithm));
}

TEST(RunConfig, TomlRoundTrip) {
  RunConfig c = parse_run_config(kMinimal + "[sc]\nepochs = 7\nlr_net = 3e-5\n[vehicle]\nmass_kg = 1500\n");
  EXPECT_EQ(c.sc.epochs, 7);
  EXPECT_EQ(c.vehicle.mass, 1500.0);
  const std::string text = c.to_toml();
  const RunConfig back = parse_run_config(text);
  EXPECT_EQ(back.to_toml(), text);
  EXPECT_EQ(back.sc.lr_net, 3e-5);
  EXPECT_FALSE(back.sc.keep_best);
}

TEST(Training, KeepBestRestoresLowestValidationEpoch) {
  const Track& track = testing::default_track();
  const std::vector<Lap> laps = generate_expert_laps(track, ExpertProfile{}, 2);
  RunConfig c = parse_run_config(kMinimal + "[ol]\nepochs = 1\n[sc]\nepochs = 3\nbatch_size = 2\nslice_s = 2.0\n"
                                            "lr_net = 1e-2\nkeep_best = true\n");
  const TrainResult r = train(c, track, laps);
  const StageLog& sc = r.stages.back();
  ASSERT_EQ(sc.epochs.size(), 3u);
  int best = 1;
  for (const EpochStats& e : sc.epochs) {
    if (e.validation_loss < sc.epochs[best - 1].validation_loss) best = e.epoch;
  }
  EXPECT_EQ(sc.selected_epoch, best);
  c.sc.keep_best = false;
  c.sc.epochs = best;
  EXPECT_EQ(train(c, track, laps).policy.params(), r.policy.params());
}

TEST(RunConfig, ErrorsNameTheKey) {
  EXPECT_EQ(error_of(kMinimal + "speed = 3\n"), "speed: unknown key");
  EXPECT_EQ(error_of(kMinimal + "[ol]\nepoch = 3\n"), "ol.epoch: unknown key");
  EXPECT_NE(error_of(kMinimal + "[ol]\nepochs = \"many\"\n").find("ol.epochs"), std::string::npos);
  EXPECT_EQ(error_of("id = \"x\"\n"), "seed: required");
  EXPECT_EQ(error_of(kMinimal + "[sc]\nbatch_size = 0\n"), "sc.batch_size: must be >= 1");
  EXPECT_NE(error_of("id = \n").find("probe.toml:1:"), std::string::npos);
}

TEST(RunConfig, InvalidChains) {
  EXPECT_EQ(error_of("id = \"x\"\nseed = 1\npolicy = \"mpc\"\nvariant = \"weights\"\nalgorithm = \"sl\"\n"),
            "algorithm: sl requires policy nn_mpc");
  EXPECT_EQ(error_of("id = \"x\"\nseed = 1\npolicy = \"nn_mpc\"\nvariant = \"weights\"\n"),
            "variant: nn_mpc needs setpoint_angle or setpoint_rate");
  EXPECT_EQ(error_of("id = \"a/b\"\nseed = 1\n"), "id: must be a plain directory name");
}

TEST(RunConfig, AlgorithmNames) {
  for (Algorithm a : {Algorithm::None, Algorithm::BC, Algorithm::SL, Algorithm::SC, Algorithm::BC_SC,
                      Algorithm::SL_SC}) {
    EXPECT_EQ(parse_algorithm(to_string(a)), a);
  }
  EXPECT_FALSE(has_open_loop_stage(Algorithm::SC));
  EXPECT_FALSE(has_closed_loop_stage(Algorithm::BC));
}

TEST(RunConfig, ShippedConfigsParse) {
  const fs::path dir = fs::path(MIMIC_SOURCE_DIR) / "configs";
  int n = 0;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() != ".toml") continue;
    if (entry.path().stem() == "demos") {
      EXPECT_NO_THROW(parse_demo_config(read_text_file(entry.path())));
    } else {
      EXPECT_NO_THROW(load_run_config(entry.path())) << entry.path();
    }
    ++n;
  }
  EXPECT_GE(n, 2);
}

TEST(DemoConfig, ParsesExpertTable) {
  const DemoConfig d = parse_demo_config("laps = 4\n[expert]\noffset_mean_m = -0.3\nseed = 9\n");
  EXPECT_EQ(d.laps, 4);
  EXPECT_EQ(d.profile.offset_mean, -0.3);
  EXPECT_EQ(d.profile.seed, 9u);
  EXPECT_THROW(parse_demo_config("[expert]\nnoise = 1\n"), ConfigError);
}

TEST(Seeds, DerivedInFixedOrder) {
  const RunSeeds a = derive_seeds(1);
  const RunSeeds b = derive_seeds(1);
  EXPECT_EQ(a.network, b.network);
  EXPECT_EQ(a.ol_shuffle, b.ol_shuffle);
  EXPECT_EQ(a.sc_shuffle, b.sc_shuffle);
  EXPECT_NE(a.network, a.ol_shuffle);
  EXPECT_NE(derive_seeds(2).network, a.network);
}

// Small BC then SC chain; two runs must write identical bytes.
TEST(Pipeline, RerunIsByteIdentical) {
  const Track& track = testing::default_track();
  const std::vector<Lap> laps = generate_expert_laps(track, ExpertProfile{}, 2);
  const ReferenceStats stats = reference_stats(laps, track);
  RunConfig c = parse_run_config(
      "id = \"det\"\nseed = 5\npolicy = \"nn_mpc\"\nvariant = \"setpoint_rate\"\nalgorithm = \"sl+sc\"\n"
      "lookahead_m = 9.72\n[ol]\nepochs = 1\n[sc]\nepochs = 1\nbatch_size = 2\nslice_s = 2.0\n");
  std::string metrics[2], loss[2];
  for (int i = 0; i < 2; ++i) {
    const fs::path dir = fs::temp_directory_path() / ("mimic_pipeline_" + std::to_string(i));
    fs::remove_all(dir);
    const TrainResult r = train(c, track, laps);
    ASSERT_EQ(r.stages.size(), 2u);
    const Evaluation ev = evaluate(r.policy, to_string(c.algorithm), Plant{}, track, laps, stats);
    write_training_artifacts(dir, c, r, "test");
    write_evaluation_artifacts(dir, ev, stats, c.dt);
    EXPECT_TRUE(fs::exists(dir / "checkpoint"));
    EXPECT_TRUE(fs::exists(dir / "table.txt"));
    EXPECT_TRUE(fs::exists(dir / "config.toml"));
    metrics[i] = read_text_file(dir / "metrics.json");
    loss[i] = read_text_file(dir / "traces" / "loss.csv");
  }
  EXPECT_EQ(metrics[0], metrics[1]);
  EXPECT_EQ(loss[0], loss[1]);
}

TEST(DiffCheck, SmallBatchWithinTolerance) {
  const DiffCheckResult r = diff_check(Variant::SetpointRate, 5, 11);
  EXPECT_EQ(r.instances + r.excluded, 5);
  EXPECT_LE(r.max_rel_err, 1e-4);
  EXPECT_EQ(r.csv().rfind("instance_id,param_index,adjoint,fd,rel_err\n", 0), 0u);
}

}  // namespace
}  // namespace mimic
