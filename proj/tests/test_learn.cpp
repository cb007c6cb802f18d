#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "gradcheck.hpp"
#include "regalign/checkpoint.hpp"
#include "regalign/errors.hpp"
#include "regalign/learn.hpp"
#include "test_helpers.hpp"
#include "unroll_fixture.hpp"

using namespace regalign;
using namespace regalign::testing;

namespace {

TrainSample tiny_sample() {
  RenderedPair pair;
  pair.i1 = regalign::testing::smooth_texture(32, 24, 1, 5);
  pair.depth = FeatureMap(32, 24, 1, 4.0f);
  pair.intrinsics.fx = pair.intrinsics.fy = 26.0;
  pair.intrinsics.cx = 15.5;
  pair.intrinsics.cy = 11.5;
  pair.intrinsics.width = 32;
  pair.intrinsics.height = 24;
  pair.t_star = SE3Pose::identity();
  pair.i2 = pair.i1;
  return TrainSample::make(pair, 2, 3);
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.stage_epochs = {3, 2};
  c.batch_size = 2;
  c.adam.learning_rate = 1e-3;
  c.seed = 9;
  return c;
}

}  // namespace

TEST(Learn, UnrolledStepGradientDouble) {
  EXPECT_LT(unrolled_error(false, false), 1e-4);
  EXPECT_LT(unrolled_error(false, true), 1e-4);
  EXPECT_LT(unrolled_error(true, false), 1e-4);
}

TEST(Learn, UnrolledStepGradientFloat) {
  EXPECT_LT(unrolled_error_float(false, false), 1e-2);
  EXPECT_LT(unrolled_error_float(false, true), 1e-2);
  EXPECT_LT(unrolled_error_float(true, false), 1e-2);
}

TEST(Learn, PerturbationTranslationNormIsExact) {
  const BasisBuild bb = build_basis(tiny_depth(), kN);
  const SE3Pose t_star = se3_exp(Twist{Eigen::Vector3d(0.1, 0.0, 0.0), Eigen::Vector3d(0.3, 0.0, 0.0)});
  Rng rng(4, kStreamTrainPerturb);
  for (int i = 0; i < 50; ++i) {
    const Initialization init = sample_initialization(t_star, bb, 10.0, 0.10, 0.05, 0.5, rng);
    EXPECT_NEAR((init.pose.translation - t_star.translation).norm(), 0.10 * bb.mean_depth, 1e-12);
    const double angle = rotation_angle(init.pose.rotation * t_star.rotation.transpose());
    EXPECT_LE(angle, std::sqrt(3.0) * 10.0 * std::numbers::pi / 180.0 + 1e-12);
    EXPECT_LE(std::abs(init.w(0) / bb.w_star(0) - 1.0), 0.05 + 1e-12);
    for (int k = 1; k < kN; ++k) EXPECT_LE(std::abs(init.w(k)), 0.5);
  }
}

TEST(Learn, ZeroRangesReproduceGroundTruth) {
  const BasisBuild bb = build_basis(tiny_depth(), kN);
  const SE3Pose t_star = se3_exp(Twist{Eigen::Vector3d(0.1, 0.2, 0.0), Eigen::Vector3d(0.3, 0.0, 0.1)});
  Rng rng(4, 0);
  const Initialization init = sample_initialization(t_star, bb, 0.0, 0.0, 0.0, 0.0, rng);
  EXPECT_LT((init.pose.matrix() - t_star.matrix()).norm(), 1e-15);
  EXPECT_EQ(init.w(0), bb.w_star(0));
}

TEST(Learn, ReprojectionLossOfGroundTruthIsZero) {
  const BasisBuild bb = build_basis(tiny_depth(), kN);
  const SE3Pose t_star = se3_exp(Twist{Eigen::Vector3d(0.0, 0.02, 0.0), Eigen::Vector3d(0.1, 0.0, 0.0)});
  const FeatureMap d = decode_depth(bb.w_star, bb.basis);
  EXPECT_LT(reprojection_loss(t_star, bb.w_star, bb.basis, t_star, d, tiny_camera()), 1e-12);
  EXPECT_NEAR(bootstrap_loss(std::exp(2.0) - 1.0), 2.0, 1e-12);
}

TEST(Learn, ReprojectionLossOfPureShift) {
  // Translation t_x at constant depth d moves every pixel by fx t_x / d.
  const FeatureMap d(kW, kH, 1, 4.0f);
  const BasisBuild bb = build_basis(d, 1);
  const CameraIntrinsics k = tiny_camera();
  SE3Pose t;
  t.translation = Eigen::Vector3d(0.2, 0.0, 0.0);
  const double shift = k.fx * 0.2 / 4.0;
  EXPECT_NEAR(reprojection_loss(t, bb.w_star, bb.basis, SE3Pose::identity(), d, k), shift * shift, 1e-9);
  EXPECT_NEAR(mean_reprojection_distance(t, bb.w_star, bb.basis, SE3Pose::identity(), d, k), shift, 1e-9);
}

TEST(Learn, BerhuRegimes) {
  FeatureMap d(2, 1, 1), ds(2, 1, 1, 1.0f);
  d.at(0, 0) = 1.1f;  // |e| = 0.1 <= c = 0.2 * 1.0: L1
  d.at(1, 0) = 2.0f;  // |e| = 1.0 > c: (e^2 + c^2) / 2c
  const double e0 = double(1.1f) - 1.0, c = 0.2 * (2.0 - 1.0);
  EXPECT_NEAR(berhu(d, ds), (e0 + (1.0 + c * c) / (2 * c)) / 2.0, 1e-6);
}

TEST(Learn, AdamFirstStepIsSignedLearningRate) {
  Tensor p(1, 3);
  p << 1.0f, -2.0f, 0.5f;
  Tensor g(1, 3);
  g << 0.3f, -4.0f, 1e-3f;
  AdamState st;
  AdamConfig cfg;
  cfg.learning_rate = 0.01;
  adam_step({{"p", &p}}, {{"p", g}}, st, cfg);
  EXPECT_EQ(st.step, 1);
  EXPECT_NEAR(p(0), 1.0f - 0.01f, 1e-6);
  EXPECT_NEAR(p(1), -2.0f + 0.01f, 1e-6);
  EXPECT_NEAR(p(2), 0.5f - 0.01f * 1e-3f / (1e-3f + 1e-8f), 1e-6);
}

TEST(Learn, StageScheduleAndFreezing) {
  TrainConfig c;
  c.stage_epochs = {10, 4, 4, 4};
  EXPECT_EQ(c.total_epochs(), 22);
  EXPECT_EQ(c.locate(0), std::make_pair(0, 0));
  EXPECT_EQ(c.locate(10), std::make_pair(1, 0));
  EXPECT_EQ(c.locate(21), std::make_pair(3, 3));
  EXPECT_EQ(c.bootstrap_epochs(0), 3);
  EXPECT_EQ(c.bootstrap_epochs(1), 1);
  EXPECT_TRUE(trainable_in_stage("fln.enc3.w", 0, false));
  EXPECT_TRUE(trainable_in_stage("fln.dec0.b", 0, false));
  EXPECT_FALSE(trainable_in_stage("fln.dec1.w", 0, false));
  EXPECT_FALSE(trainable_in_stage("jpn.head.w", 0, false));
  EXPECT_TRUE(trainable_in_stage("jpn.head.w", 0, true));
  EXPECT_TRUE(trainable_in_stage("fln.dec2.w", 2, true));
  EXPECT_FALSE(trainable_in_stage("fln.enc0.w", 2, true));
  EXPECT_FALSE(trainable_in_stage("jpn.head.w", 1, true));
}

TEST(Learn, InvalidConfigRejected) {
  TrainConfig c;
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.stage_epochs = {};
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Learn, TrainingReducesLossOnOneSample) {
  std::vector<TrainSample> data;
  TrainSample s = tiny_sample();
  data.push_back(s);
  ModelBundle m = make_model({8, 4}, 1, false, 8, 3);
  TrainConfig c = tiny_config();
  c.stage_epochs = {40, 0};
  c.batch_size = 1;
  c.bootstrap_fraction = 0.0;
  TrainingState st;
  const auto rows = train(data, m, st, c);
  ASSERT_EQ(rows.size(), 40u);
  EXPECT_LT(rows.back().mean_reprojection_loss, rows.front().mean_reprojection_loss);
}

TEST(Learn, ResumeIsDeterministic) {
  std::vector<TrainSample> data{tiny_sample(), tiny_sample()};
  const TrainConfig c = tiny_config();
  ModelBundle a = make_model({8, 4}, 1, true, 4, 3);
  ModelBundle b = a;
  TrainingState sa, sb;
  train(data, a, sa, c);
  train(data, b, sb, c, 2);
  const auto path = std::filesystem::temp_directory_path() / "regalign_resume.ckpt";
  save_checkpoint(path, b, &sb);
  TrainingState sr;
  ModelBundle r = load_checkpoint(path, &sr);
  EXPECT_EQ(sr.epochs_done, 2);
  train(data, r, sr, c);
  EXPECT_EQ(sr.epochs_done, sa.epochs_done);
  auto na = a.named(), nr = r.named();
  ASSERT_EQ(na.size(), nr.size());
  for (std::size_t i = 0; i < na.size(); ++i) {
    EXPECT_EQ(na[i].first, nr[i].first);
    EXPECT_TRUE(*na[i].second == *nr[i].second) << na[i].first;
  }
  std::filesystem::remove(path);
}

TEST(Learn, BootstrapPhaseIsLoggedAtConfiguredEpoch) {
  std::vector<TrainSample> data{tiny_sample()};
  TrainConfig c = tiny_config();
  c.stage_epochs = {4, 2};
  c.bootstrap_fraction = 0.5;
  ModelBundle m = make_model({8, 4}, 1, false, 4, 3);
  TrainingState st;
  std::vector<std::string> events;
  const auto rows = train(data, m, st, c, -1, [&](const std::string& e) { events.push_back(e); });
  ASSERT_EQ(rows.size(), 6u);
  const std::vector<std::string> phases{"bootstrap", "bootstrap", "plain", "plain", "bootstrap", "plain"};
  for (std::size_t i = 0; i < rows.size(); ++i) EXPECT_EQ(rows[i].phase, phases[i]) << i;
  EXPECT_NE(std::find(events.begin(), events.end(), "epoch 2: phase plain (L)"), events.end());
  EXPECT_NE(std::find(events.begin(), events.end(), "epoch 5: phase plain (L)"), events.end());

  const auto path = std::filesystem::temp_directory_path() / "regalign_train_log.csv";
  write_train_log(path, rows, false);
  std::ifstream f(path);
  int lines = 0;
  for (std::string l; std::getline(f, l);) ++lines;
  EXPECT_EQ(lines, 7);
  std::filesystem::remove(path);
}
