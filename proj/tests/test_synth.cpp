#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>

#include "regalign/errors.hpp"
#include "regalign/synth.hpp"

using namespace regalign;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

fs::path scratch_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("regalign_synth_" + name);
  fs::remove_all(d);
  return d;
}

double horizontal_gradient_std(const FeatureMap& m) {
  double s = 0.0, s2 = 0.0;
  int n = 0;
  for (int v = 0; v < m.height(); ++v)
    for (int u = 0; u + 1 < m.width(); ++u) {
      const double g = m.at(u + 1, v) - m.at(u, v);
      s += g;
      s2 += g * g;
      ++n;
    }
  const double mean = s / n;
  return std::sqrt(std::max(0.0, s2 / n - mean * mean));
}

}  // namespace

TEST(Synth, SceneGenerationIsDeterministic) {
  const Scene a = generate_scene(42), b = generate_scene(42), c = generate_scene(43);
  bool differs = false;
  for (double x = -2.0; x <= 2.0; x += 0.37)
    for (double y = -1.5; y <= 1.5; y += 0.41) {
      EXPECT_EQ(a.height_at(x, y), b.height_at(x, y));
      EXPECT_EQ(a.texture_at(x, y), b.texture_at(x, y));
      differs |= a.texture_at(x, y) != c.texture_at(x, y);
    }
  EXPECT_TRUE(differs);
}

TEST(Synth, ZeroAmplitudeIsAPlaneAtTheBaseDepth) {
  SceneParams p;
  p.amplitude = 0.0;
  const Scene s = generate_scene(7, p);
  const RenderedPair pair = render_pair(s, SE3Pose::identity());
  for (float d : pair.depth.data()) EXPECT_NEAR(d, p.base_depth, 1e-9);
}

TEST(Synth, IdentityPoseRendersIdenticalImages) {
  const Scene s = generate_scene(11);
  const RenderedPair pair = render_pair(s, SE3Pose::identity());
  EXPECT_TRUE(std::equal(pair.i1.data().begin(), pair.i1.data().end(), pair.i2.data().begin()));
  EXPECT_GT(pair.visible_fraction(), 0.99);
  EXPECT_LT(warp_consistency_rms(pair), 1e-6);
}

TEST(Synth, TexturesAreNeverFlat) {
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    const RenderedPair pair = render_pair(generate_scene(seed), SE3Pose::identity());
    EXPECT_GT(horizontal_gradient_std(pair.i1), 0.01) << seed;
  }
}

TEST(Synth, SampledPairsAreWarpConsistent) {
  Rng rng(5, 1);
  int checked = 0;
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    const Scene s = generate_scene(seed);
    for (int b = 0; b < 4; ++b) {
      try {
        const RenderedPair pair = render_pair(s, sample_relative_pose(rng, b, s.params().base_depth));
        EXPECT_GE(pair.visible_fraction(), 0.5);
        EXPECT_LT(warp_consistency_rms(pair), 0.02) << seed << ' ' << b;
        ++checked;
      } catch (const InfeasiblePose&) {
      }
    }
  }
  EXPECT_GT(checked, 8);
}

TEST(Synth, PlanarRollKeepsEveryPixelConsistent) {
  SceneParams p;
  p.amplitude = 0.0;
  const Scene s = generate_scene(3, p);
  Twist xi;
  xi.omega = Eigen::Vector3d(0, 0, 5.0 * std::numbers::pi / 180.0);
  const RenderedPair pair = render_pair(s, se3_exp(xi));
  for (float d : pair.depth.data()) EXPECT_NEAR(d, p.base_depth, 1e-9);
  for (std::uint8_t o : pair.occlusion) EXPECT_NE(o, kOccluded);
  EXPECT_LT(warp_consistency_rms(pair), 0.02);
}

TEST(Synth, PerturbationTranslationNormIsExact) {
  Rng rng(9, 2);
  const SE3Pose t_star = se3_exp(Twist{Eigen::Vector3d(0.1, 0.0, -0.05), Eigen::Vector3d(0.2, -0.1, 0.05)});
  for (int i = 0; i < 200; ++i) {
    const SE3Pose p = perturb_pose(t_star, 10.0, 0.1, 4.0, rng);
    EXPECT_NEAR((p.translation - t_star.translation).norm(), 0.4, 1e-12);
  }
}

TEST(Synth, PerturbationRotationComponentsAreUniform) {
  Rng rng(10, 3);
  const double range = 15.0 * std::numbers::pi / 180.0;
  const int n = 3000;
  std::array<std::vector<double>, 3> comp;
  for (int i = 0; i < n; ++i) {
    const SE3Pose p = perturb_pose(SE3Pose::identity(), 15.0, 0.0, 4.0, rng);
    const Twist xi = se3_log(p);
    for (int a = 0; a < 3; ++a) comp[a].push_back(xi.omega[a]);
  }
  for (auto& c : comp) {
    std::sort(c.begin(), c.end());
    double ks = 0.0;
    for (int i = 0; i < n; ++i) {
      const double cdf = (c[i] + range) / (2.0 * range);
      ks = std::max({ks, std::abs(cdf - double(i) / n), std::abs(cdf - double(i + 1) / n)});
    }
    // 1% critical value of the Kolmogorov-Smirnov statistic.
    EXPECT_LT(ks, 1.63 / std::sqrt(double(n)));
  }
}

TEST(Synth, DepthPriorNoise) {
  Rng rng(4, 4);
  WeightVector w(5);
  w << 2.0, 0.1, -0.2, 0.3, 0.0;
  for (int i = 0; i < 100; ++i) {
    const WeightVector p = perturb_weights(w, 0.1, 0.05, rng);
    EXPECT_LE(std::abs(p[0] / w[0] - 1.0), 0.1 + 1e-15);
    for (int k = 1; k < 5; ++k) EXPECT_LE(std::abs(p[k]), 0.05);
  }
}

TEST(Synth, DatasetIsByteIdenticalForTheSameSeed) {
  DatasetConfig c;
  c.scenes = 2;
  c.baselines = 2;
  const fs::path a = scratch_dir("a"), b = scratch_dir("b");
  const SynthSummary sa = write_dataset(a, c, 1), sb = write_dataset(b, c, 2);
  EXPECT_EQ(sa.pairs, 4);
  EXPECT_EQ(sa.rejections, sb.rejections);
  int files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), a);
    EXPECT_EQ(slurp(e.path()), slurp(b / rel)) << rel;
    ++files;
  }
  EXPECT_GT(files, 4);
  const Dataset d = read_dataset(a);
  ASSERT_EQ(d.size(), 4u);
  const RenderedPair p = d.load(3);
  EXPECT_EQ(p.i1.width(), 128);
  EXPECT_EQ(p.depth.height(), 96);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Synth, InvalidConfigIsRejected) {
  DatasetConfig c;
  c.scenes = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  SceneParams p;
  p.width = 4;
  EXPECT_THROW(p.validate(), ConfigError);
}
