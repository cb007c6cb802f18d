#include <gtest/gtest.h>

#include <cmath>

#include "regalign/errors.hpp"
#include "regalign/features.hpp"
#include "regalign/learn.hpp"
#include "test_helpers.hpp"

using namespace regalign;

namespace {

double max_abs_diff(const FeatureMap& a, const FeatureMap& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) m = std::max(m, std::abs(double(a.data()[i]) - b.data()[i]));
  return m;
}

}  // namespace

TEST(Features, DeskScaleShapes) {
  const FeatureMap img = regalign::testing::smooth_texture(128, 96, 1, 1);
  const auto params = FeatureExtractorParams::random({32, 16, 8, 8}, 1, 7);
  const ImagePyramid p = extract_pyramid(img, params);
  ASSERT_EQ(p.size(), 4u);
  const int widths[] = {16, 32, 64, 128}, heights[] = {12, 24, 48, 96}, channels[] = {32, 16, 8, 8};
  for (int k = 0; k < 4; ++k) {
    EXPECT_EQ(p[k].width(), widths[k]);
    EXPECT_EQ(p[k].height(), heights[k]);
    EXPECT_EQ(p[k].channels(), channels[k]);
    EXPECT_TRUE(p[k].all_finite());
  }
}

TEST(Features, IdentityParamsReproduceGaussianPyramid) {
  const FeatureMap img = regalign::testing::smooth_texture(64, 48, 1, 2);
  const ImagePyramid a = extract_pyramid(img, FeatureExtractorParams::identity(4));
  const ImagePyramid b = gaussian_pyramid(img, 4);
  const ImagePyramid c = photometric_pyramid(img, 4);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    ASSERT_TRUE(a[k].same_shape(b[k]));
    EXPECT_LT(max_abs_diff(a[k], b[k]), 1e-6) << k;
    EXPECT_EQ(max_abs_diff(c[k], b[k]), 0.0) << k;
  }
}

TEST(Features, ConstantImageGivesConstantPhotometricPyramid) {
  const FeatureMap img(32, 24, 1, 0.25f);
  for (const auto& level : photometric_pyramid(img, 3).levels)
    for (float v : level.data()) EXPECT_NEAR(v, 0.25f, 1e-7);
}

TEST(Features, ForwardIsDeterministic) {
  const FeatureMap img = regalign::testing::smooth_texture(64, 48, 1, 3);
  const auto params = FeatureExtractorParams::random({16, 8, 4}, 1, 9);
  const ImagePyramid a = extract_pyramid(img, params), b = extract_pyramid(img, params);
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_EQ(max_abs_diff(a[k], b[k]), 0.0);
}

TEST(Features, TapeForwardMatchesInference) {
  const FeatureMap img = regalign::testing::smooth_texture(32, 24, 1, 4);
  auto params = FeatureExtractorParams::random({8, 4, 4}, 1, 11);
  const ImagePyramid ref = extract_pyramid(img, params);
  ad::Tape<double> t;
  const auto vars = bind_features<double>(t, params, {});
  const auto out = feature_forward<double>(vars, t.constant(to_matrix(img).cast<double>()), 24, 32);
  ASSERT_EQ(out.size(), 3u);
  for (std::size_t k = 0; k < out.size(); ++k) {
    const FeatureMap m = to_feature_map(out[k].value().cast<float>(), ref[k].width(), ref[k].height());
    EXPECT_LT(max_abs_diff(m, ref[k]), 1e-5) << k;
  }
}

TEST(Features, EveryParameterReceivesGradient) {
  const FeatureMap img = regalign::testing::smooth_texture(32, 24, 1, 5);
  auto params = FeatureExtractorParams::random({8, 4, 4}, 1, 13);
  ad::Tape<double> t;
  const auto vars = bind_features<double>(t, params, [](const std::string&) { return true; });
  const auto out = feature_forward<double>(vars, t.constant(to_matrix(img).cast<double>()), 24, 32);
  ad::Var<double> total = ad::sum_squares(out[0]);
  for (std::size_t k = 1; k < out.size(); ++k) total = ad::add(total, ad::sum_squares(out[k]));
  t.backward(total);
  for (const auto& v : {vars.enc_w, vars.enc_b, vars.dec_w, vars.dec_b})
    for (const auto& p : v) {
      ASSERT_TRUE(t.has_grad(p.id));
      EXPECT_GT(t.grad(p.id).cwiseAbs().maxCoeff(), 0.0);
    }
}

TEST(Features, RejectsIndivisibleImage) {
  const FeatureMap img(30, 24, 1, 0.5f);
  EXPECT_THROW(extract_pyramid(img, FeatureExtractorParams::random({4, 4, 4}, 1, 1)), DimensionError);
  EXPECT_THROW(photometric_pyramid(img, 3), DimensionError);
}

TEST(Features, TensorNamesFollowThePrefixConvention) {
  auto params = FeatureExtractorParams::random({8, 4}, 1, 1);
  for (const auto& [name, t] : params.named()) {
    EXPECT_EQ(name.rfind("fln.", 0), 0u) << name;
    EXPECT_TRUE(t->allFinite());
  }
  EXPECT_EQ(params.named().size(), 8u);
}
