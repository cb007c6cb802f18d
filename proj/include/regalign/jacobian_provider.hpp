#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>

#include "regalign/features.hpp"
#include "regalign/residual.hpp"

namespace regalign {

/// Damped-system ingredients J^T J and J^T r.
struct NormalEquations {
  Eigen::MatrixXd jtj;
  Eigen::VectorXd jtr;
};

class JacobianProvider {
 public:
  virtual ~JacobianProvider() = default;
  virtual std::string name() const = 0;
  virtual JacobianMatrix jacobian(const AlignmentProblem& problem, const SE3Pose& pose, const WeightVector& w) const = 0;
  /// Default forms J explicitly; providers may accumulate directly.
  virtual NormalEquations normal_equations(const AlignmentProblem& problem, const SE3Pose& pose,
                                           const WeightVector& w, const ResidualVector& r) const;
};

class NumericalProvider final : public JacobianProvider {
 public:
  std::string name() const override { return "numerical"; }
  JacobianMatrix jacobian(const AlignmentProblem& problem, const SE3Pose& pose, const WeightVector& w) const override;
  /// Accumulates per pixel through the 2x2 structure tensor of the sampled
  /// feature gradients, so the cost does not grow with the channel count.
  NormalEquations normal_equations(const AlignmentProblem& problem, const SE3Pose& pose, const WeightVector& w,
                                   const ResidualVector& r) const override;
};

/// Predicts the per-pixel (C x 6) pose block from [f1, warped f2, validity].
struct LearnedJacobianParams {
  static constexpr int kBlocks = 4;
  int feature_channels = 0;
  int hidden = 64;
  Tensor stem_w, stem_b;
  std::array<Tensor, kBlocks> conv1_w, conv1_b, conv2_w, conv2_b;
  Tensor head_w, head_b;

  int input_channels() const { return 2 * feature_channels + 1; }
  void validate() const;
  NamedTensors named();
  static LearnedJacobianParams random(int feature_channels, int hidden, std::uint64_t seed, float head_gain = 0.1f);
};

template <class S>
struct JacobianNetVars {
  ad::Var<S> stem_w, stem_b;
  std::array<ad::Var<S>, LearnedJacobianParams::kBlocks> conv1_w, conv1_b, conv2_w, conv2_b;
  ad::Var<S> head_w, head_b;
};

template <class S>
JacobianNetVars<S> bind_jacobian_net(ad::Tape<S>& tape, const LearnedJacobianParams& p,
                                     const TrainablePredicate& trainable) {
  auto put = [&](const std::string& name, const Tensor& t) {
    return (trainable && trainable(name)) ? tape.parameter(cast_tensor<S>(t)) : tape.constant(cast_tensor<S>(t));
  };
  JacobianNetVars<S> v;
  v.stem_w = put("jpn.stem.w", p.stem_w);
  v.stem_b = put("jpn.stem.b", p.stem_b);
  for (int i = 0; i < LearnedJacobianParams::kBlocks; ++i) {
    const std::string s = "jpn.block" + std::to_string(i);
    v.conv1_w[i] = put(s + ".conv1.w", p.conv1_w[i]);
    v.conv1_b[i] = put(s + ".conv1.b", p.conv1_b[i]);
    v.conv2_w[i] = put(s + ".conv2.w", p.conv2_w[i]);
    v.conv2_b[i] = put(s + ".conv2.b", p.conv2_b[i]);
  }
  v.head_w = put("jpn.head.w", p.head_w);
  v.head_b = put("jpn.head.b", p.head_b);
  return v;
}

/// input: (h*w) x (2C+1). Returns (h*w*C) x 6 with row pixel*C + channel.
template <class S>
ad::Var<S> jacobian_net_forward(const JacobianNetVars<S>& v, ad::Var<S> input, int h, int w) {
  ad::Var<S> x = ad::relu(ad::conv2d(input, v.stem_w, v.stem_b, h, w, 1));
  for (int i = 0; i < LearnedJacobianParams::kBlocks; ++i) {
    ad::Var<S> y = ad::relu(ad::conv2d(x, v.conv1_w[i], v.conv1_b[i], h, w, 3));
    y = ad::conv2d(y, v.conv2_w[i], v.conv2_b[i], h, w, 3);
    x = ad::relu(ad::add(x, y));
  }
  ad::Var<S> out = ad::conv2d(x, v.head_w, v.head_b, h, w, 1);
  return ad::reshape(out, out.rows() * (out.cols() / 6), 6);
}

class LearnedProvider final : public JacobianProvider {
 public:
  explicit LearnedProvider(std::shared_ptr<const LearnedJacobianParams> params);
  std::string name() const override { return "learned"; }
  JacobianMatrix jacobian(const AlignmentProblem& problem, const SE3Pose& pose, const WeightVector& w) const override;

 private:
  std::shared_ptr<const LearnedJacobianParams> params_;
};

/// f2 sampled at the warp of every grid pixel; invalid pixels are zero and a
/// trailing validity channel (1 valid, 0 invalid) is appended.
FeatureMap warp_feature_map(const FeatureMap& f2, const SE3Pose& pose, const WeightVector& w, const DepthBasis& basis,
                            const CameraIntrinsics& k);

}  // namespace regalign
