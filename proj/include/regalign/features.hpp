#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "regalign/image.hpp"
#include "regalign/ad_ops.hpp"
#include "regalign/tape.hpp"

namespace regalign {

using Tensor = ad::Mat<float>;
using NamedTensors = std::vector<std::pair<std::string, Tensor*>>;

/// U-shaped feature network. Level k (coarsest first) has an encoder conv
/// fed by the Gaussian-downsampled encoder output of level k+1 (the image at
/// the finest level) and a decoder conv fed by [encoder_k, upsampled f_{k-1}].
/// Encoders use ReLU; decoder outputs are linear.
struct FeatureExtractorParams {
  int input_channels = 1;
  std::vector<int> level_channels;  // coarsest first
  std::vector<Tensor> enc_w, enc_b, dec_w, dec_b;

  int levels() const { return static_cast<int>(level_channels.size()); }
  int encoder_inputs(int level) const;
  int decoder_inputs(int level) const;
  void validate() const;
  NamedTensors named();

  static FeatureExtractorParams random(std::vector<int> level_channels, int input_channels, std::uint64_t seed);
  /// Single-channel delta kernels; reproduces the Gaussian pyramid.
  static FeatureExtractorParams identity(int levels);
};

/// Kaiming-uniform init of a (fan_in x fan_out) kernel.
Tensor kaiming_uniform(int fan_in, int fan_out, std::uint64_t seed, std::uint64_t stream, float gain = 1.0f);

template <class S>
ad::Mat<S> cast_tensor(const Tensor& t) {
  return t.template cast<S>();
}

template <class S>
struct FeatureVars {
  std::vector<ad::Var<S>> enc_w, enc_b, dec_w, dec_b;
};

using TrainablePredicate = std::function<bool(const std::string&)>;

template <class S>
FeatureVars<S> bind_features(ad::Tape<S>& tape, const FeatureExtractorParams& p, const TrainablePredicate& trainable) {
  FeatureVars<S> v;
  auto put = [&](const std::string& name, const Tensor& t) {
    return (trainable && trainable(name)) ? tape.parameter(cast_tensor<S>(t)) : tape.constant(cast_tensor<S>(t));
  };
  for (int k = 0; k < p.levels(); ++k) {
    const std::string pre = "fln.";
    v.enc_w.push_back(put(pre + "enc" + std::to_string(k) + ".w", p.enc_w[k]));
    v.enc_b.push_back(put(pre + "enc" + std::to_string(k) + ".b", p.enc_b[k]));
    v.dec_w.push_back(put(pre + "dec" + std::to_string(k) + ".w", p.dec_w[k]));
    v.dec_b.push_back(put(pre + "dec" + std::to_string(k) + ".b", p.dec_b[k]));
  }
  return v;
}

/// Forward pass on an (h*w) x Cin image. Returns the feature maps of levels
/// 0..upto (coarsest first); finer decoders are skipped.
template <class S>
std::vector<ad::Var<S>> feature_forward(const FeatureVars<S>& v, ad::Var<S> image, int h, int w, int upto = -1) {
  const int levels = static_cast<int>(v.enc_w.size());
  if (upto < 0) upto = levels - 1;
  if (h % (1 << (levels - 1)) || w % (1 << (levels - 1))) {
    throw DimensionError("image size must be divisible by 2^(levels-1)");
  }
  std::vector<ad::Var<S>> enc(levels);
  ad::Var<S> x = image;
  for (int k = levels - 1; k >= 0; --k) {
    const int s = levels - 1 - k;
    if (k != levels - 1) x = ad::downsample(x, h >> (s - 1), w >> (s - 1));
    enc[k] = ad::relu(ad::conv2d(x, v.enc_w[k], v.enc_b[k], h >> s, w >> s, 3));
    x = enc[k];
  }
  std::vector<ad::Var<S>> out;
  for (int k = 0; k <= upto; ++k) {
    const int s = levels - 1 - k;
    ad::Var<S> in = enc[k];
    if (k > 0) in = ad::hcat<S>({enc[k], ad::upsample(out.back(), h >> (s + 1), w >> (s + 1))});
    out.push_back(ad::conv2d(in, v.dec_w[k], v.dec_b[k], h >> s, w >> s, 3));
  }
  return out;
}

ImagePyramid extract_pyramid(const FeatureMap& image, const FeatureExtractorParams& params);
/// Grayscale Gaussian pyramid, the photometric baseline.
ImagePyramid photometric_pyramid(const FeatureMap& image, int levels);

ad::Mat<float> to_matrix(const FeatureMap& m);
FeatureMap to_feature_map(const ad::Mat<float>& m, int width, int height);

}  // namespace regalign
