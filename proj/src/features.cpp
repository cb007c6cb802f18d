#include "regalign/features.hpp"

#include <cmath>

#include "regalign/errors.hpp"
#include "regalign/rng.hpp"

namespace regalign {

int FeatureExtractorParams::encoder_inputs(int level) const {
  return level == levels() - 1 ? input_channels : level_channels[level + 1];
}

int FeatureExtractorParams::decoder_inputs(int level) const {
  return level_channels[level] + (level > 0 ? level_channels[level - 1] : 0);
}

void FeatureExtractorParams::validate() const {
  const int l = levels();
  if (l < 1) throw DimensionError("feature extractor needs at least one level");
  if (int(enc_w.size()) != l || int(enc_b.size()) != l || int(dec_w.size()) != l || int(dec_b.size()) != l) {
    throw DimensionError("feature extractor tensor count does not match the level count");
  }
  for (int k = 0; k < l; ++k) {
    const int c = level_channels[k];
    if (enc_w[k].rows() != 9 * encoder_inputs(k) || enc_w[k].cols() != c || enc_b[k].rows() != 1 ||
        enc_b[k].cols() != c) {
      throw DimensionError("encoder " + std::to_string(k) + " has inconsistent kernel shape");
    }
    if (dec_w[k].rows() != 9 * decoder_inputs(k) || dec_w[k].cols() != c || dec_b[k].rows() != 1 ||
        dec_b[k].cols() != c) {
      throw DimensionError("decoder " + std::to_string(k) + " has inconsistent kernel shape");
    }
    for (const Tensor* t : {&enc_w[k], &enc_b[k], &dec_w[k], &dec_b[k]})
      if (!t->allFinite()) throw DimensionError("feature extractor has non-finite parameters");
  }
}

NamedTensors FeatureExtractorParams::named() {
  NamedTensors out;
  for (int k = 0; k < levels(); ++k) {
    const std::string s = std::to_string(k);
    out.emplace_back("fln.enc" + s + ".w", &enc_w[k]);
    out.emplace_back("fln.enc" + s + ".b", &enc_b[k]);
    out.emplace_back("fln.dec" + s + ".w", &dec_w[k]);
    out.emplace_back("fln.dec" + s + ".b", &dec_b[k]);
  }
  return out;
}

Tensor kaiming_uniform(int fan_in, int fan_out, std::uint64_t seed, std::uint64_t stream, float gain) {
  Rng rng(seed, kStreamInit, stream);
  const double bound = gain * std::sqrt(6.0 / fan_in);
  Tensor t(fan_in, fan_out);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<float>(rng.uniform(-bound, bound));
  return t;
}

FeatureExtractorParams FeatureExtractorParams::random(std::vector<int> level_channels, int input_channels,
                                                      std::uint64_t seed) {
  FeatureExtractorParams p;
  p.input_channels = input_channels;
  p.level_channels = std::move(level_channels);
  for (int k = 0; k < p.levels(); ++k) {
    const int c = p.level_channels[k];
    p.enc_w.push_back(kaiming_uniform(9 * p.encoder_inputs(k), c, seed, 100 + 2 * k));
    p.enc_b.push_back(Tensor::Zero(1, c));
    // Linear output layer: unit-gain fan-in scaling.
    p.dec_w.push_back(kaiming_uniform(9 * p.decoder_inputs(k), c, seed, 101 + 2 * k, float(std::sqrt(0.5))));
    p.dec_b.push_back(Tensor::Zero(1, c));
  }
  p.validate();
  return p;
}

FeatureExtractorParams FeatureExtractorParams::identity(int levels) {
  FeatureExtractorParams p;
  p.input_channels = 1;
  p.level_channels.assign(levels, 1);
  for (int k = 0; k < levels; ++k) {
    Tensor e = Tensor::Zero(9, 1);
    e(4, 0) = 1.0f;
    p.enc_w.push_back(e);
    p.enc_b.push_back(Tensor::Zero(1, 1));
    Tensor d = Tensor::Zero(9 * p.decoder_inputs(k), 1);
    d(4 * p.decoder_inputs(k), 0) = 1.0f;  // centre tap of the encoder channel
    p.dec_w.push_back(d);
    p.dec_b.push_back(Tensor::Zero(1, 1));
  }
  return p;
}

ad::Mat<float> to_matrix(const FeatureMap& m) {
  ad::Mat<float> out(static_cast<Eigen::Index>(m.pixel_count()), m.channels());
  std::copy(m.data().begin(), m.data().end(), out.data());
  return out;
}

FeatureMap to_feature_map(const ad::Mat<float>& m, int width, int height) {
  if (m.rows() != static_cast<Eigen::Index>(width) * height) throw DimensionError("matrix is not width*height rows");
  return FeatureMap(width, height, static_cast<int>(m.cols()), std::vector<float>(m.data(), m.data() + m.size()));
}

ImagePyramid extract_pyramid(const FeatureMap& image, const FeatureExtractorParams& params) {
  params.validate();
  if (image.channels() != params.input_channels) {
    throw DimensionError("image has " + std::to_string(image.channels()) + " channels, extractor expects " +
                         std::to_string(params.input_channels));
  }
  ad::Tape<float> tape;
  const auto vars = bind_features<float>(tape, params, nullptr);
  const auto out = feature_forward<float>(vars, tape.constant(to_matrix(image)), image.height(), image.width());
  ImagePyramid pyr;
  for (int k = 0; k < params.levels(); ++k) {
    const int s = params.levels() - 1 - k;
    pyr.levels.push_back(to_feature_map(out[k].value(), image.width() >> s, image.height() >> s));
  }
  return pyr;
}

ImagePyramid photometric_pyramid(const FeatureMap& image, int levels) {
  return gaussian_pyramid(image.channels() == 1 ? image : to_grayscale(image), levels);
}

}  // namespace regalign
