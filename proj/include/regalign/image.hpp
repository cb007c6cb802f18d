#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "regalign/geometry.hpp"

namespace regalign {

/// H x W x C grid of 32-bit reals, row-major with channels innermost.
class FeatureMap {
 public:
  FeatureMap() = default;
  FeatureMap(int width, int height, int channels, float fill = 0.0f);
  FeatureMap(int width, int height, int channels, std::vector<float> data);

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width_) * height_; }
  bool empty() const { return data_.empty(); }

  float& at(int u, int v, int c = 0) { return data_[index(u, v, c)]; }
  float at(int u, int v, int c = 0) const { return data_[index(u, v, c)]; }
  const float* pixel(int u, int v) const { return data_.data() + index(u, v, 0); }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  std::vector<float>& storage() { return data_; }

  bool same_shape(const FeatureMap& o) const {
    return width_ == o.width_ && height_ == o.height_ && channels_ == o.channels_;
  }
  bool all_finite() const;

 private:
  std::size_t index(int u, int v, int c) const {
    return (static_cast<std::size_t>(v) * width_ + u) * channels_ + c;
  }
  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<float> data_;
};

/// Multi-resolution stack, coarsest level first; every level is exactly half
/// the size of the next one.
struct ImagePyramid {
  std::vector<FeatureMap> levels;

  std::size_t size() const { return levels.size(); }
  const FeatureMap& operator[](std::size_t i) const { return levels[i]; }
  const FeatureMap& finest() const { return levels.back(); }
  /// Throws DimensionError if the factor-2 schedule is broken.
  void validate() const;
};

struct SampleResult {
  std::vector<float> value;
  bool valid = false;
};

SampleResult bilinear_sample(const FeatureMap& map, PixelCoord p);
/// Writes channels() values into out; returns validity. No allocation.
bool bilinear_sample_into(const FeatureMap& map, double u, double v, float* out);
bool bilinear_sample_into(const FeatureMap& map, double u, double v, double* out);

FeatureMap gaussian_downsample(const FeatureMap& map);
FeatureMap upsample_bilinear(const FeatureMap& map);
std::pair<FeatureMap, FeatureMap> numerical_gradient(const FeatureMap& map);

/// Gaussian pyramid with `levels` levels; input is the finest level.
ImagePyramid gaussian_pyramid(const FeatureMap& image, int levels);

FeatureMap to_grayscale(const FeatureMap& rgb);
FeatureMap concat_channels(const FeatureMap& a, const FeatureMap& b);
FeatureMap extract_channel(const FeatureMap& map, int channel);

}  // namespace regalign
