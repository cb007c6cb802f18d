#include "regalign/image.hpp"

#include <cmath>
#include <string>

#include "regalign/errors.hpp"
#include "regalign/image_kernels.hpp"

namespace regalign {

FeatureMap::FeatureMap(int width, int height, int channels, float fill)
    : width_(width), height_(height), channels_(channels) {
  if (width < 0 || height < 0 || channels < 0) throw DimensionError("negative feature map size");
  data_.assign(static_cast<std::size_t>(width) * height * channels, fill);
}

FeatureMap::FeatureMap(int width, int height, int channels, std::vector<float> data)
    : width_(width), height_(height), channels_(channels), data_(std::move(data)) {
  if (data_.size() != static_cast<std::size_t>(width) * height * channels) {
    throw DimensionError("feature map data length does not match its shape");
  }
}

bool FeatureMap::all_finite() const {
  for (float x : data_)
    if (!std::isfinite(x)) return false;
  return true;
}

void ImagePyramid::validate() const {
  for (std::size_t k = 0; k + 1 < levels.size(); ++k) {
    if (levels[k + 1].width() != 2 * levels[k].width() || levels[k + 1].height() != 2 * levels[k].height()) {
      throw DimensionError("pyramid level " + std::to_string(k + 1) + " is not twice level " + std::to_string(k));
    }
  }
}

namespace {

template <class T>
bool sample_into(const FeatureMap& map, double u, double v, T* out) {
  const auto tap = kernels::bilinear_tap(u, v, map.width(), map.height());
  const int c = map.channels();
  if (!tap.valid) {
    for (int ch = 0; ch < c; ++ch) out[ch] = T(0);
    return false;
  }
  const float* d = map.data().data();
  const double w00 = (1 - tap.fy) * (1 - tap.fx), w01 = (1 - tap.fy) * tap.fx;
  const double w10 = tap.fy * (1 - tap.fx), w11 = tap.fy * tap.fx;
  for (int ch = 0; ch < c; ++ch) {
    out[ch] = static_cast<T>(w00 * d[tap.i00 * c + ch] + w01 * d[tap.i01 * c + ch] + w10 * d[tap.i10 * c + ch] +
                             w11 * d[tap.i11 * c + ch]);
  }
  return true;
}

}  // namespace

bool bilinear_sample_into(const FeatureMap& map, double u, double v, float* out) {
  return sample_into(map, u, v, out);
}

bool bilinear_sample_into(const FeatureMap& map, double u, double v, double* out) {
  return sample_into(map, u, v, out);
}

SampleResult bilinear_sample(const FeatureMap& map, PixelCoord p) {
  SampleResult r;
  r.value.resize(map.channels());
  r.valid = bilinear_sample_into(map, p.u, p.v, r.value.data());
  return r;
}

FeatureMap gaussian_downsample(const FeatureMap& map) {
  if (map.width() % 2 != 0 || map.height() % 2 != 0) {
    throw DimensionError("gaussian_downsample needs even width and height, got " +
                         std::to_string(map.width()) + "x" + std::to_string(map.height()));
  }
  FeatureMap out(map.width() / 2, map.height() / 2, map.channels());
  kernels::gaussian_downsample(map.data().data(), map.width(), map.height(), map.channels(), out.data().data());
  return out;
}

FeatureMap upsample_bilinear(const FeatureMap& map) {
  FeatureMap out(map.width() * 2, map.height() * 2, map.channels());
  kernels::upsample_bilinear(map.data().data(), map.width(), map.height(), map.channels(), out.data().data());
  return out;
}

std::pair<FeatureMap, FeatureMap> numerical_gradient(const FeatureMap& map) {
  if (map.width() < 3 || map.height() < 3) throw DimensionError("numerical_gradient needs at least 3x3");
  FeatureMap du(map.width(), map.height(), map.channels());
  FeatureMap dv(map.width(), map.height(), map.channels());
  kernels::numerical_gradient(map.data().data(), map.width(), map.height(), map.channels(), du.data().data(),
                              dv.data().data());
  return {std::move(du), std::move(dv)};
}

ImagePyramid gaussian_pyramid(const FeatureMap& image, int levels) {
  if (levels < 1) throw DimensionError("pyramid needs at least one level");
  const int div = 1 << (levels - 1);
  if (image.width() % div != 0 || image.height() % div != 0) {
    throw DimensionError("image size not divisible by 2^(levels-1)");
  }
  std::vector<FeatureMap> fine_to_coarse{image};
  for (int k = 1; k < levels; ++k) fine_to_coarse.push_back(gaussian_downsample(fine_to_coarse.back()));
  ImagePyramid p;
  p.levels.assign(fine_to_coarse.rbegin(), fine_to_coarse.rend());
  return p;
}

FeatureMap to_grayscale(const FeatureMap& rgb) {
  if (rgb.channels() == 1) return rgb;
  if (rgb.channels() < 3) throw DimensionError("grayscale conversion needs 1 or >= 3 channels");
  FeatureMap out(rgb.width(), rgb.height(), 1);
  for (int v = 0; v < rgb.height(); ++v)
    for (int u = 0; u < rgb.width(); ++u) {
      const float* p = rgb.pixel(u, v);
      out.at(u, v) = static_cast<float>(0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]);
    }
  return out;
}

FeatureMap concat_channels(const FeatureMap& a, const FeatureMap& b) {
  if (a.width() != b.width() || a.height() != b.height()) throw DimensionError("concat_channels: size mismatch");
  const int ca = a.channels(), cb = b.channels();
  FeatureMap out(a.width(), a.height(), ca + cb);
  for (std::size_t i = 0; i < a.pixel_count(); ++i) {
    for (int c = 0; c < ca; ++c) out.data()[i * (ca + cb) + c] = a.data()[i * ca + c];
    for (int c = 0; c < cb; ++c) out.data()[i * (ca + cb) + ca + c] = b.data()[i * cb + c];
  }
  return out;
}

FeatureMap extract_channel(const FeatureMap& map, int channel) {
  if (channel < 0 || channel >= map.channels()) throw DimensionError("channel index out of range");
  FeatureMap out(map.width(), map.height(), 1);
  for (std::size_t i = 0; i < map.pixel_count(); ++i) out.data()[i] = map.data()[i * map.channels() + channel];
  return out;
}

}  // namespace regalign
