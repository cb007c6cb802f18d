#include "regalign/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>

#include "regalign/errors.hpp"

namespace regalign {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open " + path.string());
  return f;
}

}  // namespace

FeatureMap read_png(const std::filesystem::path& path) {
  auto file = open_file(path, "rb");
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw IoError(path.string() + " is not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) throw IoError("libpng initialization failed");
  std::vector<png_bytep> rows;
  std::vector<unsigned char> buffer;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("failed to decode " + path.string());
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  const int color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_read_update_info(png, info);
  const int channels = png_get_channels(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  buffer.resize(stride * height);
  rows.resize(height);
  for (int y = 0; y < height; ++y) rows[y] = buffer.data() + y * stride;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  const int out_channels = (channels >= 3) ? 3 : 1;
  FeatureMap out(width, height, out_channels);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < out_channels; ++c)
        out.at(x, y, c) = static_cast<float>(rows[y][x * channels + c]) / 255.0f;
  return out;
}

FeatureMap read_png_grayscale(const std::filesystem::path& path) { return to_grayscale(read_png(path)); }

void write_png(const std::filesystem::path& path, const FeatureMap& map) {
  if (map.channels() != 1 && map.channels() != 3) throw DimensionError("write_png supports 1 or 3 channels");
  auto file = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) throw IoError("libpng initialization failed");
  const int c = map.channels();
  std::vector<unsigned char> buffer(map.data().size());
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    const float v = std::clamp(map.data()[i], 0.0f, 1.0f);
    buffer[i] = static_cast<unsigned char>(std::lround(v * 255.0f));
  }
  std::vector<png_bytep> rows(map.height());
  for (int y = 0; y < map.height(); ++y) rows[y] = buffer.data() + static_cast<std::size_t>(y) * map.width() * c;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed to encode " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, map.width(), map.height(), 8, c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

FeatureMap quantize_8bit(const FeatureMap& map) {
  FeatureMap out = map;
  for (float& v : out.data()) v = static_cast<float>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)) / 255.0f;
  return out;
}

namespace {

std::string read_token(std::istream& in) {
  std::string tok;
  char ch;
  while (in.get(ch)) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!tok.empty()) break;
    } else {
      tok.push_back(ch);
    }
  }
  return tok;
}

float byteswap_float(float v) {
  std::uint32_t u;
  std::memcpy(&u, &v, 4);
  u = ((u & 0xffu) << 24) | ((u & 0xff00u) << 8) | ((u >> 8) & 0xff00u) | (u >> 24);
  std::memcpy(&v, &u, 4);
  return v;
}

}  // namespace

FeatureMap read_pfm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string magic = read_token(in);
  int channels;
  if (magic == "Pf") {
    channels = 1;
  } else if (magic == "PF") {
    channels = 3;
  } else {
    throw IoError(path.string() + " is not a PFM file");
  }
  const int width = std::stoi(read_token(in));
  const int height = std::stoi(read_token(in));
  const double scale = std::stod(read_token(in));
  const bool little = scale < 0.0;
  FeatureMap out(width, height, channels);
  const std::size_t row = static_cast<std::size_t>(width) * channels;
  std::vector<float> buf(row);
  for (int y = height - 1; y >= 0; --y) {
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(row * sizeof(float)));
    if (!in) throw IoError("truncated PFM " + path.string());
    const bool swap = little != (std::endian::native == std::endian::little);
    for (std::size_t i = 0; i < row; ++i) {
      out.data()[static_cast<std::size_t>(y) * row + i] = swap ? byteswap_float(buf[i]) : buf[i];
    }
  }
  return out;
}

void write_pfm(const std::filesystem::path& path, const FeatureMap& map) {
  if (map.channels() != 1 && map.channels() != 3) throw DimensionError("write_pfm supports 1 or 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << (map.channels() == 1 ? "Pf" : "PF") << "\n" << map.width() << " " << map.height() << "\n-1.0\n";
  const std::size_t row = static_cast<std::size_t>(map.width()) * map.channels();
  for (int y = map.height() - 1; y >= 0; --y) {
    for (std::size_t i = 0; i < row; ++i) {
      float v = map.data()[static_cast<std::size_t>(y) * row + i];
      if constexpr (std::endian::native != std::endian::little) v = byteswap_float(v);
      out.write(reinterpret_cast<const char*>(&v), sizeof(float));
    }
  }
  if (!out) throw IoError("failed writing " + path.string());
}

void write_pfm_planes(const std::filesystem::path& path, const FeatureMap& multi) {
  const int n = multi.channels();
  FeatureMap stacked(multi.width(), multi.height() * n, 1);
  for (int k = 0; k < n; ++k)
    for (int v = 0; v < multi.height(); ++v)
      for (int u = 0; u < multi.width(); ++u) stacked.at(u, k * multi.height() + v) = multi.at(u, v, k);
  write_pfm(path, stacked);
}

FeatureMap read_pfm_planes(const std::filesystem::path& path, int planes) {
  const FeatureMap stacked = read_pfm(path);
  if (planes <= 0 || stacked.channels() != 1 || stacked.height() % planes != 0) {
    throw IoError(path.string() + " does not hold " + std::to_string(planes) + " stacked planes");
  }
  const int h = stacked.height() / planes;
  FeatureMap out(stacked.width(), h, planes);
  for (int k = 0; k < planes; ++k)
    for (int v = 0; v < h; ++v)
      for (int u = 0; u < stacked.width(); ++u) out.at(u, v, k) = stacked.at(u, k * h + v);
  return out;
}

void write_pgm(const std::filesystem::path& path, int width, int height, const std::vector<unsigned char>& pixels) {
  if (pixels.size() != static_cast<std::size_t>(width) * height) throw DimensionError("PGM size mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << width << " " << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
}

std::vector<unsigned char> read_pgm(const std::filesystem::path& path, int& width, int& height) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  if (read_token(in) != "P5") throw IoError(path.string() + " is not a binary PGM");
  width = std::stoi(read_token(in));
  height = std::stoi(read_token(in));
  if (std::stoi(read_token(in)) != 255) throw IoError("only 8-bit PGM is supported");
  std::vector<unsigned char> px(static_cast<std::size_t>(width) * height);
  in.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (!in) throw IoError("truncated PGM " + path.string());
  return px;
}

}  // namespace regalign
