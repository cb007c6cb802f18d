#pragma once

#include <filesystem>
#include <vector>

#include "regalign/image.hpp"

namespace regalign {

/// Loads an 8-bit PNG. Values are scaled to [0,1]; gray stays 1 channel,
/// color keeps RGB (alpha is dropped).
FeatureMap read_png(const std::filesystem::path& path);
/// Loads a PNG and converts it to 1-channel luma.
FeatureMap read_png_grayscale(const std::filesystem::path& path);
/// Writes a 1- or 3-channel map as 8-bit PNG, clamping to [0,1].
void write_png(const std::filesystem::path& path, const FeatureMap& map);

/// Portable float map, little-endian, 1 ("Pf") or 3 ("PF") channels.
FeatureMap read_pfm(const std::filesystem::path& path);
void write_pfm(const std::filesystem::path& path, const FeatureMap& map);

/// Several same-shape 1-channel planes stacked vertically in one PFM.
void write_pfm_planes(const std::filesystem::path& path, const FeatureMap& multi_channel);
FeatureMap read_pfm_planes(const std::filesystem::path& path, int planes);

/// Binary 8-bit PGM (P5).
void write_pgm(const std::filesystem::path& path, int width, int height, const std::vector<unsigned char>& pixels);
std::vector<unsigned char> read_pgm(const std::filesystem::path& path, int& width, int& height);

/// Rounds values to the 8-bit grid used by PNG storage.
FeatureMap quantize_8bit(const FeatureMap& map);

}  // namespace regalign
