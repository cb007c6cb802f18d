#include "regalign/depth_basis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <utility>

#include "json.hpp"
#include "regalign/errors.hpp"
#include "regalign/image_io.hpp"

namespace regalign {

double depth_preactivation(const WeightVector& w, const DepthBasis& b, std::size_t pixel) {
  const int n = b.n_basis();
  const float* p = b.maps.data().data() + pixel * n;
  double s = 0.0;
  for (int k = 0; k < n; ++k) s += w[k] * double(p[k]);
  return s;
}

FeatureMap decode_depth(const WeightVector& w, const DepthBasis& b) {
  if (w.size() != b.n_basis()) {
    throw DimensionError("decode_depth: weight vector has " + std::to_string(w.size()) + " entries, basis has " +
                         std::to_string(b.n_basis()));
  }
  FeatureMap out(b.width(), b.height(), 1);
  for (std::size_t i = 0; i < out.pixel_count(); ++i) {
    out.data()[i] = static_cast<float>(std::max(0.0, depth_preactivation(w, b, i)));
  }
  return out;
}

Eigen::VectorXd depth_jacobian(const WeightVector& w, const DepthBasis& b, int u, int v) {
  const std::size_t i = static_cast<std::size_t>(v) * b.width() + u;
  Eigen::VectorXd j = Eigen::VectorXd::Zero(b.n_basis());
  if (depth_preactivation(w, b, i) > 0.0) {
    for (int k = 0; k < b.n_basis(); ++k) j[k] = b.maps.data()[i * b.n_basis() + k];
  }
  return j;
}

BasisBuild build_basis(const FeatureMap& depth, int n_basis) {
  if (n_basis < 1) throw DimensionError("build_basis needs n_basis >= 1");
  if (depth.channels() != 1) throw DimensionError("build_basis expects a 1-channel depth map");
  double sum = 0.0;
  for (float d : depth.data()) {
    if (!(d > 0.0f)) throw DimensionError("build_basis: ground-truth depth must be positive everywhere");
    sum += d;
  }
  const double mean = sum / double(depth.pixel_count());
  const int w = depth.width(), h = depth.height();

  std::vector<std::pair<int, int>> modes;
  for (int p = 0; p <= n_basis; ++p)
    for (int q = 0; q <= n_basis; ++q)
      if (p + q > 0) modes.emplace_back(p, q);
  std::stable_sort(modes.begin(), modes.end(), [](auto a, auto b) {
    const int fa = a.first * a.first + a.second * a.second, fb = b.first * b.first + b.second * b.second;
    if (fa != fb) return fa < fb;
    return a.second < b.second;
  });
  modes.resize(n_basis - 1);

  BasisBuild out;
  out.mean_depth = mean;
  out.basis.maps = FeatureMap(w, h, n_basis);
  const double amp = 0.1 * mean;
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) {
      out.basis.maps.at(u, v, 0) = static_cast<float>(double(depth.at(u, v)) / mean);
      for (int k = 1; k < n_basis; ++k) {
        const auto [p, q] = modes[k - 1];
        out.basis.maps.at(u, v, k) = static_cast<float>(amp * std::cos(std::numbers::pi * p * (u + 0.5) / w) *
                                                        std::cos(std::numbers::pi * q * (v + 0.5) / h));
      }
    }
  out.w_star = WeightVector::Zero(n_basis);
  out.w_star[0] = mean;
  return out;
}

DepthBasis downsample_basis(const DepthBasis& b) { return DepthBasis{gaussian_downsample(b.maps)}; }

std::vector<DepthBasis> basis_pyramid(const DepthBasis& finest, int levels) {
  std::vector<DepthBasis> fine_to_coarse{finest};
  for (int k = 1; k < levels; ++k) fine_to_coarse.push_back(downsample_basis(fine_to_coarse.back()));
  return {fine_to_coarse.rbegin(), fine_to_coarse.rend()};
}

void save_basis(const std::filesystem::path& pfm_path, const BasisBuild& b) {
  write_pfm_planes(pfm_path, b.basis.maps);
  nlohmann::json j;
  j["n_basis"] = b.basis.n_basis();
  j["width"] = b.basis.width();
  j["height"] = b.basis.height();
  j["w_star"] = std::vector<double>(b.w_star.data(), b.w_star.data() + b.w_star.size());
  j["mean_depth"] = b.mean_depth;
  std::ofstream out(std::filesystem::path(pfm_path).replace_extension(".json"));
  if (!out) throw IoError("cannot write basis sidecar for " + pfm_path.string());
  out << j.dump(2) << "\n";
}

BasisBuild load_basis(const std::filesystem::path& pfm_path) {
  std::ifstream in(std::filesystem::path(pfm_path).replace_extension(".json"));
  if (!in) throw IoError("missing basis sidecar for " + pfm_path.string());
  const auto j = nlohmann::json::parse(in);
  BasisBuild b;
  const int n = j.at("n_basis").get<int>();
  b.basis.maps = read_pfm_planes(pfm_path, n);
  if (b.basis.width() != j.at("width").get<int>() || b.basis.height() != j.at("height").get<int>()) {
    throw IoError("basis sidecar shape disagrees with " + pfm_path.string());
  }
  const auto ws = j.at("w_star").get<std::vector<double>>();
  b.w_star = Eigen::Map<const Eigen::VectorXd>(ws.data(), static_cast<Eigen::Index>(ws.size()));
  b.mean_depth = j.value("mean_depth", ws.empty() ? 0.0 : ws[0]);
  return b;
}

}  // namespace regalign
