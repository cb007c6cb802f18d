#include <cstdio>
#include <fstream>

#include "json.hpp"
#include "regalign/errors.hpp"
#include "regalign/image_io.hpp"
#include "regalign/parallel.hpp"
#include "regalign/synth.hpp"

namespace regalign {

namespace {

using nlohmann::json;

constexpr unsigned char kPgmVisible = 0, kPgmOccluded = 255, kPgmOutOfView = 128;

json intrinsics_json(const CameraIntrinsics& k) {
  return {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
}

CameraIntrinsics intrinsics_from(const json& j) {
  CameraIntrinsics k{j.at("fx").get<double>(), j.at("fy").get<double>(), j.at("cx").get<double>(),
                     j.at("cy").get<double>(), j.at("width").get<int>(),  j.at("height").get<int>()};
  k.validate();
  return k;
}

json pose_json(const SE3Pose& p) {
  const Eigen::Matrix4d m = p.matrix();
  json a = json::array();
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) a.push_back(m(r, c));
  return a;
}

SE3Pose pose_from(const json& j) {
  if (!j.is_array() || j.size() != 16) throw IoError("T_star must hold 16 numbers");
  Eigen::Matrix4d m;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) m(r, c) = j[4 * r + c].get<double>();
  return SE3Pose::from_matrix(m);
}

struct PairOutcome {
  DatasetEntry entry;
  int rejections = 0;
};

}  // namespace

void DatasetConfig::validate() const {
  scene.validate();
  if (scenes < 1) throw ConfigError("dataset.scenes must be at least 1");
  if (baselines < 1) throw ConfigError("dataset.baselines must be at least 1");
  if (!(min_visible > 0.0 && min_visible <= 1.0)) throw ConfigError("dataset.min_visible must be in (0, 1]");
  if (!(max_warp_rms > 0.0)) throw ConfigError("dataset.max_warp_rms must be positive");
  if (max_attempts < 1) throw ConfigError("dataset.max_attempts must be at least 1");
}

SynthSummary write_dataset(const std::filesystem::path& dir, const DatasetConfig& cfg, int threads) {
  cfg.validate();
  std::filesystem::create_directories(dir);
  const int n = cfg.scenes * cfg.baselines;
  std::vector<PairOutcome> out(static_cast<std::size_t>(n));
  parallel_for(n, threads, [&](int id) {
    const int scene_index = id / cfg.baselines, baseline = id % cfg.baselines;
    const std::uint64_t scene_seed = Rng(cfg.seed, kStreamScene, std::uint64_t(scene_index)).next();
    const Scene scene = generate_scene(scene_seed, cfg.scene);
    PairOutcome& o = out[static_cast<std::size_t>(id)];
    for (int attempt = 0;; ++attempt) {
      if (attempt == cfg.max_attempts) {
        throw InfeasiblePose("pair " + std::to_string(id) + ": no feasible pose after " +
                             std::to_string(cfg.max_attempts) + " attempts");
      }
      Rng rng(cfg.seed, kStreamPose, std::uint64_t(id) * 1024 + attempt);
      const SE3Pose t_star = sample_relative_pose(rng, baseline, cfg.scene.base_depth);
      RenderedPair pair;
      try {
        pair = render_pair(scene, t_star, cfg.min_visible);
      } catch (const InfeasiblePose&) {
        ++o.rejections;
        continue;
      }
      pair.i1 = quantize_8bit(pair.i1);
      pair.i2 = quantize_8bit(pair.i2);
      if (warp_consistency_rms(pair) >= cfg.max_warp_rms) {
        ++o.rejections;
        continue;
      }
      char name[32];
      std::snprintf(name, sizeof(name), "pair_%04d", id);
      const std::filesystem::path sub = dir / name;
      std::filesystem::create_directories(sub);
      write_png(sub / "i1.png", pair.i1);
      write_png(sub / "i2.png", pair.i2);
      write_pfm(sub / "depth.pfm", pair.depth);
      std::vector<unsigned char> occ(pair.occlusion.size());
      for (std::size_t i = 0; i < occ.size(); ++i)
        occ[i] = pair.occlusion[i] == kVisible ? kPgmVisible
                                               : (pair.occlusion[i] == kOccluded ? kPgmOccluded : kPgmOutOfView);
      write_pgm(sub / "occlusion.pgm", pair.depth.width(), pair.depth.height(), occ);
      const std::string rel = name;
      o.entry = {id, scene_seed, pair.intrinsics, t_star, rel + "/i1.png", rel + "/i2.png", rel + "/depth.pfm",
                 rel + "/occlusion.pgm"};
      break;
    }
  });

  SynthSummary summary;
  json pairs = json::array();
  for (const auto& o : out) {
    summary.rejections += o.rejections;
    summary.attempts += o.rejections + 1;
    ++summary.pairs;
    const auto& e = o.entry;
    pairs.push_back({{"id", e.id},
                     {"seed", e.seed},
                     {"K", intrinsics_json(e.intrinsics)},
                     {"T_star", pose_json(e.t_star)},
                     {"paths", {{"i1", e.i1}, {"i2", e.i2}, {"depth", e.depth}, {"occlusion", e.occlusion}}}});
  }
  const auto& s = cfg.scene;
  json manifest = {{"schema_version", kDatasetSchemaVersion},
                   {"seed", cfg.seed},
                   {"scene", {{"base_depth", s.base_depth},
                              {"amplitude", s.amplitude},
                              {"texture_octaves", s.texture_octaves},
                              {"width", s.width},
                              {"height", s.height},
                              {"focal", s.focal}}},
                   {"pairs", pairs}};
  std::ofstream f(dir / "manifest.json");
  if (!f) throw IoError("cannot write " + (dir / "manifest.json").string());
  f << manifest.dump(2) << "\n";
  return summary;
}

Dataset read_dataset(const std::filesystem::path& dir) {
  std::ifstream f(dir / "manifest.json");
  if (!f) throw IoError("no manifest.json in " + dir.string());
  json m;
  try {
    f >> m;
  } catch (const json::exception& e) {
    throw IoError("malformed manifest in " + dir.string() + ": " + e.what());
  }
  if (m.value("schema_version", -1) != kDatasetSchemaVersion) throw IoError("unsupported dataset schema version");
  Dataset d;
  d.root = dir;
  try {
    for (const auto& p : m.at("pairs")) {
      DatasetEntry e;
      e.id = p.at("id").get<int>();
      e.seed = p.at("seed").get<std::uint64_t>();
      e.intrinsics = intrinsics_from(p.at("K"));
      e.t_star = pose_from(p.at("T_star"));
      const auto& paths = p.at("paths");
      e.i1 = paths.at("i1").get<std::string>();
      e.i2 = paths.at("i2").get<std::string>();
      e.depth = paths.at("depth").get<std::string>();
      e.occlusion = paths.at("occlusion").get<std::string>();
      d.entries.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw IoError("malformed manifest entry in " + dir.string() + ": " + e.what());
  }
  return d;
}

RenderedPair Dataset::load(std::size_t index) const {
  const DatasetEntry& e = entries.at(index);
  RenderedPair p;
  p.i1 = read_png_grayscale(root / e.i1);
  p.i2 = read_png_grayscale(root / e.i2);
  p.depth = read_pfm(root / e.depth);
  p.t_star = e.t_star;
  p.intrinsics = e.intrinsics;
  int w = 0, h = 0;
  const auto occ = read_pgm(root / e.occlusion, w, h);
  if (w != p.depth.width() || h != p.depth.height() || !p.i1.same_shape(p.depth) || !p.i2.same_shape(p.depth)) {
    throw IoError("pair " + std::to_string(e.id) + " has inconsistent image sizes");
  }
  p.occlusion.resize(occ.size());
  for (std::size_t i = 0; i < occ.size(); ++i)
    p.occlusion[i] = occ[i] == kPgmVisible ? kVisible : (occ[i] == kPgmOccluded ? kOccluded : kOutOfView);
  return p;
}

}  // namespace regalign
