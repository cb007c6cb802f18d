#include "regalign/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "regalign/errors.hpp"

namespace regalign {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[4] = {'R', 'G', 'N', 'T'};

void put_u32(std::ofstream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t get_u32(std::ifstream& in, const std::filesystem::path& path) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), 4)) throw IoError("truncated checkpoint " + path.string());
  return v;
}

Tensor scalar_tensor(double v) {
  Tensor t(1, 1);
  t(0, 0) = static_cast<float>(v);
  return t;
}

const Tensor& need(const std::map<std::string, Tensor>& t, const std::string& name, const std::filesystem::path& p) {
  auto it = t.find(name);
  if (it == t.end()) throw IoError("checkpoint " + p.string() + " lacks tensor " + name);
  return it->second;
}

}  // namespace

void write_tensors(const std::filesystem::path& path, const std::map<std::string, Tensor>& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, 2);
    put_u32(out, static_cast<std::uint32_t>(t.rows()));
    put_u32(out, static_cast<std::uint32_t>(t.cols()));
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
  }
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

std::map<std::string, Tensor> read_tensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw IoError(path.string() + " is not a checkpoint");
  const std::uint32_t version = get_u32(in, path);
  if (version != kCheckpointVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t count = get_u32(in, path);
  std::map<std::string, Tensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = get_u32(in, path);
    if (len > 4096) throw IoError("corrupt tensor name in " + path.string());
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw IoError("truncated checkpoint " + path.string());
    const std::uint32_t rank = get_u32(in, path);
    if (rank < 1 || rank > 2) throw IoError("tensor " + name + " has unsupported rank " + std::to_string(rank));
    const std::uint32_t rows = rank == 2 ? get_u32(in, path) : 1;
    const std::uint32_t cols = get_u32(in, path);
    Tensor t(rows, cols);
    if (!in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)))) {
      throw IoError("truncated tensor " + name + " in " + path.string());
    }
    out.emplace(std::move(name), std::move(t));
  }
  return out;
}

NamedTensors ModelBundle::named() {
  NamedTensors out = features.named();
  if (has_jacobian_net) {
    auto j = jacobian_net.named();
    out.insert(out.end(), j.begin(), j.end());
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, ModelBundle& model, const TrainingState* state) {
  std::map<std::string, Tensor> t;
  for (auto& [name, ptr] : model.named()) t.emplace(name, *ptr);
  const auto& ch = model.features.level_channels;
  Tensor lc(1, static_cast<Eigen::Index>(ch.size()));
  for (std::size_t i = 0; i < ch.size(); ++i) lc(0, static_cast<Eigen::Index>(i)) = static_cast<float>(ch[i]);
  t.emplace("meta.level_channels", lc);
  t.emplace("meta.input_channels", scalar_tensor(model.features.input_channels));
  if (model.has_jacobian_net) {
    t.emplace("meta.jpn_hidden", scalar_tensor(model.jacobian_net.hidden));
    t.emplace("meta.jpn_feature_channels", scalar_tensor(model.jacobian_net.feature_channels));
  }
  if (state) {
    t.emplace("meta.epochs_done", scalar_tensor(state->epochs_done));
    // Step counts stay exact in f32 up to 2^24.
    t.emplace("meta.adam_step", scalar_tensor(double(state->adam.step)));
    for (const auto& [name, m] : state->adam.m) t.emplace("adam.m." + name, m);
    for (const auto& [name, v] : state->adam.v) t.emplace("adam.v." + name, v);
  }
  write_tensors(path, t);
}

ModelBundle load_checkpoint(const std::filesystem::path& path, TrainingState* state) {
  const auto t = read_tensors(path);
  ModelBundle m;
  const Tensor& lc = need(t, "meta.level_channels", path);
  for (Eigen::Index i = 0; i < lc.cols(); ++i) m.features.level_channels.push_back(static_cast<int>(lc(0, i)));
  m.features.input_channels = static_cast<int>(need(t, "meta.input_channels", path)(0, 0));
  const int levels = m.features.levels();
  m.features.enc_w.resize(levels);
  m.features.enc_b.resize(levels);
  m.features.dec_w.resize(levels);
  m.features.dec_b.resize(levels);
  if (t.count("meta.jpn_hidden")) {
    m.has_jacobian_net = true;
    m.jacobian_net.hidden = static_cast<int>(t.at("meta.jpn_hidden")(0, 0));
    m.jacobian_net.feature_channels = static_cast<int>(need(t, "meta.jpn_feature_channels", path)(0, 0));
  }
  for (auto& [name, ptr] : m.named()) *ptr = need(t, name, path);
  m.features.validate();
  if (m.has_jacobian_net) m.jacobian_net.validate();
  if (state) {
    *state = TrainingState{};
    if (t.count("meta.epochs_done")) state->epochs_done = static_cast<int>(t.at("meta.epochs_done")(0, 0));
    if (t.count("meta.adam_step")) state->adam.step = static_cast<std::int64_t>(t.at("meta.adam_step")(0, 0));
    for (const auto& [name, v] : t) {
      if (name.rfind("adam.m.", 0) == 0) state->adam.m.emplace(name.substr(7), v);
      if (name.rfind("adam.v.", 0) == 0) state->adam.v.emplace(name.substr(7), v);
    }
  }
  return m;
}

}  // namespace regalign
