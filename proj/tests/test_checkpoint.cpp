#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "regalign/checkpoint.hpp"
#include "regalign/errors.hpp"
#include "regalign/learn.hpp"

using namespace regalign;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) { return fs::temp_directory_path() / ("regalign_ckpt_" + name); }

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
  ModelBundle m = make_model({8, 4, 4}, 1, true, 16, 3);
  TrainingState st;
  st.epochs_done = 7;
  st.adam.step = 123;
  for (auto& [name, t] : m.named()) {
    st.adam.m[name] = Tensor::Constant(t->rows(), t->cols(), 0.5f);
    st.adam.v[name] = Tensor::Constant(t->rows(), t->cols(), 0.25f);
  }
  const fs::path p = scratch("roundtrip.ckpt");
  save_checkpoint(p, m, &st);
  TrainingState st2;
  ModelBundle m2 = load_checkpoint(p, &st2);
  EXPECT_TRUE(m2.has_jacobian_net);
  EXPECT_EQ(m2.features.levels(), 3);
  EXPECT_EQ(st2.epochs_done, 7);
  EXPECT_EQ(st2.adam.step, 123);
  auto a = m.named(), b = m2.named();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].first, b[i].first);
    ASSERT_EQ(a[i].second->rows(), b[i].second->rows());
    ASSERT_EQ(a[i].second->cols(), b[i].second->cols());
    EXPECT_EQ(std::memcmp(a[i].second->data(), b[i].second->data(), sizeof(float) * a[i].second->size()), 0);
    EXPECT_TRUE(st2.adam.m.at(a[i].first).isApprox(st.adam.m.at(a[i].first)));
  }
  fs::remove(p);
}

TEST(Checkpoint, FeatureOnlyModelHasNoJacobianNet) {
  ModelBundle m = make_model({8, 4}, 1, false, 16, 3);
  const fs::path p = scratch("features.ckpt");
  save_checkpoint(p, m);
  const ModelBundle m2 = load_checkpoint(p);
  EXPECT_FALSE(m2.has_jacobian_net);
  EXPECT_EQ(m2.features.levels(), 2);
  fs::remove(p);
}

TEST(Checkpoint, BadMagicIsRejected) {
  const fs::path p = scratch("magic.ckpt");
  std::ofstream(p, std::ios::binary) << "NOPE0000";
  EXPECT_THROW(load_checkpoint(p), IoError);
  fs::remove(p);
}

TEST(Checkpoint, UnknownVersionIsRejected) {
  const fs::path p = scratch("version.ckpt");
  {
    std::ofstream f(p, std::ios::binary);
    const std::uint32_t version = kCheckpointVersion + 1, count = 0;
    f.write("RGNT", 4);
    f.write(reinterpret_cast<const char*>(&version), 4);
    f.write(reinterpret_cast<const char*>(&count), 4);
  }
  EXPECT_THROW(load_checkpoint(p), IoError);
  fs::remove(p);
}

TEST(Checkpoint, TruncatedFileIsRejected) {
  ModelBundle m = make_model({8, 4}, 1, false, 16, 3);
  const fs::path p = scratch("truncated.ckpt");
  save_checkpoint(p, m);
  fs::resize_file(p, fs::file_size(p) / 2);
  EXPECT_THROW(load_checkpoint(p), IoError);
  fs::remove(p);
}

TEST(Checkpoint, MissingFileIsRejected) { EXPECT_THROW(load_checkpoint(scratch("absent.ckpt")), IoError); }
