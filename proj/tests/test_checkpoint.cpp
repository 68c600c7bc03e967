#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "unisurf/checkpoint.hpp"
#include "unisurf/errors.hpp"
#include "unisurf/model.hpp"

using namespace unisurf;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_config() {
  RunConfig c;
  c.backbone.name = "tiny_resnet";
  c.backbone.random_init = true;
  c.backbone.init_seed = 7;
  c.data.image_height = 64;
  c.data.image_width = 64;
  c.heads.cls_channels = 16;
  return c;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "unisurf_ckpt_test";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(Checkpoint, RawRoundTrip) {
  Checkpoint c;
  c.meta = {{"k", 3}};
  c.tensors = {{"a", torch::randn({2, 3})},
               {"b", torch::arange(5, torch::kInt64)},
               {"c", torch::randn({4}, torch::kFloat64)}};
  const auto path = scratch("raw.ckpt");
  write_checkpoint(path, c);
  const auto back = read_checkpoint(path);
  EXPECT_EQ(back.meta.at("k"), 3);
  ASSERT_EQ(back.tensors.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back.tensors[i].first, c.tensors[i].first);
    EXPECT_TRUE(torch::equal(back.tensors[i].second, c.tensors[i].second));
  }
}

TEST(Checkpoint, ModelRoundTripPredictsIdentically) {
  const auto cfg = tiny_config();
  Model m(cfg);
  {
    torch::NoGradGuard g;
    for (auto& p : m.head_parameters()) p.add_(torch::randn_like(p) * 0.1);
  }
  const auto path = scratch("model.ckpt");
  m.save(path);
  const auto back = Model::load(path);
  const auto x = torch::randn({2, 3, 64, 64});
  m.eval();
  back->eval();
  const auto p1 = m.predict(x);
  const auto p2 = back->predict(x);
  EXPECT_TRUE(torch::equal(p1.anomaly_map, p2.anomaly_map));
  EXPECT_TRUE(torch::equal(p1.score, p2.score));
  const auto s1 = m.named_state();
  const auto s2 = back->named_state();
  ASSERT_EQ(s1.size(), s2.size());
  for (std::size_t i = 0; i < s1.size(); ++i) {
    EXPECT_EQ(s1[i].first, s2[i].first);
    EXPECT_TRUE(torch::equal(s1[i].second, s2[i].second));
  }
}

TEST(Checkpoint, RefusesArchitectureMismatch) {
  const auto cfg = tiny_config();
  const auto path = scratch("arch.ckpt");
  Model(cfg).save(path);
  auto other = cfg;
  other.heads.cls_channels = 8;
  EXPECT_THROW(Model::load(path, &other), ConfigError);
  auto same = cfg;
  same.train.epochs = 5;
  same.train.lr_decay_epochs = {2};
  EXPECT_NO_THROW(Model::load(path, &same));
}

TEST(Checkpoint, CorruptFilesAreDataErrors) {
  const auto path = scratch("bad.ckpt");
  {
    std::ofstream(path) << "not a checkpoint";
  }
  EXPECT_THROW(read_checkpoint(path), DataError);
  EXPECT_THROW(read_checkpoint(scratch("missing.ckpt")), DataError);

  const auto good = scratch("trunc.ckpt");
  Model(tiny_config()).save(good);
  fs::resize_file(good, fs::file_size(good) - 16);
  EXPECT_THROW(Model::load(good), DataError);
}
