#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "unisurf/errors.hpp"
#include "unisurf/trainer.hpp"

using namespace unisurf;
using namespace unisurf::train;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_config(Regime regime = Regime::Full) {
  RunConfig c;
  c.regime = regime;
  c.backbone.name = "tiny_resnet";
  c.backbone.random_init = true;
  c.backbone.init_seed = 7;
  c.data.image_height = 64;
  c.data.image_width = 64;
  c.heads.cls_channels = 16;
  c.train.epochs = 2;
  c.train.batch_size = 2;
  c.train.lr_decay_epochs = {1};
  c.synth.sigma = 0.15;
  return c;
}

TrainData tiny_data(int n, int anomalous, bool with_masks) {
  torch::manual_seed(42);
  TrainData d;
  for (int i = 0; i < n; ++i) {
    d.images.push_back(torch::randn({3, 64, 64}));
    auto m = torch::zeros({1, 64, 64});
    const bool a = i < anomalous;
    if (a && with_masks) m.index_put_({0, torch::indexing::Slice(8, 24), torch::indexing::Slice(16, 40)}, 1.0);
    d.masks.push_back(m);
    d.anomalous.push_back(a);
    d.has_mask.push_back(a && with_masks);
    d.ids.push_back("item" + std::to_string(i));
  }
  return d;
}

Batch batch_of(const TrainData& d, std::vector<std::size_t> items) {
  Batch b;
  std::vector<torch::Tensor> im, ma;
  for (auto i : items) {
    im.push_back(d.images[i]);
    ma.push_back(d.masks[i]);
    b.anomalous.push_back(d.anomalous[i]);
    b.has_mask.push_back(d.has_mask[i]);
    b.ids.push_back(d.ids[i]);
  }
  b.images = torch::stack(im);
  b.masks = torch::stack(ma);
  return b;
}

}  // namespace

TEST(Schedule, StepDecay) {
  TrainConfig t;
  EXPECT_DOUBLE_EQ(learning_rates_at(t, 0).heads, 2e-4);
  EXPECT_DOUBLE_EQ(learning_rates_at(t, 0).adaptor, 1e-4);
  EXPECT_NEAR(learning_rates_at(t, 239).heads, 2e-4, 1e-15);
  EXPECT_NEAR(learning_rates_at(t, 250).heads, 8e-5, 1e-15);
  EXPECT_NEAR(learning_rates_at(t, 280).heads, 3.2e-5, 1e-15);
  EXPECT_NEAR(learning_rates_at(t, 280).adaptor, 1.6e-5, 1e-15);
}

TEST(Optimizer, GroupsExcludeTheBackbone) {
  Model m(tiny_config());
  auto opt = build_optimizer(m, m.config().train);
  ASSERT_EQ(opt->param_groups().size(), 2u);
  std::set<const void*> in_groups;
  for (auto& g : opt->param_groups()) {
    for (auto& p : g.params()) in_groups.insert(p.unsafeGetTensorImpl());
  }
  for (const auto& p : m.backbone_parameters()) EXPECT_FALSE(in_groups.contains(p.unsafeGetTensorImpl()));
  for (const auto& p : m.adaptor_parameters()) EXPECT_TRUE(in_groups.contains(p.unsafeGetTensorImpl()));
  EXPECT_EQ(opt->param_groups()[1].params().size(), m.adaptor_parameters().size());
  set_learning_rates(*opt, {1e-3, 5e-4});
  EXPECT_DOUBLE_EQ(current_learning_rates(*opt).heads, 1e-3);
  EXPECT_DOUBLE_EQ(current_learning_rates(*opt).adaptor, 5e-4);
}

TEST(Balance, OversamplesMinority) {
  std::vector<bool> labels(110, false);
  for (int i = 100; i < 110; ++i) labels[i] = true;
  const auto plan = balance_epoch(labels, 3);
  ASSERT_EQ(plan.size(), 200u);
  std::size_t anomalous = 0;
  std::set<std::size_t> distinct;
  for (auto i : plan) {
    anomalous += labels[i];
    distinct.insert(i);
  }
  EXPECT_EQ(anomalous, 100u);
  EXPECT_EQ(distinct.size(), 110u);
  EXPECT_EQ(balance_epoch(labels, 3), plan);
  EXPECT_EQ(balance_epoch(std::vector<bool>(5, false), 1).size(), 5u);
  EXPECT_THROW(balance_epoch({}, 0), DataError);
}

TEST(Augment, JointFlipsAndInvolution) {
  const auto img = torch::randn({3, 8, 10});
  auto mask = torch::zeros({1, 8, 10});
  mask[0][1][2] = 1;
  int flipped = 0;
  for (std::uint64_t s = 0; s < 40; ++s) {
    RandomStream rng(s);
    const auto a = augment(img, mask, Regime::Full, rng);
    flipped += a.flipped_h || a.flipped_v;
    std::vector<std::int64_t> dims;
    if (a.flipped_v) dims.push_back(-2);
    if (a.flipped_h) dims.push_back(-1);
    const auto back_img = dims.empty() ? a.image : torch::flip(a.image, dims);
    const auto back_mask = dims.empty() ? a.mask : torch::flip(a.mask, dims);
    EXPECT_TRUE(torch::equal(back_img, img));
    EXPECT_TRUE(torch::equal(back_mask, mask));
    const auto idx = a.mask.nonzero();
    ASSERT_EQ(idx.size(0), 1);
    EXPECT_EQ(idx[0][1].item<int>(), a.flipped_v ? 6 : 1);
    EXPECT_EQ(idx[0][2].item<int>(), a.flipped_h ? 7 : 2);
  }
  EXPECT_GT(flipped, 20);
  RandomStream rng(0);
  const auto u = augment(img, mask, Regime::Unsupervised, rng);
  EXPECT_TRUE(torch::equal(u.image, img));
  EXPECT_EQ(rng.draws(), 0u);
}

TEST(Gate, ZeroOnlyForWeakAnomalies) {
  EXPECT_TRUE(torch::equal(gate_for({false, true, true}, {false, true, false}), torch::tensor({1.0f, 1.0f, 0.0f})));
}

TEST(TrainStep, ClipsSupervisedGradients) {
  auto cfg = tiny_config(Regime::Full);
  cfg.train.lr_heads = 0.5;
  Model m(cfg);
  auto opt = build_optimizer(m, cfg.train);
  const auto d = tiny_data(4, 2, true);
  RandomStream rng(1);
  const auto r = train_step(m, *opt, batch_of(d, {0, 1, 2, 3}), cfg, rng);
  EXPECT_LE(r.grad_norm_after, cfg.train.grad_clip_norm + 1e-6);
  if (r.grad_norm > cfg.train.grad_clip_norm) EXPECT_LT(r.grad_norm_after, r.grad_norm);
}

TEST(TrainStep, UnsupervisedIsNotClipped) {
  auto cfg = tiny_config(Regime::Unsupervised);
  Model m(cfg);
  auto opt = build_optimizer(m, cfg.train);
  const auto d = tiny_data(2, 0, false);
  RandomStream rng(1);
  const auto r = train_step(m, *opt, batch_of(d, {0, 1}), cfg, rng);
  EXPECT_EQ(r.grad_norm_after, r.grad_norm);
}

TEST(TrainStep, WeakOnlyBatchHasNoSegmentationLoss) {
  auto cfg = tiny_config(Regime::Weak);
  Model m(cfg);
  auto opt = build_optimizer(m, cfg.train);
  const auto d = tiny_data(2, 2, false);
  RandomStream rng(2);
  const auto r = train_step(m, *opt, batch_of(d, {0, 1}), cfg, rng);
  EXPECT_EQ(r.seg, 0.0);
  EXPECT_EQ(r.total, r.cls);
}

TEST(TrainStep, DeterministicForFixedSeeds) {
  const auto cfg = tiny_config(Regime::Full);
  const auto d = tiny_data(4, 2, true);
  auto run = [&] {
    Model m(cfg);
    auto opt = build_optimizer(m, cfg.train);
    std::vector<double> losses;
    for (int step = 0; step < 5; ++step) {
      RandomStream rng(100 + step);
      losses.push_back(train_step(m, *opt, batch_of(d, {0, 1, 2, 3}), cfg, rng).total);
    }
    return std::pair{losses, m.named_state()};
  };
  const auto [l1, s1] = run();
  const auto [l2, s2] = run();
  EXPECT_EQ(l1, l2);
  for (std::size_t i = 0; i < s1.size(); ++i) EXPECT_TRUE(torch::equal(s1[i].second, s2[i].second)) << s1[i].first;
}

TEST(Fit, SmokeRunWritesLogAndCheckpoint) {
  const auto dir = fs::temp_directory_path() / "unisurf_fit_smoke";
  fs::remove_all(dir);
  const auto cfg = tiny_config(Regime::Full);
  const auto d = tiny_data(4, 2, true);
  const auto r = fit(d, cfg, {dir});
  ASSERT_EQ(r.log.size(), 2u);
  EXPECT_DOUBLE_EQ(r.log[0].lr.heads, 2e-4);
  EXPECT_NEAR(r.log[1].lr.heads, 8e-5, 1e-15);

  std::ifstream log(dir / "train_log.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) {
    const auto j = nlohmann::json::parse(line);
    for (const char* k : {"epoch", "l_seg", "l_cls", "l_total", "lr"}) EXPECT_TRUE(j.contains(k)) << k;
    EXPECT_EQ(j["epoch"], ++lines);
  }
  EXPECT_EQ(lines, 2);

  const auto loaded = Model::load(dir / "model.ckpt");
  EXPECT_EQ(loaded->extractor().checksum(), Model(cfg).extractor().checksum());
  const auto x = torch::stack({d.images[0]});
  r.model->eval();
  loaded->eval();
  EXPECT_TRUE(torch::equal(r.model->predict(x).score, loaded->predict(x).score));
}

TEST(Fit, BackboneIsUnchanged) {
  const auto cfg = tiny_config(Regime::Weak);
  const auto before = Model(cfg).extractor().checksum();
  const auto r = fit(tiny_data(4, 2, false), cfg);
  EXPECT_EQ(r.model->extractor().checksum(), before);
}
