#include <gtest/gtest.h>

#include "unisurf/errors.hpp"
#include "unisurf/synthgen.hpp"

using namespace unisurf;
using namespace unisurf::synth;

namespace {

torch::Tensor bits(std::vector<float> v, int h, int w) { return torch::tensor(v).view({h, w}); }

}  // namespace

TEST(MaskAlgebra, Examples) {
  const auto mp = bits({1, 1, 0, 0}, 2, 2);
  const auto gt = bits({0, 1, 0, 0}, 2, 2);
  const auto s = synth_mask(mp, gt);
  EXPECT_TRUE(torch::equal(s, bits({1, 0, 0, 0}, 2, 2)));
  const auto a = assemble(s, gt);
  EXPECT_TRUE(torch::equal(a.mask, bits({1, 1, 0, 0}, 2, 2)));
  EXPECT_TRUE(a.anomalous);
  EXPECT_FALSE(assemble(torch::zeros({2, 2}), torch::zeros({2, 2})).anomalous);
}

TEST(MaskAlgebra, RandomInvariants) {
  RandomStream rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const auto mp = threshold_mask(perlin_field(16, 24, rng), 0.2);
    const auto gt = threshold_mask(perlin_field(16, 24, rng), 0.4);
    const auto s = synth_mask(mp, gt);
    const auto m = assemble(s, gt).mask;
    EXPECT_EQ((s * gt).sum().item<float>(), 0.0f);
    EXPECT_TRUE(torch::equal(m, torch::maximum(mp, gt)));
    EXPECT_TRUE(torch::equal(torch::maximum(s, gt), m));
  }
}

TEST(MaskAlgebra, RejectsMismatchedGrids) {
  EXPECT_THROW(synth_mask(torch::zeros({4, 4}), torch::zeros({4, 5})), InputError);
}

TEST(Perlin, RangeAndDeterminism) {
  RandomStream a(3), b(3);
  int ry = 0, rx = 0;
  const auto fa = perlin_field(32, 48, a, ry, rx);
  const auto fb = perlin_field(32, 48, b);
  EXPECT_TRUE(torch::equal(fa, fb));
  EXPECT_LE(fa.abs().max().item<float>(), 1.0f);
  EXPECT_GE(ry, 2);
  EXPECT_LE(ry, 16);
  EXPECT_LE(rx, 24);
  EXPECT_THROW(perlin_field(4, 32, a), InputError);
}

TEST(Perlin, HigherThresholdCoversLess) {
  RandomStream rng(5);
  double low = 0, high = 0;
  for (int i = 0; i < 100; ++i) {
    const auto f = perlin_field(32, 32, rng);
    low += threshold_mask(f, 0.2).mean().item<double>();
    high += threshold_mask(f, 0.6).mean().item<double>();
  }
  EXPECT_GT(low, 1.5 * high);
}

TEST(Inject, NoiseOnlyInsideMask) {
  RandomStream rng(1);
  const auto f = torch::randn({4, 6, 6});
  const auto a = torch::randn({4, 6, 6});
  auto m = torch::zeros({6, 6});
  m.index_put_({torch::indexing::Slice(0, 3)}, 1.0);
  const auto p = inject(f, a, m, 0.5, rng);
  const auto d = (p.features - f).abs().sum(0);
  EXPECT_EQ(d.index({torch::indexing::Slice(3)}).sum().item<float>(), 0.0f);
  EXPECT_GT(d.index({torch::indexing::Slice(0, 3)}).min().item<float>(), 0.0f);
  EXPECT_FALSE(torch::equal(p.features - f, p.adapted - a));
}

TEST(Inject, ZeroSigmaIsIdentity) {
  RandomStream rng(1);
  const auto f = torch::randn({4, 6, 6});
  const auto p = inject(f, f, torch::ones({6, 6}), 0.0, rng);
  EXPECT_TRUE(torch::equal(p.features, f));
  EXPECT_TRUE(torch::equal(p.adapted, f));
}

TEST(Inject, NoiseScale) {
  RandomStream rng(2);
  const auto f = torch::zeros({64, 32, 32});
  const auto p = inject(f, f, torch::ones({32, 32}), 0.015, rng);
  EXPECT_NEAR(p.features.std().item<double>(), 0.015, 0.0005);
}

TEST(DuplicateAndPerturb, Invariants) {
  RandomStream rng(4);
  const int b = 3;
  const auto f = torch::randn({b, 5, 16, 16});
  const auto a = torch::randn({b, 5, 16, 16});
  auto gt = torch::zeros({b, 1, 16, 16});
  gt.index_put_({1, 0, torch::indexing::Slice(2, 6), torch::indexing::Slice(2, 6)}, 1.0);
  const std::vector<bool> anomalous{false, true, true};  // item 2 weakly labelled
  Options opt;
  opt.sigma = 0.1;
  const auto out = duplicate_and_perturb(f, a, gt, anomalous, opt, rng);
  ASSERT_EQ(out.features.sizes(), torch::IntArrayRef({2 * b, 5, 16, 16}));
  ASSERT_EQ(out.mask.sizes(), torch::IntArrayRef({2 * b, 1, 16, 16}));
  ASSERT_EQ(out.target.size(0), 2 * b);
  EXPECT_EQ(out.source, (std::vector<int>{0, 1, 2, 0, 1, 2}));
  for (int k = 0; k < 2 * b; ++k) {
    const auto src = out.source[k];
    EXPECT_EQ((out.synth[k] * out.gt[k]).sum().item<float>(), 0.0f);
    EXPECT_TRUE(torch::equal(out.mask[k], torch::maximum(out.synth[k], out.gt[k])));
    const bool nonempty = out.mask[k].max().item<float>() > 0.5f;
    EXPECT_EQ(out.target[k].item<float>(), (nonempty || anomalous[src]) ? 1.0f : 0.0f);
    const auto changed = ((out.features[k] - f[src]).abs().sum(0, true) > 0).to(torch::kFloat32);
    EXPECT_TRUE(torch::equal(changed, out.synth[k]));
  }
  EXPECT_TRUE(torch::equal(out.gt, torch::cat({gt, gt})));
}

TEST(DuplicateAndPerturb, Deterministic) {
  const auto f = torch::randn({2, 3, 16, 16});
  const auto gt = torch::zeros({2, 1, 16, 16});
  RandomStream r1(9), r2(9);
  const auto x = duplicate_and_perturb(f, f, gt, {false, false}, {}, r1);
  const auto y = duplicate_and_perturb(f, f, gt, {false, false}, {}, r2);
  EXPECT_TRUE(torch::equal(x.features, y.features));
  EXPECT_TRUE(torch::equal(x.mask, y.mask));
}

TEST(DuplicateAndPerturb, StrategiesWithoutSynthesis) {
  RandomStream rng(1);
  const auto f = torch::randn({2, 3, 8, 8});
  const auto gt = torch::zeros({2, 1, 8, 8});
  Options none;
  none.strategy = AnomalyStrategy::None;
  const auto n = duplicate_and_perturb(f, f, gt, {false, false}, none, rng);
  EXPECT_TRUE(torch::equal(n.features, torch::cat({f, f})));
  EXPECT_EQ(n.target.sum().item<float>(), 0.0f);

  Options simplenet;
  simplenet.strategy = AnomalyStrategy::SimpleNet;
  const auto s = duplicate_and_perturb(f, f, gt, {false, false}, simplenet, rng);
  EXPECT_TRUE(torch::equal(s.target, torch::tensor({0.0f, 0.0f, 1.0f, 1.0f})));
}

TEST(DownsampleMask, MaxPoolKeepsSmallDefects) {
  auto m = torch::zeros({1, 1, 16, 16});
  m[0][0][5][9] = 1;
  const auto d = downsample_mask(m, 4, 4);
  EXPECT_EQ(d.sizes(), torch::IntArrayRef({1, 1, 4, 4}));
  EXPECT_EQ(d.sum().item<float>(), 1.0f);
  EXPECT_EQ(d[0][0][1][2].item<float>(), 1.0f);
}
