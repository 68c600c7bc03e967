#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "oracles.hpp"
#include "unisurf/losses.hpp"

using namespace unisurf;
using namespace unisurf::loss;

namespace {

torch::Tensor away_from_kinks(torch::Tensor x, double th) {
  // Keep samples at least 0.05 from +-th, where the hinge is not differentiable.
  auto near = ((x - th).abs() < 0.05) | ((x + th).abs() < 0.05);
  return torch::where(near, x + 0.2, x);
}

}  // namespace

TEST(TruncatedL1, Examples) {
  const auto one = torch::ones({1});
  const auto zero = torch::zeros({1});
  EXPECT_DOUBLE_EQ(truncated_l1(torch::tensor({0.5}), one).item<double>(), 0.0);
  EXPECT_NEAR(truncated_l1(torch::tensor({-0.2}), one).item<double>(), 0.7, 1e-7);
  EXPECT_NEAR(truncated_l1(torch::tensor({0.3}), zero).item<double>(), 0.8, 1e-7);
}

TEST(TruncatedL1, ZeroBeyondTheMargin) {
  auto mask = (torch::rand({2, 1, 6, 6}) > 0.5).to(torch::kFloat32);
  auto logits = torch::where(mask > 0, 0.5 + torch::rand_like(mask), -0.5 - torch::rand_like(mask));
  EXPECT_EQ(truncated_l1(logits, mask).item<double>(), 0.0);
}

TEST(TruncatedL1, WeightsKeepSignAndReduceAtUnitWeight) {
  torch::manual_seed(0);
  const auto logits = torch::randn({1, 1, 7, 7});
  auto gt = torch::zeros({1, 1, 7, 7});
  gt.index_put_({0, 0, torch::indexing::Slice(1, 5), torch::indexing::Slice(2, 6)}, 1.0);
  const auto w = distance_weights(gt, 3.0);
  const auto plain = truncated_l1_terms(logits, gt);
  EXPECT_TRUE(torch::equal((plain * w).sign(), plain.sign()));
  EXPECT_DOUBLE_EQ(truncated_l1(logits, gt, 0.5, distance_weights(gt, 1.0)).item<double>(),
                   truncated_l1(logits, gt).item<double>());
}

TEST(Focal, Examples) {
  const double v = focal(torch::tensor({0.5}, torch::kFloat64), torch::tensor({1.0}, torch::kFloat64)).item<double>();
  EXPECT_NEAR(v, 0.25 * 0.25 * std::numbers::ln2, 1e-12);
  EXPECT_NEAR(v, 0.04332, 1e-5);
  EXPECT_LT(focal(torch::tensor({1.0 - 1e-7}, torch::kFloat64), torch::tensor({1.0}, torch::kFloat64)).item<double>(),
            1e-12);
}

TEST(Focal, GammaZeroIsCrossEntropy) {
  torch::manual_seed(1);
  const auto p = torch::rand({200}, torch::kFloat64) * 0.98 + 0.01;
  const auto t = (torch::rand({200}, torch::kFloat64) > 0.5).to(torch::kFloat64);
  const auto bce = -(t * torch::log(p) + (1 - t) * torch::log(1 - p));
  const auto got = focal_terms(p, t, {-1.0, 0.0});
  EXPECT_LT((got - bce).abs().max().item<double>(), 1e-9);
}

TEST(Focal, ClampsOutOfRangeProbabilities) {
  const auto v = focal_terms(torch::tensor({0.0, 1.0}, torch::kFloat64), torch::tensor({1.0, 0.0}, torch::kFloat64));
  EXPECT_TRUE(torch::isfinite(v).all().item<bool>());
}

TEST(Losses, GradientsMatchFiniteDifferences) {
  torch::manual_seed(2);
  LossConfig cfg;
  for (int trial = 0; trial < 20; ++trial) {
    const auto mask = (torch::rand({2, 1, 4, 5}, torch::kFloat64) > 0.6).to(torch::kFloat64);
    const auto logits = away_from_kinks(torch::randn({2, 1, 4, 5}, torch::kFloat64) * 1.5, cfg.th);
    EXPECT_LT(oracle::fd_relative_error([&](const torch::Tensor& x) { return truncated_l1(x, mask); }, logits), 1e-4);

    const auto prob = torch::rand({2, 1, 4, 5}, torch::kFloat64) * 0.9 + 0.05;
    EXPECT_LT(oracle::fd_relative_error([&](const torch::Tensor& x) { return focal(x, mask); }, prob), 1e-4);

    const auto score = torch::randn({2}, torch::kFloat64);
    const auto target = torch::tensor({1.0, 0.0}, torch::kFloat64);
    const auto gate = torch::tensor({1.0, double(trial % 2)}, torch::kFloat64);
    const auto weights = distance_weights(mask, 3.0).to(torch::kFloat64);
    EXPECT_LT(oracle::fd_relative_error(
                  [&](const torch::Tensor& x) {
                    return total_loss(x, score, mask, target, gate, weights, cfg).total;
                  },
                  logits),
              1e-4);
    EXPECT_LT(oracle::fd_relative_error(
                  [&](const torch::Tensor& s) {
                    return total_loss(logits, s, mask, target, gate, weights, cfg).total;
                  },
                  score),
              1e-4);
  }
}

TEST(DistanceWeights, EmptyMaskIsAllOnes) {
  EXPECT_TRUE(torch::equal(distance_weights(torch::zeros({5, 6})), torch::ones({5, 6})));
}

TEST(DistanceWeights, SingleCellGetsMaximum) {
  auto m = torch::zeros({5, 5});
  m[2][3] = 1;
  const auto w = distance_weights(m, 3.0);
  EXPECT_FLOAT_EQ(w[2][3].item<float>(), 3.0f);
  EXPECT_FLOAT_EQ(w.sum().item<float>(), 24.0f + 3.0f);
}

TEST(DistanceWeights, StripMatchesBruteForceEdt) {
  // 1x7 grid, anomalous strip over columns 1..5.
  std::vector<std::uint8_t> cells{0, 1, 1, 1, 1, 1, 0};
  auto m = torch::tensor(std::vector<float>(cells.begin(), cells.end())).view({1, 7});
  const auto w = distance_weights(m, 3.0);
  const auto d = oracle::brute_edt(cells, 1, 7);
  const double peak = *std::max_element(d.begin(), d.end());
  for (int x = 0; x < 7; ++x) {
    const double expected = cells[x] ? 1.0 + 2.0 * d[x] / peak : 1.0;
    EXPECT_NEAR(w[0][x].item<double>(), expected, 1e-6);
  }
  EXPECT_GT(w[0][3].item<float>(), w[0][1].item<float>());
  EXPECT_GT(w[0][3].item<float>(), w[0][5].item<float>());
}

TEST(DistanceWeights, NormalisedPerComponent) {
  auto m = torch::zeros({9, 12});
  m.index_put_({torch::indexing::Slice(1, 8), torch::indexing::Slice(1, 8)}, 1.0);  // big blob
  m[4][10] = 1;                                                                   // isolated cell
  const auto w = distance_weights(m, 3.0);
  EXPECT_FLOAT_EQ(w[4][10].item<float>(), 3.0f);
  EXPECT_FLOAT_EQ(w[4][4].item<float>(), 3.0f);
  EXPECT_LT(w[1][1].item<float>(), 3.0f);
  EXPECT_GE(w.min().item<float>(), 1.0f);
}

TEST(DistanceWeights, AllAnomalousGridUsesMaximum) {
  EXPECT_TRUE(torch::allclose(distance_weights(torch::ones({3, 3}), 2.5), torch::full({3, 3}, 2.5)));
}

TEST(TotalLoss, WeakAnomalousImageContributesOnlyClassification) {
  torch::manual_seed(3);
  LossConfig cfg;
  auto seg = torch::randn({1, 1, 6, 6}, torch::kFloat64).set_requires_grad(true);
  auto score = torch::randn({1}, torch::kFloat64).set_requires_grad(true);
  const auto mask = torch::zeros({1, 1, 6, 6}, torch::kFloat64);
  const auto t = total_loss(seg, score, mask, torch::ones({1}, torch::kFloat64), torch::zeros({1}, torch::kFloat64), {}, cfg);
  EXPECT_EQ(t.total.item<double>(), t.cls.item<double>());
  t.total.backward();
  EXPECT_TRUE(!seg.grad().defined() || torch::equal(seg.grad(), torch::zeros_like(seg)));
}

TEST(TotalLoss, NormalImageUsesBothTerms) {
  LossConfig cfg;
  const auto seg = torch::full({1, 1, 4, 4}, 0.3);
  const auto t = total_loss(seg, torch::tensor({0.2}), torch::zeros({1, 1, 4, 4}), torch::zeros({1}), torch::ones({1}),
                            {}, cfg);
  EXPECT_GT(t.seg.item<double>(), 0.0);
  EXPECT_GT(t.cls.item<double>(), 0.0);
  EXPECT_NEAR(t.total.item<double>(), t.seg.item<double>() + t.cls.item<double>(), 1e-7);
}

TEST(TotalLoss, PerfectPredictionIsNearZero) {
  LossConfig cfg;
  auto mask = torch::zeros({1, 1, 8, 8});
  mask.index_put_({0, 0, torch::indexing::Slice(2, 5), torch::indexing::Slice(2, 6)}, 1.0);
  const auto seg = torch::where(mask > 0, torch::full_like(mask, 12.0), torch::full_like(mask, -12.0));
  const auto t = total_loss(seg, torch::tensor({12.0f}), mask, torch::ones({1}), torch::ones({1}),
                            distance_weights(mask, cfg.w_max), cfg);
  EXPECT_LT(t.total.item<double>(), 1e-3);
}
