#pragma once

#include <torch/torch.h>

#include <vector>

#include "unisurf/config.hpp"
#include "unisurf/random.hpp"

namespace unisurf::synth {

/// Smooth gradient noise in [-1, 1] of shape [height, width]. Lattice
/// resolution per axis is 2^k cells with k uniform in {1..6}, capped so a
/// cell spans at least two grid points.
torch::Tensor perlin_field(int height, int width, RandomStream& rng);

/// Lattice resolutions are drawn from rng and returned for inspection.
torch::Tensor perlin_field(int height, int width, RandomStream& rng, int& res_y, int& res_x);

/// 1 where field > tau, else 0 (float tensor, same shape).
torch::Tensor threshold_mask(const torch::Tensor& field, double tau);

/// M_p AND NOT M_gt.
torch::Tensor synth_mask(const torch::Tensor& perlin_mask, const torch::Tensor& gt_mask);

struct Perturbed {
  torch::Tensor features;
  torch::Tensor adapted;
};

/// Add N(0, sigma^2) noise restricted to `mask` (broadcast over channels).
/// Independent draws for the two feature maps.
Perturbed inject(const torch::Tensor& features, const torch::Tensor& adapted, const torch::Tensor& mask, double sigma,
                 RandomStream& rng);

struct Assembled {
  torch::Tensor mask;  // M_synth OR M_gt
  bool anomalous;      // M non-empty
};

Assembled assemble(const torch::Tensor& synth, const torch::Tensor& gt);

struct Options {
  double sigma = 0.015;
  double threshold = 0.2;
  AnomalyStrategy strategy = AnomalyStrategy::Masked;
  bool overlap_allowed = false;
  double clean_copy_probability = 0.5;
};

Options options_from(const RunConfig& config);

/// Doubled training batch. Rows [0, B) are the originals, [B, 2B) the
/// duplicates of the same items.
struct PerturbedBatch {
  torch::Tensor features;  // PF  [2B,C,h,w]
  torch::Tensor adapted;   // PA  [2B,C,h,w]
  torch::Tensor mask;      // M   [2B,1,h,w]
  torch::Tensor synth;     // M_synth [2B,1,h,w]
  torch::Tensor gt;        // M_gt [2B,1,h,w]
  torch::Tensor target;    // y   [2B]
  std::vector<int> source;  // originating item per row
};

/// `anomalous[i]` marks items labelled anomalous (weakly or fully); their
/// target is 1 even when no mask cell is known.
PerturbedBatch duplicate_and_perturb(const torch::Tensor& features, const torch::Tensor& adapted,
                                     const torch::Tensor& gt_masks, const std::vector<bool>& anomalous,
                                     const Options& options, RandomStream& rng);

/// Image-resolution mask [B,1,H,W] to feature resolution by max pooling.
torch::Tensor downsample_mask(const torch::Tensor& mask, int height, int width);

}  // namespace unisurf::synth
