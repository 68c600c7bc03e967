#pragma once

#include <torch/torch.h>

#include <cstdint>

#include "unisurf/config.hpp"

namespace unisurf {

/// Per-location discriminator: 1x1 conv (C->C), leaky ReLU, 1x1 conv (C->1).
class SegHeadImpl : public torch::nn::Module {
 public:
  SegHeadImpl(int channels, double leaky_slope);

  /// [B,C,h,w] -> logits [B,1,h,w].
  torch::Tensor forward(const torch::Tensor& adapted);

  torch::nn::Conv2d& hidden() { return hidden_; }
  torch::nn::Conv2d& output() { return output_; }
  double leaky_slope() const { return slope_; }

 private:
  torch::nn::Conv2d hidden_{nullptr};
  torch::nn::Conv2d output_{nullptr};
  double slope_;
};
TORCH_MODULE(SegHead);

/// Image-level head over the features concatenated with the anomaly map.
class ClsHeadImpl : public torch::nn::Module {
 public:
  ClsHeadImpl(int feature_channels, int block_channels, ClsHeadVariant variant, double leaky_slope);

  /// Score logits [B]. With `stop_map_gradient` the map is detached, so no
  /// gradient reaches the segmentation branch through the score.
  torch::Tensor forward(const torch::Tensor& features, const torch::Tensor& map_logits, bool stop_map_gradient);

  /// Length of the vector fed to the final linear layer (0 without a head).
  int pooled_length() const;
  ClsHeadVariant variant() const { return variant_; }
  torch::nn::Linear& fc() { return fc_; }

 private:
  ClsHeadVariant variant_;
  int block_channels_;
  double slope_;
  std::vector<torch::nn::Conv2d> convs_;
  std::vector<torch::nn::BatchNorm2d> norms_;
  torch::nn::Linear fc_{nullptr};
};
TORCH_MODULE(ClsHead);

/// Xavier-normal weights and zero biases from a fixed seed.
void init_head_parameters(torch::nn::Module& module, std::uint64_t seed);

/// Normalised discrete Gaussian with radius ceil(4 sigma).
torch::Tensor gaussian_kernel_1d(double sigma);

/// Separable Gaussian blur of [B,H,W] maps with reflect-101 borders.
torch::Tensor gaussian_blur(const torch::Tensor& maps, double sigma);

/// sigmoid -> bilinear resize to (height, width) -> blur -> clip to [0,1].
/// Input [B,1,h,w] logits; output [B,height,width].
torch::Tensor postprocess(const torch::Tensor& map_logits, int height, int width, double sigma = 4.0);

}  // namespace unisurf
