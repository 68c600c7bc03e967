#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "unisurf/config.hpp"

namespace unisurf {

/// ImageNet statistics used to normalise RGB input in [0, 1].
inline constexpr float kImageNetMean[3] = {0.485f, 0.456f, 0.406f};
inline constexpr float kImageNetStd[3] = {0.229f, 0.224f, 0.225f};

/// Static description of a ResNet-family extractor.
struct BackboneSpec {
  std::string name;
  bool bottleneck = false;
  int stem_channels = 64;
  std::vector<int> planes;  // per stage
  std::vector<int> blocks;  // per stage
  int width_per_group = 64;

  /// Output channels of stage `layer` (1-based).
  int stage_channels(int layer) const { return planes.at(layer - 1) * (bottleneck ? 4 : 1); }
};

const BackboneSpec& backbone_spec(const std::string& name);

/// Spatial size of stage `layer` for an input of the given size.
std::pair<int, int> stage_size(int height, int width, int layer);

/// Torchvision-compatible ResNet trunk truncated after the deepest stage
/// that is needed. Parameter names match torchvision state dicts.
class ResNetImpl : public torch::nn::Module {
 public:
  ResNetImpl(const BackboneSpec& spec, int last_stage);

  /// Activations of the requested stages (1-based, ascending).
  std::vector<torch::Tensor> forward_stages(const torch::Tensor& x, const std::vector<int>& stages);

  const BackboneSpec& spec() const { return spec_; }
  int last_stage() const { return static_cast<int>(stages_.size()); }

 private:
  BackboneSpec spec_;
  torch::nn::Conv2d conv1_{nullptr};
  torch::nn::BatchNorm2d bn1_{nullptr};
  std::vector<torch::nn::Sequential> stages_;
};
TORCH_MODULE(ResNet);

/// Fixed-seed He initialisation (used when no pretrained weights are given).
void init_backbone_random(ResNetImpl& net, std::uint64_t seed);

/// Copy a torchvision state dict saved with `torch.save(dict(sd), path)`.
/// Raises ConfigError on unreadable files or missing/mis-shaped tensors.
void load_backbone_weights(ResNetImpl& net, const std::filesystem::path& path);

/// Resolve `backbone.weights_path` (absolute, relative, or under
/// $UNISURF_CACHE). Raises ConfigError when nothing usable is found.
std::filesystem::path resolve_weights_path(const BackboneConfig& config);

/// Per-stage activations for `images` ([B,3,H,W], H and W multiples of 8).
std::vector<torch::Tensor> extract_layers(ResNetImpl& net, const torch::Tensor& images, const std::vector<int>& layers);

/// Bilinearly resize every grid to twice the largest grid's size (or to
/// the largest size when `upscale` is false) and concatenate channels.
torch::Tensor upscale_concat(const std::vector<torch::Tensor>& grids, bool upscale = true);

/// 3x3 mean filter, stride 1, zero padding 1.
torch::Tensor neighborhood_pool(const torch::Tensor& grid);

/// Frozen extractor: trunk -> upscale_concat -> neighborhood_pool.
class FeatureExtractor {
 public:
  explicit FeatureExtractor(const BackboneConfig& config, bool upscale = true);

  torch::Tensor operator()(const torch::Tensor& images);

  int channels() const;
  std::pair<int, int> feature_size(int image_height, int image_width) const;
  const std::vector<int>& layers() const { return layers_; }
  ResNetImpl& net() { return *net_; }

  /// Digest of every trunk parameter and buffer.
  std::string checksum() const;

 private:
  ResNet net_{nullptr};
  std::vector<int> layers_;
  bool upscale_;
};

/// Trainable channel-preserving 1x1 projection.
class AdaptorImpl : public torch::nn::Module {
 public:
  explicit AdaptorImpl(int channels);

  /// Identity plus N(0, std^2) perturbation, zero bias.
  void reset(std::uint64_t seed, double perturbation_std = 1e-3);

  torch::Tensor forward(const torch::Tensor& features);

  torch::nn::Conv2d& projection() { return proj_; }

 private:
  torch::nn::Conv2d proj_{nullptr};
};
TORCH_MODULE(Adaptor);

}  // namespace unisurf
