#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "unisurf/backbone.hpp"
#include "unisurf/config.hpp"
#include "unisurf/heads.hpp"
#include "unisurf/synthgen.hpp"

namespace unisurf {

struct Prediction {
  torch::Tensor anomaly_map;  // [B,H,W] in [0,1]
  torch::Tensor score;        // [B] in [0,1]
};

/// Head outputs for one forward pass.
struct HeadOutputs {
  torch::Tensor map_logits;    // [B,1,h,w]
  torch::Tensor score_logits;  // [B]
};

/// Extractor, adaptor and heads wired together.
class Model {
 public:
  explicit Model(const RunConfig& config);

  const RunConfig& config() const { return config_; }

  /// Frozen pooled features F for normalised images [B,3,H,W].
  torch::Tensor features(const torch::Tensor& images);
  torch::Tensor adapt(const torch::Tensor& features);

  /// Segmentation then classification on (possibly perturbed) maps.
  HeadOutputs heads(const torch::Tensor& features, const torch::Tensor& adapted, bool stop_map_gradient);

  struct TrainForward {
    synth::PerturbedBatch batch;
    HeadOutputs outputs;
  };

  /// Training path: adapt, duplicate and perturb, then both heads.
  TrainForward train_forward(const torch::Tensor& features, const torch::Tensor& gt_masks,
                             const std::vector<bool>& anomalous, const synth::Options& options, RandomStream& rng,
                             bool stop_map_gradient);

  /// Inference: no synthetic anomalies, no randomness.
  Prediction predict(const torch::Tensor& images);

  struct ShapeReport {
    std::vector<std::vector<std::int64_t>> stages;  // [C,h,w] per extracted layer
    std::vector<std::int64_t> features;             // [C,h,w] of F
    std::vector<std::int64_t> map;                  // [1,h,w] of M_o
  };

  /// Run a zero image through the pipeline and check feature and map shapes
  /// against stride/width arithmetic. Throws ConfigError on mismatch.
  ShapeReport verify_shapes(int image_height, int image_width);

  /// Raw head logits on unperturbed features (eval mode, no gradient).
  HeadOutputs infer_logits(const torch::Tensor& images);

  void train(bool on = true);
  void eval() { train(false); }

  std::vector<torch::Tensor> head_parameters() const;
  std::vector<torch::Tensor> adaptor_parameters() const;
  std::vector<torch::Tensor> seg_parameters() const;
  std::vector<torch::Tensor> backbone_parameters() const;

  /// Trainable state (parameters and buffers) keyed by qualified name.
  std::vector<std::pair<std::string, torch::Tensor>> named_state() const;

  FeatureExtractor& extractor() { return *extractor_; }
  Adaptor& adaptor() { return adaptor_; }
  SegHead& seg_head() { return seg_; }
  ClsHead& cls_head() { return cls_; }
  int channels() const { return channels_; }

  void save(const std::filesystem::path& path) const;

  /// Rebuild from a checkpoint. The stored config is used unless
  /// `expected` is given, in which case its architecture hash must match.
  static std::unique_ptr<Model> load(const std::filesystem::path& path, const RunConfig* expected = nullptr);

 private:
  RunConfig config_;
  std::unique_ptr<FeatureExtractor> extractor_;
  int channels_ = 0;
  Adaptor adaptor_{nullptr};
  SegHead seg_{nullptr};
  ClsHead cls_{nullptr};
};

/// NCHW float tensor from RGB pixels in [0,1], ImageNet-normalised.
torch::Tensor normalize_imagenet(const torch::Tensor& rgb01);

}  // namespace unisurf
