#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "unisurf/config.hpp"
#include "unisurf/datasets.hpp"
#include "unisurf/model.hpp"
#include "unisurf/random.hpp"

namespace unisurf::train {

struct LearningRates {
  double heads = 0.0;
  double adaptor = 0.0;
};

/// Step schedule: base rates times factor^(number of decay epochs <= epoch).
/// Epochs are 0-based.
LearningRates learning_rates_at(const TrainConfig& config, int epoch);

/// AdamW with two groups: [0] segmentation + classification heads,
/// [1] adaptor. The backbone is excluded.
std::unique_ptr<torch::optim::AdamW> build_optimizer(Model& model, const TrainConfig& config);
void set_learning_rates(torch::optim::AdamW& optimizer, LearningRates rates);
LearningRates current_learning_rates(torch::optim::AdamW& optimizer);

/// Item indices for one epoch: the minority class is oversampled with
/// replacement up to the majority count, then everything is shuffled.
std::vector<std::size_t> balance_epoch(const std::vector<bool>& anomalous, std::uint64_t seed);

/// Joint random flips of image [C,H,W] and mask [1,H,W]; identity in the
/// unsupervised regime.
struct Augmented {
  torch::Tensor image;
  torch::Tensor mask;
  bool flipped_h = false;
  bool flipped_v = false;
};
Augmented augment(const torch::Tensor& image, const torch::Tensor& mask, Regime regime, RandomStream& rng);

/// Per-image loss gate: 0 for weakly labelled anomalous images, else 1.
torch::Tensor gate_for(const std::vector<bool>& anomalous, const std::vector<bool>& has_mask);

/// Preprocessed training data held in memory.
struct TrainData {
  std::vector<torch::Tensor> images;  // [3,H,W], normalised
  std::vector<torch::Tensor> masks;   // [1,H,W] in {0,1}
  std::vector<bool> anomalous;
  std::vector<bool> has_mask;
  std::vector<std::string> ids;

  std::size_t size() const { return images.size(); }
};

TrainData load_train_data(const data::Samples& samples, int height, int width);

struct Batch {
  torch::Tensor images;  // [B,3,H,W]
  torch::Tensor masks;   // [B,1,H,W]
  std::vector<bool> anomalous;
  std::vector<bool> has_mask;
  std::vector<std::string> ids;
};

struct StepResult {
  double total = 0.0;
  double seg = 0.0;
  double cls = 0.0;
  double grad_norm = 0.0;       // before clipping
  double grad_norm_after = 0.0;  // after clipping (equal when not clipped)
};

/// One optimisation step: duplicate/perturb, both heads, gated loss,
/// backward, clipping in supervised regimes, AdamW update. Throws
/// NumericalAbort on a non-finite loss.
StepResult train_step(Model& model, torch::optim::AdamW& optimizer, const Batch& batch, const RunConfig& config,
                      RandomStream& rng);

struct EpochLog {
  int epoch = 0;
  double l_seg = 0.0;
  double l_cls = 0.0;
  double l_total = 0.0;
  LearningRates lr;
};

struct FitOptions {
  std::filesystem::path output_dir;  // empty: nothing is written
  bool verbose = false;
  std::function<void(const EpochLog&)> on_epoch;
};

struct FitResult {
  std::unique_ptr<Model> model;
  std::vector<EpochLog> log;
  std::filesystem::path checkpoint;
};

/// Full schedule, final-epoch model. Writes model.ckpt and train_log.jsonl
/// into the output directory.
FitResult fit(const TrainData& data, const RunConfig& config, const FitOptions& options = {});
FitResult fit(const data::Samples& train_samples, const RunConfig& config, const FitOptions& options = {});

}  // namespace unisurf::train
