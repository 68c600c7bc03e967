#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace YAML {
class Node;
}

namespace unisurf {

enum class Regime { Unsupervised, Weak, Mixed, Full };

enum class DatasetLayout { Manifest, MVTec, VisA, KSDD2, Sensum };

/// Classification-head variants used for the ablation table.
enum class ClsHeadVariant {
  Simple,    // one 5x5 block + pooling + linear
  Complex,   // three 5x5 blocks
  NoMap,     // simple block without the anomaly map as input
  MaxOfMap,  // no head: score is the maximum of the anomaly map
};

enum class ClsInput { Features, Adapted };

enum class AnomalyStrategy {
  Masked,     // Perlin-masked latent noise
  SimpleNet,  // whole-map noise on the duplicated copy
  None,       // real anomalies only
};

std::string_view to_string(Regime r);
std::string_view to_string(DatasetLayout l);
std::string_view to_string(ClsHeadVariant v);
std::string_view to_string(ClsInput v);
std::string_view to_string(AnomalyStrategy s);

Regime parse_regime(std::string_view text);
DatasetLayout parse_layout(std::string_view text);

inline bool is_supervised(Regime r) { return r != Regime::Unsupervised; }

struct BackboneConfig {
  std::string name = "wide_resnet50";
  std::string weights_path;
  bool random_init = false;
  std::uint64_t init_seed = 0;
  std::vector<int> layers{2, 3};
};

struct SynthConfig {
  double sigma = 0.015;
  std::optional<double> perlin_threshold;  // unset: chosen by regime/layout
  std::optional<std::uint64_t> seed;        // unset: derived from the run seed
  double clean_copy_probability = 0.5;
};

struct HeadsConfig {
  int cls_channels = 128;
  double leaky_slope = 0.2;
};

struct LossConfig {
  double th = 0.5;
  double focal_alpha = 0.25;  // negative disables alpha balancing
  double focal_gamma = 2.0;
  bool weighting_enabled = true;
  double w_max = 3.0;
};

struct TrainConfig {
  int epochs = 300;
  int batch_size = 32;
  double lr_heads = 2e-4;
  double lr_adaptor = 1e-4;
  double weight_decay = 1e-5;
  double lr_decay_factor = 0.4;
  std::vector<int> lr_decay_epochs{240, 270};
  double grad_clip_norm = 1.0;
};

struct AblationConfig {
  bool upscale = true;
  ClsHeadVariant cls_head = ClsHeadVariant::Simple;
  ClsInput cls_input = ClsInput::Features;
  AnomalyStrategy anomaly_strategy = AnomalyStrategy::Masked;
  bool overlap_allowed = false;
};

struct MixedConfig {
  std::optional<double> ratio;
  std::optional<int> count;
  std::optional<std::uint64_t> seed;
};

struct DataConfig {
  std::string root;  // dataset root or manifest file
  DatasetLayout layout = DatasetLayout::Manifest;
  std::string category;
  int image_height = 0;  // 0: layout default
  int image_width = 0;
  int folds = 3;
  int fold = 0;
};

struct EvalConfig {
  double aupro_fpr_limit = 0.3;
  int batch_size = 16;
  double blur_sigma = 4.0;
};

struct RunConfig {
  Regime regime = Regime::Unsupervised;
  std::uint64_t seed = 0;
  DataConfig data;
  MixedConfig mixed;
  BackboneConfig backbone;
  SynthConfig synth;
  HeadsConfig heads;
  LossConfig loss;
  TrainConfig train;
  AblationConfig ablate;
  EvalConfig eval;

  /// Perlin binarisation threshold after regime/layout defaults.
  double perlin_threshold() const;
  std::uint64_t synth_seed() const;
  std::uint64_t mixed_seed() const;
  /// Input resolution after layout defaults; {height, width}.
  std::pair<int, int> image_size() const;
};

/// Parse and validate. Unknown keys and out-of-range values raise ConfigError
/// naming the dotted key.
RunConfig parse_config(const YAML::Node& root);
RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});
RunConfig config_from_string(const std::string& yaml, const std::vector<std::string>& overrides = {});

/// Apply one `dotted.key=value` override in place; value is parsed as YAML.
void apply_override(YAML::Node& root, std::string_view assignment);

void validate(const RunConfig& config);

std::string to_yaml(const RunConfig& config);

/// Hash of every field that determines the model's parameter layout and
/// inference behaviour. Checkpoints refuse to load on mismatch.
std::string architecture_hash(const RunConfig& config);

}  // namespace unisurf
