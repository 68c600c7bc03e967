#pragma once

#include <opencv2/core.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "unisurf/config.hpp"

namespace unisurf::data {

enum class LabelKind { Normal, AnomalousWeak, AnomalousFull };
enum class Split { Train, Test };

std::string_view to_string(LabelKind k);
std::string_view to_string(Split s);
LabelKind parse_kind(std::string_view text);
Split parse_split(std::string_view text);

inline bool is_anomalous(LabelKind k) { return k != LabelKind::Normal; }

struct LabelledSample {
  std::filesystem::path image_path;
  LabelKind kind = LabelKind::Normal;
  std::optional<std::filesystem::path> mask_path;  // present iff AnomalousFull
  Split split = Split::Train;
  std::optional<int> fold;

  bool operator==(const LabelledSample&) const = default;
};

using Samples = std::vector<LabelledSample>;

/// Tab-separated manifest: image_path, kind, mask_path|-, split, fold|-.
/// Lines starting with '#' are comments. Relative paths are resolved
/// against the manifest's directory on read.
void write_manifest(const std::filesystem::path& path, const Samples& samples);
Samples read_manifest(const std::filesystem::path& path);

/// Compile a folder layout into samples. `category` selects a VisA object
/// when the root holds the split CSV. Raises DataError on missing masks,
/// unreadable layouts, or an empty result.
Samples load_dataset(const std::filesystem::path& root, DatasetLayout layout, const std::string& category = {});

/// Stratified k-fold partition (by label kind). Fold f's test set holds the
/// samples assigned to f; its train set holds all others.
struct FoldSplit {
  Samples train;
  Samples test;
};
std::vector<FoldSplit> make_folds(const Samples& samples, int k, std::uint64_t seed);

/// Same assignment as make_folds, recorded in each sample's `fold`.
Samples assign_folds(const Samples& samples, int k, std::uint64_t seed);

/// Samples carrying a fold index are routed to test when fold == `test_fold`.
Samples resolve_fold_splits(const Samples& samples, int test_fold);

struct MixedPlan {
  std::optional<double> ratio;
  std::optional<int> count;
  std::uint64_t seed = 0;
};

std::optional<MixedPlan> mixed_plan_from(const RunConfig& config);

struct TrainingView {
  Samples train;
  Samples test;
};

/// Degrade training labels to the regime's supervision; the test split is
/// returned untouched. Raises DataError on train/test path overlap.
TrainingView apply_regime(const Samples& samples, Regime regime, const std::optional<MixedPlan>& plan);

/// Samples for a run: manifest or folder layout, fold routing, regime.
TrainingView prepare(const RunConfig& config);

/// RGB float image in [0,1], resized to (height, width).
cv::Mat load_rgb(const std::filesystem::path& path, int height, int width);

/// Binary {0,1} CV_8U mask resized with nearest-neighbour; any pixel > 0 is
/// anomalous.
cv::Mat load_mask(const std::filesystem::path& path, int height, int width);

}  // namespace unisurf::data
