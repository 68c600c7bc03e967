#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "unisurf/config.hpp"
#include "unisurf/datasets.hpp"
#include "unisurf/model.hpp"

namespace unisurf::eval {

struct MetricSet {
  double det_auroc = 0.0;
  double det_ap = 0.0;
  std::optional<double> loc_aupro;
  std::optional<double> loc_ap;
};

struct ImageRecord {
  std::string path;
  int label = 0;
  double score = 0.0;
};

struct EvalReport {
  MetricSet metrics;
  std::map<std::string, MetricSet> per_category;
  int n_images = 0;
  std::uint64_t seed = 0;
  std::string checkpoint_hash;
  double aupro_fpr_limit = 0.3;
  std::vector<ImageRecord> images;
};

struct EvalOptions {
  bool localization = true;  // false: skip AUPRO and AP-loc
  std::string checkpoint_hash;
};

/// Score every test sample and compute detection and localisation metrics.
/// Localisation requires a mask for every anomalous test image; otherwise
/// UndefinedMetricError is raised.
EvalReport evaluate(Model& model, const data::Samples& test, const RunConfig& config, const EvalOptions& options = {});

nlohmann::json to_json(const MetricSet& m);
nlohmann::json to_json(const EvalReport& report);

/// Mean and sample standard deviation of each metric over runs.
nlohmann::json aggregate(const std::vector<EvalReport>& reports);

/// path,label,score per test image.
void write_scores_csv(const std::filesystem::path& path, const EvalReport& report);

}  // namespace unisurf::eval
