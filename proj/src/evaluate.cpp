#include "unisurf/evaluate.hpp"

#include <cmath>
#include <fstream>

#include "unisurf/errors.hpp"
#include "unisurf/imageio.hpp"
#include "unisurf/metrics.hpp"

namespace unisurf::eval {
namespace {

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (const char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

EvalReport evaluate(Model& model, const data::Samples& test, const RunConfig& config, const EvalOptions& options) {
  if (test.empty()) throw DataError("test split is empty");
  const auto [h, w] = config.image_size();
  const auto plane = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  if (options.localization) {
    for (const auto& s : test) {
      if (data::is_anomalous(s.kind) && !s.mask_path) {
        throw UndefinedMetricError("localisation metrics need a mask for every anomalous test image; missing for " +
                                   s.image_path.string());
      }
    }
  }

  EvalReport report;
  report.seed = config.seed;
  report.checkpoint_hash = options.checkpoint_hash;
  report.aupro_fpr_limit = config.eval.aupro_fpr_limit;
  report.n_images = static_cast<int>(test.size());

  std::vector<double> scores;
  std::vector<std::uint8_t> labels;
  std::vector<float> maps;
  std::vector<std::uint8_t> masks;
  if (options.localization) {
    maps.reserve(plane * test.size());
    masks.reserve(plane * test.size());
  }

  const auto bs = static_cast<std::size_t>(std::max(1, config.eval.batch_size));
  for (std::size_t first = 0; first < test.size(); first += bs) {
    const auto last = std::min(test.size(), first + bs);
    std::vector<torch::Tensor> images;
    for (std::size_t i = first; i < last; ++i) images.push_back(load_image_tensor(test[i].image_path, h, w));
    const auto pred = model.predict(torch::stack(images));
    const auto score = pred.score.to(torch::kFloat64).contiguous();
    const auto map = pred.anomaly_map.contiguous();
    for (std::size_t i = first; i < last; ++i) {
      const auto k = static_cast<std::int64_t>(i - first);
      const auto& s = test[i];
      const double v = score[k].item<double>();
      scores.push_back(v);
      labels.push_back(data::is_anomalous(s.kind) ? 1 : 0);
      report.images.push_back({s.image_path.string(), labels.back(), v});
      if (!options.localization) continue;
      const auto m = map[k];
      maps.insert(maps.end(), m.data_ptr<float>(), m.data_ptr<float>() + plane);
      if (s.mask_path) {
        const auto gt = data::load_mask(*s.mask_path, h, w);
        masks.insert(masks.end(), gt.ptr<std::uint8_t>(), gt.ptr<std::uint8_t>() + plane);
      } else {
        masks.insert(masks.end(), plane, 0);
      }
    }
  }

  report.metrics.det_auroc = metrics::auroc(scores, labels);
  report.metrics.det_ap = metrics::average_precision(scores, labels);
  if (options.localization) {
    report.metrics.loc_aupro = metrics::aupro(maps, masks, report.n_images, h, w, config.eval.aupro_fpr_limit);
    report.metrics.loc_ap = metrics::average_precision(std::span<const float>(maps), masks);
  }
  report.per_category[config.data.category.empty() ? "default" : config.data.category] = report.metrics;
  return report;
}

nlohmann::json to_json(const MetricSet& m) {
  return {{"det_auroc", m.det_auroc},
          {"det_ap", m.det_ap},
          {"loc_aupro", optional_json(m.loc_aupro)},
          {"loc_ap", optional_json(m.loc_ap)}};
}

nlohmann::json to_json(const EvalReport& r) {
  auto j = to_json(r.metrics);
  j["n_images"] = r.n_images;
  j["seed"] = r.seed;
  j["checkpoint_hash"] = r.checkpoint_hash;
  j["aupro_fpr_limit"] = r.aupro_fpr_limit;
  j["per_category"] = nlohmann::json::object();
  for (const auto& [name, m] : r.per_category) j["per_category"][name] = to_json(m);
  return j;
}

nlohmann::json aggregate(const std::vector<EvalReport>& reports) {
  if (reports.empty()) throw InputError("aggregate needs at least one report");
  nlohmann::json out;
  out["runs"] = nlohmann::json::array();
  for (const auto& r : reports) out["runs"].push_back(to_json(r));
  out["n_runs"] = reports.size();

  auto summarise = [&](const std::string& key, auto getter) {
    std::vector<double> v;
    for (const auto& r : reports) {
      const std::optional<double> x = getter(r.metrics);
      if (!x) {
        out[key] = nullptr;
        return;
      }
      v.push_back(*x);
    }
    double mean = 0.0;
    for (const double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (const double x : v) var += (x - mean) * (x - mean);
    const double sd = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
    out[key] = {{"mean", mean}, {"std", sd}};
  };
  summarise("det_auroc", [](const MetricSet& m) { return std::optional<double>(m.det_auroc); });
  summarise("det_ap", [](const MetricSet& m) { return std::optional<double>(m.det_ap); });
  summarise("loc_aupro", [](const MetricSet& m) { return m.loc_aupro; });
  summarise("loc_ap", [](const MetricSet& m) { return m.loc_ap; });
  return out;
}

void write_scores_csv(const std::filesystem::path& path, const EvalReport& report) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.precision(17);
  out << "path,label,score\n";
  for (const auto& r : report.images) out << csv_field(r.path) << ',' << r.label << ',' << r.score << '\n';
}

}  // namespace unisurf::eval
