#include "unisurf/datasets.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "unisurf/errors.hpp"
#include "unisurf/hash.hpp"

namespace fs = std::filesystem;

namespace unisurf::data {
namespace {

const std::set<std::string> kImageExtensions{".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"};

bool is_image(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return kImageExtensions.contains(ext);
}

std::vector<fs::path> list_images(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && is_image(e.path())) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<fs::path> list_dirs(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory()) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

template <class T>
void shuffle_with(std::vector<T>& v, std::mt19937_64& engine) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[engine() % i]);
}

std::optional<fs::path> first_existing(const std::vector<fs::path>& candidates) {
  for (const auto& c : candidates) {
    if (fs::is_regular_file(c)) return c;
  }
  return std::nullopt;
}

std::vector<fs::path> mask_candidates(const fs::path& mask_dir, const fs::path& image) {
  const auto stem = image.stem().string();
  return {mask_dir / (stem + "_mask.png"), mask_dir / (stem + ".png"), mask_dir / (stem + "_mask" + image.extension().string()),
          mask_dir / image.filename()};
}

void require_nonempty(const Samples& samples, const fs::path& root) {
  if (samples.empty()) throw DataError("no samples found under " + root.string());
}

// train/<class>/ and test/<class>/ with masks under ground_truth/<class>/.
Samples load_mvtec_like(const fs::path& root) {
  Samples out;
  std::vector<std::string> missing;
  for (const auto& [split_dir, split] : {std::pair{"train", Split::Train}, std::pair{"test", Split::Test}}) {
    for (const auto& class_dir : list_dirs(root / split_dir)) {
      const auto name = class_dir.filename().string();
      const bool normal = name == "good";
      for (const auto& image : list_images(class_dir)) {
        LabelledSample s;
        s.image_path = image;
        s.split = split;
        if (normal) {
          s.kind = LabelKind::Normal;
        } else {
          s.kind = LabelKind::AnomalousFull;
          s.mask_path = first_existing(mask_candidates(root / "ground_truth" / name, image));
          if (!s.mask_path) missing.push_back(image.string());
        }
        out.push_back(std::move(s));
      }
    }
  }
  if (!missing.empty()) throw DataError("missing mask for annotated defect: " + missing.front());
  require_nonempty(out, root);
  return out;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    cells.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

// VisA split CSV: object,split,label,image,mask with paths relative to root.
Samples load_visa_csv(const fs::path& root, const fs::path& csv, const std::string& category) {
  std::ifstream in(csv);
  if (!in) throw DataError("cannot read " + csv.string());
  std::string line;
  std::getline(in, line);
  const auto header = split_csv_line(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const char* key : {"object", "split", "label", "image", "mask"}) {
    if (!col.contains(key)) throw DataError(csv.string() + ": missing column '" + std::string(key) + "'");
  }

  Samples out;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    if (cells.size() < header.size()) throw DataError(csv.string() + ": short row '" + line + "'");
    if (!category.empty() && cells[col["object"]] != category) continue;
    LabelledSample s;
    s.image_path = root / cells[col["image"]];
    s.split = parse_split(cells[col["split"]]);
    if (cells[col["label"]] == "normal") {
      s.kind = LabelKind::Normal;
    } else {
      s.kind = LabelKind::AnomalousFull;
      const auto& m = cells[col["mask"]];
      if (m.empty() || !fs::is_regular_file(root / m)) {
        throw DataError("missing mask for annotated defect: " + s.image_path.string());
      }
      s.mask_path = root / m;
    }
    out.push_back(std::move(s));
  }
  require_nonempty(out, root);
  return out;
}

Samples load_visa(const fs::path& root, const std::string& category) {
  for (const auto& csv : {root / "split_csv" / "1cls.csv", root / "1cls.csv"}) {
    if (fs::is_regular_file(csv)) return load_visa_csv(root, csv, category);
  }
  if (!category.empty() && fs::is_directory(root / category / "train")) return load_mvtec_like(root / category);
  return load_mvtec_like(root);
}

bool is_ksdd2_mask(const fs::path& p) {
  const auto stem = p.stem().string();
  return stem.size() > 3 && stem.ends_with("_GT");
}

// KSDD2: train/ and test/ with <id>.png next to <id>_GT.png.
Samples load_ksdd2(const fs::path& root) {
  Samples out;
  for (const auto& [split_dir, split] : {std::pair{"train", Split::Train}, std::pair{"test", Split::Test}}) {
    for (const auto& image : list_images(root / split_dir)) {
      if (is_ksdd2_mask(image)) continue;
      const auto gt = image.parent_path() / (image.stem().string() + "_GT" + image.extension().string());
      if (!fs::is_regular_file(gt)) throw DataError("missing ground-truth file for " + image.string());
      const auto mask = cv::imread(gt.string(), cv::IMREAD_GRAYSCALE);
      if (mask.empty()) throw DataError("unreadable mask " + gt.string());
      LabelledSample s;
      s.image_path = image;
      s.split = split;
      if (cv::countNonZero(mask) > 0) {
        s.kind = LabelKind::AnomalousFull;
        s.mask_path = gt;
      }
      out.push_back(std::move(s));
    }
  }
  require_nonempty(out, root);
  return out;
}

// SensumSODF category: negative/data, positive/data and positive/annotation.
// There is no predefined split; folds are assigned later.
Samples load_sensum(const fs::path& root) {
  Samples out;
  for (const auto& image : list_images(root / "negative" / "data")) {
    LabelledSample s;
    s.image_path = image;
    out.push_back(std::move(s));
  }
  for (const auto& image : list_images(root / "positive" / "data")) {
    LabelledSample s;
    s.image_path = image;
    s.kind = LabelKind::AnomalousFull;
    s.mask_path = first_existing(mask_candidates(root / "positive" / "annotation", image));
    if (!s.mask_path) throw DataError("missing mask for annotated defect: " + image.string());
    out.push_back(std::move(s));
  }
  require_nonempty(out, root);
  return out;
}

fs::path resolve(const fs::path& base, const std::string& text) {
  fs::path p(text);
  return p.is_absolute() ? p : base / p;
}

std::optional<int> parse_fold(const std::string& text, const std::string& where) {
  if (text == "-") return std::nullopt;
  try {
    std::size_t used = 0;
    const int v = std::stoi(text, &used);
    if (used != text.size() || v < 0) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw DataError(where + ": invalid fold '" + text + "'");
  }
}

std::vector<int> fold_assignment(const Samples& samples, int k, std::uint64_t seed) {
  if (k < 1) throw DataError("fold count must be positive");
  if (static_cast<std::size_t>(k) > samples.size()) {
    throw DataError("cannot split " + std::to_string(samples.size()) + " samples into " + std::to_string(k) + " folds");
  }
  std::map<LabelKind, std::vector<std::size_t>> by_kind;
  for (std::size_t i = 0; i < samples.size(); ++i) by_kind[samples[i].kind].push_back(i);
  std::mt19937_64 engine(mix_seed(seed, 0xF01D));
  std::vector<int> fold(samples.size(), 0);
  std::size_t next = 0;
  for (auto& [kind, idx] : by_kind) {
    shuffle_with(idx, engine);
    for (const auto i : idx) fold[i] = static_cast<int>(next++ % k);
  }
  return fold;
}

}  // namespace

std::string_view to_string(LabelKind k) {
  switch (k) {
    case LabelKind::Normal:
      return "normal";
    case LabelKind::AnomalousWeak:
      return "anomalous_weak";
    case LabelKind::AnomalousFull:
      return "anomalous_full";
  }
  return "normal";
}

std::string_view to_string(Split s) { return s == Split::Train ? "train" : "test"; }

LabelKind parse_kind(std::string_view text) {
  if (text == "normal") return LabelKind::Normal;
  if (text == "anomalous_weak") return LabelKind::AnomalousWeak;
  if (text == "anomalous_full") return LabelKind::AnomalousFull;
  throw DataError("unknown label kind '" + std::string(text) + "'");
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::Train;
  if (text == "test") return Split::Test;
  throw DataError("unknown split '" + std::string(text) + "'");
}

void write_manifest(const fs::path& path, const Samples& samples) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write manifest " + path.string());
  const auto base = fs::absolute(path).parent_path();
  // Paths below the manifest's directory are stored relative to it.
  auto rel = [&base](const fs::path& p) {
    const auto r = fs::absolute(p).lexically_relative(base);
    return (r.empty() || *r.begin() == "..") ? p.string() : r.string();
  };
  out << "# image_path\tkind\tmask_path\tsplit\tfold\n";
  for (const auto& s : samples) {
    out << rel(s.image_path) << '\t' << to_string(s.kind) << '\t' << (s.mask_path ? rel(*s.mask_path) : "-")
        << '\t' << to_string(s.split) << '\t' << (s.fold ? std::to_string(*s.fold) : "-") << '\n';
  }
  if (!out) throw DataError("short write on manifest " + path.string());
}

Samples read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read manifest " + path.string());
  const auto base = path.parent_path();
  Samples out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, '\t')) cols.push_back(cell);
    const auto where = path.string() + ":" + std::to_string(lineno);
    if (cols.size() != 5) throw DataError(where + ": expected 5 tab-separated columns, got " + std::to_string(cols.size()));

    LabelledSample s;
    s.image_path = resolve(base, cols[0]);
    s.kind = parse_kind(cols[1]);
    if (cols[2] != "-") s.mask_path = resolve(base, cols[2]);
    s.split = parse_split(cols[3]);
    s.fold = parse_fold(cols[4], where);
    if (s.kind == LabelKind::AnomalousFull && !s.mask_path) throw DataError(where + ": anomalous_full sample without mask");
    if (s.kind != LabelKind::AnomalousFull && s.mask_path) throw DataError(where + ": only anomalous_full samples carry a mask");
    out.push_back(std::move(s));
  }
  require_nonempty(out, path);
  return out;
}

Samples load_dataset(const fs::path& root, DatasetLayout layout, const std::string& category) {
  if (!fs::exists(root)) throw DataError("dataset root does not exist: " + root.string());
  switch (layout) {
    case DatasetLayout::Manifest:
      return read_manifest(root);
    case DatasetLayout::MVTec:
      return load_mvtec_like(!category.empty() && fs::is_directory(root / category) ? root / category : root);
    case DatasetLayout::VisA:
      return load_visa(root, category);
    case DatasetLayout::KSDD2:
      return load_ksdd2(root);
    case DatasetLayout::Sensum:
      return load_sensum(!category.empty() && fs::is_directory(root / category) ? root / category : root);
  }
  throw DataError("unknown dataset layout");
}

std::vector<FoldSplit> make_folds(const Samples& samples, int k, std::uint64_t seed) {
  const auto fold = fold_assignment(samples, k, seed);
  std::vector<FoldSplit> out(k);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (int f = 0; f < k; ++f) {
      auto s = samples[i];
      s.fold = fold[i];
      s.split = fold[i] == f ? Split::Test : Split::Train;
      (fold[i] == f ? out[f].test : out[f].train).push_back(std::move(s));
    }
  }
  return out;
}

Samples assign_folds(const Samples& samples, int k, std::uint64_t seed) {
  const auto fold = fold_assignment(samples, k, seed);
  Samples out = samples;
  for (std::size_t i = 0; i < out.size(); ++i) out[i].fold = fold[i];
  return out;
}

Samples resolve_fold_splits(const Samples& samples, int test_fold) {
  Samples out = samples;
  for (auto& s : out) {
    if (s.fold) s.split = *s.fold == test_fold ? Split::Test : Split::Train;
  }
  return out;
}

std::optional<MixedPlan> mixed_plan_from(const RunConfig& config) {
  if (!config.mixed.ratio && !config.mixed.count) return std::nullopt;
  return MixedPlan{config.mixed.ratio, config.mixed.count, config.mixed_seed()};
}

TrainingView apply_regime(const Samples& samples, Regime regime, const std::optional<MixedPlan>& plan) {
  TrainingView view;
  for (const auto& s : samples) (s.split == Split::Train ? view.train : view.test).push_back(s);

  auto degrade = [](LabelledSample& s) {
    if (is_anomalous(s.kind)) {
      s.kind = LabelKind::AnomalousWeak;
      s.mask_path.reset();
    }
  };

  switch (regime) {
    case Regime::Unsupervised:
      std::erase_if(view.train, [](const LabelledSample& s) { return is_anomalous(s.kind); });
      break;
    case Regime::Weak:
      for (auto& s : view.train) degrade(s);
      break;
    case Regime::Mixed: {
      if (!plan || (plan->ratio.has_value() == plan->count.has_value())) {
        throw ConfigError("mixed", "mixed regime requires a MixedPlan with exactly one of mixed.ratio or mixed.count");
      }
      std::vector<std::size_t> candidates;
      for (std::size_t i = 0; i < view.train.size(); ++i) {
        if (view.train[i].kind == LabelKind::AnomalousFull) candidates.push_back(i);
      }
      std::size_t keep = 0;
      if (plan->ratio) {
        if (*plan->ratio < 0.0 || *plan->ratio > 1.0) throw ConfigError("mixed.ratio", "must lie in [0, 1]");
        keep = static_cast<std::size_t>(std::llround(*plan->ratio * static_cast<double>(candidates.size())));
      } else {
        if (*plan->count < 0 || static_cast<std::size_t>(*plan->count) > candidates.size()) {
          throw ConfigError("mixed.count", "requested " + std::to_string(*plan->count) + " pixel labels but only " +
                                               std::to_string(candidates.size()) + " annotated training samples exist");
        }
        keep = static_cast<std::size_t>(*plan->count);
      }
      std::mt19937_64 engine(mix_seed(plan->seed, 0x313D));
      shuffle_with(candidates, engine);
      std::vector<bool> selected(view.train.size(), false);
      for (std::size_t j = 0; j < keep; ++j) selected[candidates[j]] = true;
      for (std::size_t i = 0; i < view.train.size(); ++i) {
        if (!selected[i]) degrade(view.train[i]);
      }
      break;
    }
    case Regime::Full:
      break;
  }

  std::set<fs::path> train_paths;
  for (const auto& s : view.train) train_paths.insert(fs::weakly_canonical(s.image_path));
  for (const auto& s : view.test) {
    if (train_paths.contains(fs::weakly_canonical(s.image_path))) {
      throw DataError("test image also present in training view: " + s.image_path.string());
    }
  }
  return view;
}

TrainingView prepare(const RunConfig& config) {
  if (config.data.root.empty()) throw ConfigError("data.root", "dataset root or manifest is required");
  auto samples = load_dataset(config.data.root, config.data.layout, config.data.category);
  if (config.data.layout == DatasetLayout::Sensum &&
      std::none_of(samples.begin(), samples.end(), [](const LabelledSample& s) { return s.fold.has_value(); })) {
    samples = assign_folds(samples, config.data.folds, config.seed);
  }
  if (config.data.fold < 0 || config.data.fold >= config.data.folds) {
    throw ConfigError("data.fold", "must lie in [0, data.folds)");
  }
  samples = resolve_fold_splits(samples, config.data.fold);
  return apply_regime(samples, config.regime, mixed_plan_from(config));
}

cv::Mat load_rgb(const fs::path& path, int height, int width) {
  const auto bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw DataError("cannot decode image " + path.string());
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  if (rgb.rows != height || rgb.cols != width) {
    cv::Mat resized;
    cv::resize(rgb, resized, cv::Size(width, height), 0, 0, cv::INTER_LINEAR);
    rgb = resized;
  }
  cv::Mat out;
  rgb.convertTo(out, CV_32FC3, 1.0 / 255.0);
  return out;
}

cv::Mat load_mask(const fs::path& path, int height, int width) {
  const auto gray = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (gray.empty()) throw DataError("cannot decode mask " + path.string());
  cv::Mat bin = gray > 0;
  if (bin.rows != height || bin.cols != width) {
    cv::Mat resized;
    cv::resize(bin, resized, cv::Size(width, height), 0, 0, cv::INTER_NEAREST);
    bin = resized;
  }
  cv::Mat out;
  bin.convertTo(out, CV_8U, 1.0 / 255.0);
  return out;
}

}  // namespace unisurf::data
