#include "unisurf/config.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "unisurf/errors.hpp"
#include "unisurf/hash.hpp"

namespace unisurf {
namespace {

template <typename Enum>
struct EnumName {
  Enum value;
  std::string_view name;
};

constexpr EnumName<Regime> kRegimes[] = {
    {Regime::Unsupervised, "unsupervised"},
    {Regime::Weak, "weak"},
    {Regime::Mixed, "mixed"},
    {Regime::Full, "full"},
};

constexpr EnumName<DatasetLayout> kLayouts[] = {
    {DatasetLayout::Manifest, "manifest"}, {DatasetLayout::MVTec, "mvtec"}, {DatasetLayout::VisA, "visa"},
    {DatasetLayout::KSDD2, "ksdd2"},       {DatasetLayout::Sensum, "sensum"},
};

// "none" is accepted as a synonym of max_of_map: both drop the head and
// score the image by the map maximum.
constexpr EnumName<ClsHeadVariant> kClsHeads[] = {
    {ClsHeadVariant::Simple, "simple"},
    {ClsHeadVariant::Complex, "complex"},
    {ClsHeadVariant::NoMap, "no_mo"},
    {ClsHeadVariant::MaxOfMap, "max_of_map"},
    {ClsHeadVariant::MaxOfMap, "none"},
};

constexpr EnumName<ClsInput> kClsInputs[] = {
    {ClsInput::Features, "features"},
    {ClsInput::Adapted, "adapted"},
};

constexpr EnumName<AnomalyStrategy> kStrategies[] = {
    {AnomalyStrategy::Masked, "masked"},
    {AnomalyStrategy::SimpleNet, "simplenet"},
    {AnomalyStrategy::None, "none"},
};

template <typename Enum, std::size_t N>
std::string_view name_of(const EnumName<Enum> (&table)[N], Enum value) {
  for (const auto& e : table) {
    if (e.value == value) return e.name;
  }
  return "?";
}

template <typename Enum, std::size_t N>
Enum parse_enum(const EnumName<Enum> (&table)[N], std::string_view text, const std::string& field) {
  for (const auto& e : table) {
    if (e.name == text) return e.value;
  }
  std::string allowed;
  for (const auto& e : table) {
    if (!allowed.empty()) allowed += ", ";
    allowed += e.name;
  }
  throw ConfigError(field, "unknown value '" + std::string(text) + "' (expected one of: " + allowed + ")");
}

// Walks a YAML mapping, converting known keys and rejecting unknown ones.
class Reader {
 public:
  Reader(const YAML::Node& node, std::string prefix) : node_(node), prefix_(std::move(prefix)) {
    if (node_ && !node_.IsNull() && !node_.IsMap()) {
      throw ConfigError(prefix_.empty() ? "<root>" : prefix_.substr(0, prefix_.size() - 1), "expected a mapping");
    }
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    if (!node_ || node_.IsNull()) return;
    const YAML::Node value = node_[key];
    if (!value || value.IsNull()) return;
    try {
      out = value.as<T>();
    } catch (const YAML::Exception&) {
      throw ConfigError(prefix_ + key, "malformed value");
    }
  }

  template <typename T>
  void read(const char* key, std::optional<T>& out) {
    seen_.insert(key);
    if (!node_ || node_.IsNull()) return;
    const YAML::Node value = node_[key];
    if (!value || value.IsNull()) return;
    try {
      out = value.as<T>();
    } catch (const YAML::Exception&) {
      throw ConfigError(prefix_ + key, "malformed value");
    }
  }

  template <typename Enum, std::size_t N>
  void read_enum(const char* key, const EnumName<Enum> (&table)[N], Enum& out) {
    std::optional<std::string> text;
    read(key, text);
    if (text) out = parse_enum(table, *text, prefix_ + key);
  }

  Reader child(const char* key) {
    seen_.insert(key);
    YAML::Node sub;
    if (node_ && node_.IsMap()) sub = node_[key];
    return Reader(sub, prefix_ + key + ".");
  }

  void finish() const {
    if (!node_ || !node_.IsMap()) return;
    for (const auto& kv : node_) {
      const auto key = kv.first.as<std::string>();
      if (!seen_.contains(key)) throw ConfigError(prefix_ + key, "unknown configuration key");
    }
  }

 private:
  YAML::Node node_;
  std::string prefix_;
  std::set<std::string> seen_;
};

void require(bool condition, const char* field, const std::string& message) {
  if (!condition) throw ConfigError(field, message);
}

const std::set<std::string>& known_backbones() {
  static const std::set<std::string> names{"wide_resnet50", "resnet18", "resnet50", "tiny_resnet"};
  return names;
}

}  // namespace

std::string_view to_string(Regime r) { return name_of(kRegimes, r); }
std::string_view to_string(DatasetLayout l) { return name_of(kLayouts, l); }
std::string_view to_string(ClsHeadVariant v) { return name_of(kClsHeads, v); }
std::string_view to_string(ClsInput v) { return name_of(kClsInputs, v); }
std::string_view to_string(AnomalyStrategy s) { return name_of(kStrategies, s); }

Regime parse_regime(std::string_view text) { return parse_enum(kRegimes, text, "regime"); }
DatasetLayout parse_layout(std::string_view text) { return parse_enum(kLayouts, text, "data.layout"); }

double RunConfig::perlin_threshold() const {
  if (synth.perlin_threshold) return *synth.perlin_threshold;
  switch (regime) {
    case Regime::Full:
    case Regime::Mixed:
      return 0.6;
    case Regime::Weak:
      return 0.2;
    case Regime::Unsupervised:
      return data.layout == DatasetLayout::VisA ? 0.6 : 0.2;
  }
  return 0.2;
}

std::uint64_t RunConfig::synth_seed() const { return synth.seed.value_or(mix_seed(seed, 0x5EED5)); }

std::uint64_t RunConfig::mixed_seed() const { return mixed.seed.value_or(mix_seed(seed, 0x313D)); }

std::pair<int, int> RunConfig::image_size() const {
  if (data.image_height > 0 && data.image_width > 0) return {data.image_height, data.image_width};
  switch (data.layout) {
    case DatasetLayout::KSDD2:
      return {640, 232};
    case DatasetLayout::Sensum:
      return data.category == "softgel" ? std::pair{144, 144} : std::pair{320, 192};
    default:
      return {256, 256};
  }
}

RunConfig parse_config(const YAML::Node& root) {
  RunConfig c;
  Reader top(root, "");
  top.read_enum("regime", kRegimes, c.regime);
  top.read("seed", c.seed);
  {
    auto r = top.child("data");
    r.read("root", c.data.root);
    r.read_enum("layout", kLayouts, c.data.layout);
    r.read("category", c.data.category);
    r.read("image_height", c.data.image_height);
    r.read("image_width", c.data.image_width);
    r.read("folds", c.data.folds);
    r.read("fold", c.data.fold);
    r.finish();
  }
  {
    auto r = top.child("mixed");
    r.read("ratio", c.mixed.ratio);
    r.read("count", c.mixed.count);
    r.read("seed", c.mixed.seed);
    r.finish();
  }
  {
    auto r = top.child("backbone");
    r.read("name", c.backbone.name);
    r.read("weights_path", c.backbone.weights_path);
    r.read("random_init", c.backbone.random_init);
    r.read("init_seed", c.backbone.init_seed);
    r.read("layers", c.backbone.layers);
    r.finish();
  }
  {
    auto r = top.child("synth");
    r.read("sigma", c.synth.sigma);
    r.read("perlin_threshold", c.synth.perlin_threshold);
    r.read("seed", c.synth.seed);
    r.read("clean_copy_probability", c.synth.clean_copy_probability);
    r.finish();
  }
  {
    auto r = top.child("heads");
    r.read("cls_channels", c.heads.cls_channels);
    r.read("leaky_slope", c.heads.leaky_slope);
    r.read_enum("cls_variant", kClsHeads, c.ablate.cls_head);  // alias of ablate.cls_head
    r.finish();
  }
  const auto heads_variant = c.ablate.cls_head;
  {
    auto r = top.child("loss");
    r.read("th", c.loss.th);
    r.read("focal_alpha", c.loss.focal_alpha);
    r.read("focal_gamma", c.loss.focal_gamma);
    r.read("weighting_enabled", c.loss.weighting_enabled);
    r.read("w_max", c.loss.w_max);
    r.finish();
  }
  {
    auto r = top.child("train");
    r.read("epochs", c.train.epochs);
    r.read("batch_size", c.train.batch_size);
    r.read("lr_heads", c.train.lr_heads);
    r.read("lr_adaptor", c.train.lr_adaptor);
    r.read("weight_decay", c.train.weight_decay);
    r.read("lr_decay_factor", c.train.lr_decay_factor);
    r.read("lr_decay_epochs", c.train.lr_decay_epochs);
    r.read("grad_clip_norm", c.train.grad_clip_norm);
    r.finish();
  }
  {
    auto r = top.child("ablate");
    r.read("upscale", c.ablate.upscale);
    r.read_enum("cls_head", kClsHeads, c.ablate.cls_head);
    const auto h = root["heads"];
    if (h && h.IsMap() && h["cls_variant"] && root["ablate"] && root["ablate"].IsMap() && root["ablate"]["cls_head"] &&
        c.ablate.cls_head != heads_variant) {
      throw ConfigError("heads.cls_variant", "conflicts with ablate.cls_head");
    }
    r.read_enum("cls_input", kClsInputs, c.ablate.cls_input);
    r.read_enum("anomaly_strategy", kStrategies, c.ablate.anomaly_strategy);
    r.read("overlap_allowed", c.ablate.overlap_allowed);
    r.finish();
  }
  {
    auto r = top.child("eval");
    r.read("aupro_fpr_limit", c.eval.aupro_fpr_limit);
    r.read("batch_size", c.eval.batch_size);
    r.read("blur_sigma", c.eval.blur_sigma);
    r.finish();
  }
  top.finish();

  std::sort(c.backbone.layers.begin(), c.backbone.layers.end());
  validate(c);
  return c;
}

void validate(const RunConfig& c) {
  require(c.loss.th > 0, "loss.th", "must be > 0");
  require(c.loss.focal_gamma >= 0, "loss.focal_gamma", "must be >= 0");
  require(c.loss.focal_alpha < 1, "loss.focal_alpha", "must be < 1 (negative disables alpha balancing)");
  require(c.loss.w_max >= 1, "loss.w_max", "must be >= 1");

  require(c.train.epochs >= 1, "train.epochs", "must be >= 1");
  require(c.train.batch_size >= 1, "train.batch_size", "must be >= 1");
  require(c.train.lr_heads > 0, "train.lr_heads", "must be > 0");
  require(c.train.lr_adaptor > 0, "train.lr_adaptor", "must be > 0");
  require(c.train.weight_decay >= 0, "train.weight_decay", "must be >= 0");
  require(c.train.lr_decay_factor > 0 && c.train.lr_decay_factor <= 1, "train.lr_decay_factor", "must be in (0, 1]");
  require(c.train.grad_clip_norm > 0, "train.grad_clip_norm", "must be > 0");
  for (std::size_t i = 0; i < c.train.lr_decay_epochs.size(); ++i) {
    const int e = c.train.lr_decay_epochs[i];
    require(e >= 1 && e < c.train.epochs, "train.lr_decay_epochs",
            "decay epoch " + std::to_string(e) + " must lie in [1, epochs)");
    require(i == 0 || e > c.train.lr_decay_epochs[i - 1], "train.lr_decay_epochs", "must be strictly increasing");
  }

  require(c.synth.sigma >= 0, "synth.sigma", "must be >= 0");
  if (c.synth.perlin_threshold) {
    require(*c.synth.perlin_threshold > -1 && *c.synth.perlin_threshold < 1, "synth.perlin_threshold",
            "must lie in (-1, 1)");
  }
  require(c.synth.clean_copy_probability >= 0 && c.synth.clean_copy_probability <= 1, "synth.clean_copy_probability",
          "must lie in [0, 1]");

  require(known_backbones().contains(c.backbone.name), "backbone.name",
          "unknown backbone '" + c.backbone.name + "' (expected wide_resnet50, resnet50, resnet18 or tiny_resnet)");
  require(!c.backbone.layers.empty(), "backbone.layers", "must not be empty");
  for (std::size_t i = 0; i < c.backbone.layers.size(); ++i) {
    const int l = c.backbone.layers[i];
    require(l >= 1 && l <= 4, "backbone.layers", "layer indices must lie in 1..4");
    require(i == 0 || l != c.backbone.layers[i - 1], "backbone.layers", "duplicate layer index");
  }

  require(c.heads.cls_channels >= 1, "heads.cls_channels", "must be >= 1");
  require(c.heads.leaky_slope >= 0, "heads.leaky_slope", "must be >= 0");

  if (c.regime == Regime::Mixed) {
    require(c.mixed.ratio.has_value() != c.mixed.count.has_value(), "mixed",
            "regime=mixed requires exactly one of mixed.ratio or mixed.count (MixedPlan)");
  }
  if (c.mixed.ratio) require(*c.mixed.ratio >= 0 && *c.mixed.ratio <= 1, "mixed.ratio", "must lie in [0, 1]");
  if (c.mixed.count) require(*c.mixed.count >= 0, "mixed.count", "must be >= 0");

  require(c.data.folds >= 2, "data.folds", "must be >= 2");
  require(c.data.fold >= 0 && c.data.fold < c.data.folds, "data.fold", "must lie in [0, folds)");
  require(c.data.image_height >= 0 && c.data.image_height % 8 == 0, "data.image_height",
          "must be a positive multiple of 8");
  require(c.data.image_width >= 0 && c.data.image_width % 8 == 0, "data.image_width",
          "must be a positive multiple of 8");
  require((c.data.image_height == 0) == (c.data.image_width == 0), "data.image_height",
          "image_height and image_width must be set together");

  require(c.eval.aupro_fpr_limit > 0 && c.eval.aupro_fpr_limit <= 1, "eval.aupro_fpr_limit", "must lie in (0, 1]");
  require(c.eval.batch_size >= 1, "eval.batch_size", "must be >= 1");
  require(c.eval.blur_sigma >= 0, "eval.blur_sigma", "must be >= 0");
}

void apply_override(YAML::Node& root, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError(std::string(assignment), "override must have the form key=value");
  }
  const std::string key(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));

  YAML::Node value;
  try {
    value = YAML::Load(text);
  } catch (const YAML::Exception&) {
    throw ConfigError(key, "override value is not valid YAML");
  }

  std::vector<std::string> parts;
  std::stringstream ss(key);
  for (std::string part; std::getline(ss, part, '.');) {
    if (part.empty()) throw ConfigError(key, "empty path component in override key");
    parts.push_back(part);
  }

  if (!root || root.IsNull()) root = YAML::Node(YAML::NodeType::Map);
  // yaml-cpp nodes are handles; walking by reassignment would rebind, so
  // recurse over copies and write back level by level.
  std::function<void(YAML::Node, std::size_t)> assign = [&](YAML::Node node, std::size_t depth) {
    const std::string& part = parts[depth];
    if (depth + 1 == parts.size()) {
      node[part] = value;
      return;
    }
    YAML::Node next = node[part];
    if (!next || next.IsNull()) {
      node[part] = YAML::Node(YAML::NodeType::Map);
      next = node[part];
    } else if (!next.IsMap()) {
      throw ConfigError(key, "'" + part + "' is not a section");
    }
    assign(next, depth + 1);
  };
  assign(root, 0);
}

RunConfig config_from_string(const std::string& yaml, const std::vector<std::string>& overrides) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml);
  } catch (const YAML::Exception& e) {
    throw ConfigError("", std::string("invalid YAML: ") + e.what());
  }
  for (const auto& o : overrides) apply_override(root, o);
  return parse_config(root);
}

RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot read config file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return config_from_string(buffer.str(), overrides);
}

std::string to_yaml(const RunConfig& c) {
  YAML::Emitter out;
  out << YAML::BeginMap;
  out << YAML::Key << "regime" << YAML::Value << std::string(to_string(c.regime));
  out << YAML::Key << "seed" << YAML::Value << c.seed;

  out << YAML::Key << "data" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "root" << YAML::Value << c.data.root;
  out << YAML::Key << "layout" << YAML::Value << std::string(to_string(c.data.layout));
  out << YAML::Key << "category" << YAML::Value << c.data.category;
  out << YAML::Key << "image_height" << YAML::Value << c.image_size().first;
  out << YAML::Key << "image_width" << YAML::Value << c.image_size().second;
  out << YAML::Key << "folds" << YAML::Value << c.data.folds;
  out << YAML::Key << "fold" << YAML::Value << c.data.fold;
  out << YAML::EndMap;

  out << YAML::Key << "mixed" << YAML::Value << YAML::BeginMap;
  if (c.mixed.ratio) out << YAML::Key << "ratio" << YAML::Value << *c.mixed.ratio;
  if (c.mixed.count) out << YAML::Key << "count" << YAML::Value << *c.mixed.count;
  out << YAML::Key << "seed" << YAML::Value << c.mixed_seed();
  out << YAML::EndMap;

  out << YAML::Key << "backbone" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "name" << YAML::Value << c.backbone.name;
  out << YAML::Key << "weights_path" << YAML::Value << c.backbone.weights_path;
  out << YAML::Key << "random_init" << YAML::Value << c.backbone.random_init;
  out << YAML::Key << "init_seed" << YAML::Value << c.backbone.init_seed;
  out << YAML::Key << "layers" << YAML::Value << YAML::Flow << c.backbone.layers;
  out << YAML::EndMap;

  out << YAML::Key << "synth" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "sigma" << YAML::Value << c.synth.sigma;
  out << YAML::Key << "perlin_threshold" << YAML::Value << c.perlin_threshold();
  out << YAML::Key << "seed" << YAML::Value << c.synth_seed();
  out << YAML::Key << "clean_copy_probability" << YAML::Value << c.synth.clean_copy_probability;
  out << YAML::EndMap;

  out << YAML::Key << "heads" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "cls_channels" << YAML::Value << c.heads.cls_channels;
  out << YAML::Key << "leaky_slope" << YAML::Value << c.heads.leaky_slope;
  out << YAML::EndMap;

  out << YAML::Key << "loss" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "th" << YAML::Value << c.loss.th;
  out << YAML::Key << "focal_alpha" << YAML::Value << c.loss.focal_alpha;
  out << YAML::Key << "focal_gamma" << YAML::Value << c.loss.focal_gamma;
  out << YAML::Key << "weighting_enabled" << YAML::Value << c.loss.weighting_enabled;
  out << YAML::Key << "w_max" << YAML::Value << c.loss.w_max;
  out << YAML::EndMap;

  out << YAML::Key << "train" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "epochs" << YAML::Value << c.train.epochs;
  out << YAML::Key << "batch_size" << YAML::Value << c.train.batch_size;
  out << YAML::Key << "lr_heads" << YAML::Value << c.train.lr_heads;
  out << YAML::Key << "lr_adaptor" << YAML::Value << c.train.lr_adaptor;
  out << YAML::Key << "weight_decay" << YAML::Value << c.train.weight_decay;
  out << YAML::Key << "lr_decay_factor" << YAML::Value << c.train.lr_decay_factor;
  out << YAML::Key << "lr_decay_epochs" << YAML::Value << YAML::Flow << c.train.lr_decay_epochs;
  out << YAML::Key << "grad_clip_norm" << YAML::Value << c.train.grad_clip_norm;
  out << YAML::EndMap;

  out << YAML::Key << "ablate" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "upscale" << YAML::Value << c.ablate.upscale;
  out << YAML::Key << "cls_head" << YAML::Value << std::string(to_string(c.ablate.cls_head));
  out << YAML::Key << "cls_input" << YAML::Value << std::string(to_string(c.ablate.cls_input));
  out << YAML::Key << "anomaly_strategy" << YAML::Value << std::string(to_string(c.ablate.anomaly_strategy));
  out << YAML::Key << "overlap_allowed" << YAML::Value << c.ablate.overlap_allowed;
  out << YAML::EndMap;

  out << YAML::Key << "eval" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "aupro_fpr_limit" << YAML::Value << c.eval.aupro_fpr_limit;
  out << YAML::Key << "batch_size" << YAML::Value << c.eval.batch_size;
  out << YAML::Key << "blur_sigma" << YAML::Value << c.eval.blur_sigma;
  out << YAML::EndMap;

  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

std::string architecture_hash(const RunConfig& c) {
  std::ostringstream ss;
  ss << "backbone=" << c.backbone.name << ";layers=";
  for (int l : c.backbone.layers) ss << l << ',';
  ss << ";random_init=" << c.backbone.random_init;
  if (c.backbone.random_init) ss << ";init_seed=" << c.backbone.init_seed;
  ss << ";cls_channels=" << c.heads.cls_channels << ";leaky=" << c.heads.leaky_slope;
  ss << ";upscale=" << c.ablate.upscale << ";cls_head=" << to_string(c.ablate.cls_head)
     << ";cls_input=" << to_string(c.ablate.cls_input);
  return sha256_hex(ss.str());
}

}  // namespace unisurf
