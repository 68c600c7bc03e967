#include "unisurf/model.hpp"

#include <map>

#include "unisurf/checkpoint.hpp"
#include "unisurf/errors.hpp"
#include "unisurf/hash.hpp"

namespace unisurf {
namespace {

std::vector<torch::Tensor> concat_params(std::initializer_list<const torch::nn::Module*> modules) {
  std::vector<torch::Tensor> out;
  for (const auto* m : modules) {
    for (const auto& p : m->parameters()) out.push_back(p);
  }
  return out;
}

std::string shape_text(const std::vector<std::int64_t>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

}  // namespace

torch::Tensor normalize_imagenet(const torch::Tensor& rgb01) {
  const auto mean = torch::tensor({kImageNetMean[0], kImageNetMean[1], kImageNetMean[2]}).view({1, 3, 1, 1});
  const auto stdev = torch::tensor({kImageNetStd[0], kImageNetStd[1], kImageNetStd[2]}).view({1, 3, 1, 1});
  const auto x = rgb01.dim() == 3 ? rgb01.unsqueeze(0) : rgb01;
  return (x - mean) / stdev;
}

Model::Model(const RunConfig& config) : config_(config) {
  extractor_ = std::make_unique<FeatureExtractor>(config.backbone, config.ablate.upscale);
  channels_ = extractor_->channels();
  adaptor_ = Adaptor(channels_);
  adaptor_->reset(mix_seed(config.seed, 0xADA));
  seg_ = SegHead(channels_, config.heads.leaky_slope);
  init_head_parameters(*seg_, mix_seed(config.seed, 0x5E6));
  cls_ = ClsHead(channels_, config.heads.cls_channels, config.ablate.cls_head, config.heads.leaky_slope);
  init_head_parameters(*cls_, mix_seed(config.seed, 0xC15));
  eval();
}

torch::Tensor Model::features(const torch::Tensor& images) { return (*extractor_)(images); }

torch::Tensor Model::adapt(const torch::Tensor& features) { return adaptor_(features); }

HeadOutputs Model::heads(const torch::Tensor& features, const torch::Tensor& adapted, bool stop_map_gradient) {
  HeadOutputs out;
  out.map_logits = seg_(adapted);
  const auto& cls_in = config_.ablate.cls_input == ClsInput::Adapted ? adapted : features;
  out.score_logits = cls_(cls_in, out.map_logits, stop_map_gradient);
  return out;
}

Model::TrainForward Model::train_forward(const torch::Tensor& features, const torch::Tensor& gt_masks,
                                         const std::vector<bool>& anomalous, const synth::Options& options,
                                         RandomStream& rng, bool stop_map_gradient) {
  TrainForward tf;
  const auto adapted = adapt(features);
  tf.batch = synth::duplicate_and_perturb(features, adapted, gt_masks, anomalous, options, rng);
  tf.outputs = heads(tf.batch.features, tf.batch.adapted, stop_map_gradient);
  return tf;
}

HeadOutputs Model::infer_logits(const torch::Tensor& images) {
  const bool was_training = seg_->is_training();
  eval();
  torch::NoGradGuard no_grad;
  const auto f = features(images);
  auto out = heads(f, adapt(f), false);
  train(was_training);
  return out;
}

Prediction Model::predict(const torch::Tensor& images) {
  const auto logits = infer_logits(images);
  torch::NoGradGuard no_grad;
  Prediction p;
  p.anomaly_map = postprocess(logits.map_logits, static_cast<int>(images.size(2)), static_cast<int>(images.size(3)),
                              config_.eval.blur_sigma);
  p.score = torch::sigmoid(logits.score_logits);
  return p;
}

Model::ShapeReport Model::verify_shapes(int image_height, int image_width) {
  ShapeReport report;
  torch::NoGradGuard no_grad;
  const auto image = torch::zeros({1, 3, image_height, image_width});
  const auto stages = extract_layers(extractor_->net(), image, extractor_->layers());
  const auto& spec = extractor_->net().spec();
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const int layer = extractor_->layers()[i];
    const auto [h, w] = stage_size(image_height, image_width, layer);
    const std::vector<std::int64_t> expected{spec.stage_channels(layer), h, w};
    auto got = stages[i].sizes().vec();
    got.erase(got.begin());
    if (got != expected) {
      throw ConfigError("backbone", "layer " + std::to_string(layer) + " produced " + shape_text(got) + ", expected " +
                                        shape_text(expected));
    }
    report.stages.push_back(got);
  }

  const auto f = neighborhood_pool(upscale_concat(stages, config_.ablate.upscale));
  const auto [fh, fw] = extractor_->feature_size(image_height, image_width);
  report.features = {f.size(1), f.size(2), f.size(3)};
  if (report.features != std::vector<std::int64_t>{channels_, fh, fw}) {
    throw ConfigError("backbone", "feature map " + shape_text(report.features) + " does not match " +
                                      shape_text({channels_, fh, fw}));
  }
  const bool was_training = seg_->is_training();
  eval();
  const auto out = heads(f, adapt(f), false);
  train(was_training);
  report.map = {out.map_logits.size(1), out.map_logits.size(2), out.map_logits.size(3)};
  if (report.map != std::vector<std::int64_t>{1, fh, fw}) {
    throw ConfigError("heads", "anomaly map " + shape_text(report.map) + " is not aligned with the features");
  }
  return report;
}

void Model::train(bool on) {
  adaptor_->train(on);
  seg_->train(on);
  cls_->train(on);
  extractor_->net().eval();
}

std::vector<torch::Tensor> Model::head_parameters() const { return concat_params({seg_.get(), cls_.get()}); }

std::vector<torch::Tensor> Model::adaptor_parameters() const { return concat_params({adaptor_.get()}); }

std::vector<torch::Tensor> Model::seg_parameters() const { return concat_params({seg_.get()}); }

std::vector<torch::Tensor> Model::backbone_parameters() const { return extractor_->net().parameters(); }

std::vector<std::pair<std::string, torch::Tensor>> Model::named_state() const {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  auto add = [&out](const std::string& prefix, const torch::nn::Module& m) {
    for (const auto& p : m.named_parameters()) out.emplace_back(prefix + p.key(), p.value());
    for (const auto& b : m.named_buffers()) out.emplace_back(prefix + b.key(), b.value());
  };
  add("adaptor.", *adaptor_);
  add("seg.", *seg_);
  add("cls.", *cls_);
  return out;
}

void Model::save(const std::filesystem::path& path) const {
  Checkpoint ck;
  ck.meta = {{"architecture_hash", architecture_hash(config_)},
             {"backbone_checksum", extractor_->checksum()},
             {"config", to_yaml(config_)}};
  ck.tensors = named_state();
  write_checkpoint(path, ck);
}

std::unique_ptr<Model> Model::load(const std::filesystem::path& path, const RunConfig* expected) {
  const auto ck = read_checkpoint(path);
  const auto stored_hash = ck.meta.value("architecture_hash", "");
  RunConfig config = config_from_string(ck.meta.value("config", ""));
  if (architecture_hash(config) != stored_hash) throw ConfigError("checkpoint", "manifest config hash is inconsistent");
  if (expected != nullptr) {
    if (architecture_hash(*expected) != stored_hash) {
      throw ConfigError("checkpoint", "checkpoint architecture does not match the supplied configuration");
    }
    config = *expected;
  }

  auto model = std::make_unique<Model>(config);
  if (model->extractor().checksum() != ck.meta.value("backbone_checksum", "")) {
    throw ConfigError("checkpoint", "backbone weights differ from those the checkpoint was trained with");
  }

  std::map<std::string, torch::Tensor> stored(ck.tensors.begin(), ck.tensors.end());
  auto state = model->named_state();
  if (state.size() != stored.size()) throw ConfigError("checkpoint", "parameter manifest does not match the model");
  torch::NoGradGuard no_grad;
  for (auto& [name, tensor] : state) {
    const auto it = stored.find(name);
    if (it == stored.end()) throw ConfigError("checkpoint", "missing tensor '" + name + "'");
    if (it->second.sizes() != tensor.sizes() || it->second.scalar_type() != tensor.scalar_type()) {
      throw ConfigError("checkpoint", "shape or dtype mismatch for '" + name + "'");
    }
    tensor.copy_(it->second);
  }
  model->eval();
  return model;
}

}  // namespace unisurf
