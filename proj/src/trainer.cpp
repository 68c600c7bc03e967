#include "unisurf/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "unisurf/errors.hpp"
#include "unisurf/hash.hpp"
#include "unisurf/imageio.hpp"
#include "unisurf/losses.hpp"
#include "unisurf/synthgen.hpp"

namespace fs = std::filesystem;

namespace unisurf::train {
namespace {

torch::optim::AdamWOptions& group_options(torch::optim::OptimizerParamGroup& g) {
  return static_cast<torch::optim::AdamWOptions&>(g.options());
}

std::vector<torch::Tensor> trainable(Model& model) {
  auto params = model.head_parameters();
  const auto adaptor = model.adaptor_parameters();
  params.insert(params.end(), adaptor.begin(), adaptor.end());
  return params;
}

double global_grad_norm(const std::vector<torch::Tensor>& params) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (p.grad().defined()) sq += p.grad().to(torch::kFloat64).pow(2).sum().item<double>();
  }
  return std::sqrt(sq);
}

Batch gather(const TrainData& data, const std::vector<std::size_t>& items, Regime regime, std::uint64_t seed,
             std::size_t first) {
  Batch b;
  std::vector<torch::Tensor> images;
  std::vector<torch::Tensor> masks;
  for (std::size_t k = 0; k < items.size(); ++k) {
    const auto i = items[k];
    RandomStream rng(mix_seed(seed, first + k));
    const auto aug = augment(data.images[i], data.masks[i], regime, rng);
    images.push_back(aug.image);
    masks.push_back(aug.mask);
    b.anomalous.push_back(data.anomalous[i]);
    b.has_mask.push_back(data.has_mask[i]);
    b.ids.push_back(data.ids[i]);
  }
  b.images = torch::stack(images);
  b.masks = torch::stack(masks);
  return b;
}

void write_dump(const fs::path& dir, const RunConfig& config, const std::string& what) {
  if (dir.empty()) return;
  std::ofstream out(dir / "abort_dump.json");
  nlohmann::json j{{"error", what}, {"seed", config.seed}, {"config", to_yaml(config)}};
  out << j.dump(2) << '\n';
}

}  // namespace

LearningRates learning_rates_at(const TrainConfig& config, int epoch) {
  double factor = 1.0;
  for (const int e : config.lr_decay_epochs) {
    if (epoch >= e) factor *= config.lr_decay_factor;
  }
  return {config.lr_heads * factor, config.lr_adaptor * factor};
}

std::unique_ptr<torch::optim::AdamW> build_optimizer(Model& model, const TrainConfig& config) {
  const auto heads = model.head_parameters();
  const auto adaptor = model.adaptor_parameters();
  if (heads.empty()) throw ConfigError("train.lr_heads", "head parameter group is empty");
  if (adaptor.empty()) throw ConfigError("train.lr_adaptor", "adaptor parameter group is empty");
  std::vector<torch::optim::OptimizerParamGroup> groups;
  groups.emplace_back(heads, std::make_unique<torch::optim::AdamWOptions>(
                                 torch::optim::AdamWOptions(config.lr_heads).weight_decay(config.weight_decay)));
  groups.emplace_back(adaptor, std::make_unique<torch::optim::AdamWOptions>(
                                   torch::optim::AdamWOptions(config.lr_adaptor).weight_decay(config.weight_decay)));
  return std::make_unique<torch::optim::AdamW>(std::move(groups),
                                               torch::optim::AdamWOptions(config.lr_heads).weight_decay(config.weight_decay));
}

void set_learning_rates(torch::optim::AdamW& optimizer, LearningRates rates) {
  auto& groups = optimizer.param_groups();
  group_options(groups.at(0)).lr(rates.heads);
  group_options(groups.at(1)).lr(rates.adaptor);
}

LearningRates current_learning_rates(torch::optim::AdamW& optimizer) {
  auto& groups = optimizer.param_groups();
  return {group_options(groups.at(0)).lr(), group_options(groups.at(1)).lr()};
}

std::vector<std::size_t> balance_epoch(const std::vector<bool>& anomalous, std::uint64_t seed) {
  if (anomalous.empty()) throw DataError("cannot plan an epoch over an empty dataset");
  std::vector<std::size_t> normal;
  std::vector<std::size_t> anomaly;
  for (std::size_t i = 0; i < anomalous.size(); ++i) (anomalous[i] ? anomaly : normal).push_back(i);

  RandomStream rng(seed);
  std::vector<std::size_t> plan;
  if (normal.empty() || anomaly.empty()) {
    plan = normal.empty() ? anomaly : normal;
  } else {
    auto& minority = normal.size() < anomaly.size() ? normal : anomaly;
    const auto& majority = normal.size() < anomaly.size() ? anomaly : normal;
    plan = majority;
    plan.insert(plan.end(), minority.begin(), minority.end());
    for (std::size_t k = minority.size(); k < majority.size(); ++k) {
      plan.push_back(minority[rng.uniform_int(0, static_cast<int>(minority.size()) - 1)]);
    }
  }
  for (std::size_t i = plan.size(); i > 1; --i) {
    std::swap(plan[i - 1], plan[rng.uniform_int(0, static_cast<int>(i) - 1)]);
  }
  return plan;
}

Augmented augment(const torch::Tensor& image, const torch::Tensor& mask, Regime regime, RandomStream& rng) {
  Augmented out{image, mask};
  if (!is_supervised(regime)) return out;
  out.flipped_h = rng.bernoulli(0.5);
  out.flipped_v = rng.bernoulli(0.5);
  std::vector<std::int64_t> dims;
  if (out.flipped_v) dims.push_back(-2);
  if (out.flipped_h) dims.push_back(-1);
  if (!dims.empty()) {
    out.image = torch::flip(image, dims);
    out.mask = torch::flip(mask, dims);
  }
  return out;
}

torch::Tensor gate_for(const std::vector<bool>& anomalous, const std::vector<bool>& has_mask) {
  auto gate = torch::ones({static_cast<std::int64_t>(anomalous.size())});
  for (std::size_t i = 0; i < anomalous.size(); ++i) {
    if (anomalous[i] && !has_mask[i]) gate[static_cast<std::int64_t>(i)] = 0.0;
  }
  return gate;
}

TrainData load_train_data(const data::Samples& samples, int height, int width) {
  TrainData d;
  for (const auto& s : samples) {
    d.images.push_back(load_image_tensor(s.image_path, height, width));
    if (s.kind == data::LabelKind::AnomalousFull) {
      d.masks.push_back(load_mask_tensor(*s.mask_path, height, width));
    } else {
      d.masks.push_back(torch::zeros({1, height, width}));
    }
    d.anomalous.push_back(data::is_anomalous(s.kind));
    d.has_mask.push_back(s.kind == data::LabelKind::AnomalousFull);
    d.ids.push_back(s.image_path.string());
  }
  if (d.size() == 0) throw DataError("training view is empty");
  return d;
}

StepResult train_step(Model& model, torch::optim::AdamW& optimizer, const Batch& batch, const RunConfig& config,
                      RandomStream& rng) {
  const bool supervised = is_supervised(config.regime);
  const auto f = model.features(batch.images);
  const auto gt = synth::downsample_mask(batch.masks, static_cast<int>(f.size(2)), static_cast<int>(f.size(3)));
  const auto options = synth::options_from(config);

  model.train(true);
  auto tf = model.train_forward(f, gt, batch.anomalous, options, rng, !supervised);

  std::vector<bool> anomalous;
  std::vector<bool> has_mask;
  for (const int src : tf.batch.source) {
    anomalous.push_back(batch.anomalous[src]);
    has_mask.push_back(batch.has_mask[src]);
  }
  const auto gate = gate_for(anomalous, has_mask);
  torch::Tensor weights;
  if (config.loss.weighting_enabled) weights = loss::distance_weights(tf.batch.gt, config.loss.w_max);
  const bool include_cls = config.ablate.cls_head != ClsHeadVariant::MaxOfMap;
  const auto terms = loss::total_loss(tf.outputs.map_logits, tf.outputs.score_logits, tf.batch.mask, tf.batch.target,
                                      gate, weights, config.loss, include_cls);

  StepResult r;
  r.total = terms.total.item<double>();
  r.seg = terms.seg.item<double>();
  r.cls = terms.cls.item<double>();
  if (!std::isfinite(r.total)) {
    std::string ids;
    for (const auto& id : batch.ids) ids += (ids.empty() ? "" : ", ") + id;
    throw NumericalAbort("non-finite loss (seed " + std::to_string(config.seed) + ", rng seed " +
                         std::to_string(rng.seed()) + "); batch: " + ids);
  }

  optimizer.zero_grad();
  terms.total.backward();
  const auto params = trainable(model);
  r.grad_norm = global_grad_norm(params);
  r.grad_norm_after = r.grad_norm;
  if (supervised && config.train.grad_clip_norm > 0.0) {
    torch::nn::utils::clip_grad_norm_(params, config.train.grad_clip_norm);
    r.grad_norm_after = global_grad_norm(params);
  }
  optimizer.step();
  return r;
}

FitResult fit(const TrainData& data, const RunConfig& config, const FitOptions& options) {
  validate(config);
  at::globalContext().setDeterministicAlgorithms(true, false);
  if (!options.output_dir.empty()) fs::create_directories(options.output_dir);

  FitResult result;
  result.model = std::make_unique<Model>(config);
  auto& model = *result.model;
  const auto [h, w] = config.image_size();
  model.verify_shapes(h, w);
  const auto backbone_before = model.extractor().checksum();

  auto optimizer = build_optimizer(model, config.train);
  std::ofstream log;
  if (!options.output_dir.empty()) log.open(options.output_dir / "train_log.jsonl", std::ios::trunc);

  const auto batch_size = static_cast<std::size_t>(config.train.batch_size);
  const auto synth_seed = config.synth_seed();
  for (int epoch = 0; epoch < config.train.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    const auto rates = learning_rates_at(config.train, epoch);
    set_learning_rates(*optimizer, rates);
    const auto epoch_seed = mix_seed(config.seed, static_cast<std::uint64_t>(epoch));
    const auto plan = balance_epoch(data.anomalous, mix_seed(epoch_seed, 1));

    EpochLog entry;
    entry.epoch = epoch + 1;
    entry.lr = rates;
    std::size_t steps = 0;
    for (std::size_t first = 0; first < plan.size(); first += batch_size) {
      const std::vector<std::size_t> items(plan.begin() + first, plan.begin() + std::min(plan.size(), first + batch_size));
      const auto batch = gather(data, items, config.regime, mix_seed(epoch_seed, 2), first);
      RandomStream rng(mix_seed(mix_seed(synth_seed, static_cast<std::uint64_t>(epoch)), steps));
      StepResult r;
      try {
        r = train_step(model, *optimizer, batch, config, rng);
      } catch (const NumericalAbort& e) {
        write_dump(options.output_dir, config, std::string(e.what()) + " (epoch " + std::to_string(epoch + 1) + ")");
        throw;
      }
      entry.l_seg += r.seg;
      entry.l_cls += r.cls;
      entry.l_total += r.total;
      ++steps;
    }
    entry.l_seg /= static_cast<double>(steps);
    entry.l_cls /= static_cast<double>(steps);
    entry.l_total /= static_cast<double>(steps);
    result.log.push_back(entry);

    if (log.is_open()) {
      nlohmann::json j{{"epoch", entry.epoch},
                       {"l_seg", entry.l_seg},
                       {"l_cls", entry.l_cls},
                       {"l_total", entry.l_total},
                       {"lr", rates.heads},
                       {"lr_adaptor", rates.adaptor}};
      log << j.dump() << '\n' << std::flush;
    }
    if (options.verbose) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      std::cerr << "epoch " << entry.epoch << "/" << config.train.epochs << "  loss " << entry.l_total << "  (seg "
                << entry.l_seg << ", cls " << entry.l_cls << ")  " << secs << " s\n";
    }
    if (options.on_epoch) options.on_epoch(entry);
  }

  model.eval();
  if (model.extractor().checksum() != backbone_before) throw Error("backbone parameters changed during training");
  if (!options.output_dir.empty()) {
    result.checkpoint = options.output_dir / "model.ckpt";
    model.save(result.checkpoint);
  }
  return result;
}

FitResult fit(const data::Samples& train_samples, const RunConfig& config, const FitOptions& options) {
  const auto [h, w] = config.image_size();
  return fit(load_train_data(train_samples, h, w), config, options);
}

}  // namespace unisurf::train
