#include "unisurf/cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <json.hpp>

#include "unisurf/bench.hpp"
#include "unisurf/datasets.hpp"
#include "unisurf/errors.hpp"
#include "unisurf/evaluate.hpp"
#include "unisurf/hash.hpp"
#include "unisurf/imageio.hpp"
#include "unisurf/model.hpp"
#include "unisurf/overlay.hpp"
#include "unisurf/toy.hpp"
#include "unisurf/trainer.hpp"

namespace fs = std::filesystem;

namespace unisurf::cli {
namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

void snapshot(const fs::path& dir, const RunConfig& config) {
  fs::create_directories(dir);
  write_text(dir / "resolved_config.yaml", to_yaml(config) + "\n");
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::string output;
};

void add_config_options(CLI::App* cmd, Common& c, bool config_required) {
  auto* opt = cmd->add_option("-c,--config", c.config, "YAML run configuration");
  if (config_required) opt->required();
  cmd->add_option("-o,--override", c.overrides, "dotted.key=value override (repeatable)");
}

// Config for commands that start from a checkpoint: the explicit config when
// given, otherwise the one stored in the checkpoint.
std::unique_ptr<Model> load_model(const std::string& checkpoint, const std::optional<RunConfig>& config) {
  return Model::load(checkpoint, config ? &*config : nullptr);
}

std::optional<RunConfig> optional_config(const Common& c) {
  if (c.config.empty()) {
    if (!c.overrides.empty()) throw ConfigError("--override", "overrides need --config");
    return std::nullopt;
  }
  return load_config(c.config, c.overrides);
}

torch::Tensor rgb_tensor(const fs::path& path, int h, int w) {
  const auto m = data::load_rgb(path, h, w);
  return torch::from_blob(const_cast<float*>(m.ptr<float>()), {h, w, 3}, torch::kFloat32).clone();
}

// Overlays and raw maps for `images`; returns the number written.
int write_predictions(Model& model, const std::vector<fs::path>& images, const fs::path& out_dir) {
  const auto [h, w] = model.config().image_size();
  nlohmann::json scores = nlohmann::json::array();
  int written = 0;
  std::map<std::string, int> stems;
  for (const auto& path : images) {
    torch::Tensor input;
    torch::Tensor rgb;
    try {
      input = load_image_tensor(path, h, w);
      rgb = rgb_tensor(path, h, w);
    } catch (const DataError& e) {
      std::cerr << "warning: skipping " << path.string() << ": " << e.what() << "\n";
      continue;
    }
    const auto pred = model.predict(input.unsqueeze(0));
    const double score = pred.score[0].item<double>();
    auto stem = path.stem().string();
    if (const int n = stems[stem]++; n > 0) stem += "_" + std::to_string(n);
    const auto files = write_overlay(out_dir, stem, rgb, pred.anomaly_map[0], score);
    scores.push_back({{"image", path.string()},
                      {"score", score},
                      {"score_text", format_score(score)},
                      {"overlay", files.overlay.filename().string()},
                      {"raw_map", files.raw.filename().string()}});
    ++written;
  }
  write_json(out_dir / "scores.json", scores);
  if (written == 0) throw DataError("no input image could be read");
  return written;
}

int cmd_train(const Common& c, bool verbose) {
  const auto config = load_config(c.config, c.overrides);
  const fs::path out = c.output;
  snapshot(out, config);
  const auto view = data::prepare(config);
  data::write_manifest(out / "train_view.tsv", view.train);
  data::write_manifest(out / "test_split.tsv", view.test);
  const auto result = train::fit(view.train, config, {out, verbose, {}});
  std::cout << result.checkpoint.string() << "\n";
  return 0;
}

int cmd_eval(const Common& c, const std::vector<std::string>& checkpoints, int seeds, bool no_loc) {
  if (seeds > 0 && static_cast<std::size_t>(seeds) != checkpoints.size()) {
    throw ConfigError("--seeds", std::to_string(seeds) + " seeds requested but " + std::to_string(checkpoints.size()) +
                                     " checkpoints given");
  }
  const auto config = optional_config(c);
  const fs::path out = c.output;
  std::vector<eval::EvalReport> reports;
  for (std::size_t k = 0; k < checkpoints.size(); ++k) {
    auto model = load_model(checkpoints[k], config);
    if (k == 0) snapshot(out, model->config());
    const auto view = data::prepare(model->config());
    eval::EvalOptions options;
    options.localization = !no_loc;
    options.checkpoint_hash = file_sha256(checkpoints[k]);
    reports.push_back(eval::evaluate(*model, view.test, model->config(), options));
    const auto csv = checkpoints.size() == 1 ? out / "scores.csv" : out / ("scores_" + std::to_string(k) + ".csv");
    eval::write_scores_csv(csv, reports.back());
  }
  const auto j = reports.size() == 1 ? eval::to_json(reports.front()) : eval::aggregate(reports);
  write_json(out / "eval_report.json", j);
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_predict(const std::string& checkpoint, const std::vector<std::string>& inputs, const fs::path& out) {
  auto model = Model::load(checkpoint);
  snapshot(out, model->config());
  std::vector<fs::path> images(inputs.begin(), inputs.end());
  const int n = write_predictions(*model, images, out);
  std::cout << n << " of " << images.size() << " images written to " << out.string() << "\n";
  return 0;
}

int cmd_export(const Common& c, const std::string& checkpoint, const std::string& split) {
  const auto config = optional_config(c);
  auto model = load_model(checkpoint, config);
  const fs::path out = c.output;
  snapshot(out, model->config());
  const auto view = data::prepare(model->config());
  std::vector<fs::path> images;
  for (const auto& s : split == "train" ? view.train : view.test) images.push_back(s.image_path);
  const int n = write_predictions(*model, images, out);
  std::cout << n << " overlays written to " << out.string() << "\n";
  return 0;
}

int cmd_bench(const Common& c, const std::string& checkpoint, int warmup, int iters) {
  std::unique_ptr<Model> model;
  if (!checkpoint.empty()) {
    model = load_model(checkpoint, optional_config(c));
  } else {
    if (c.config.empty()) throw ConfigError("--config", "bench needs --config or --checkpoint");
    model = std::make_unique<Model>(load_config(c.config, c.overrides));
  }
  const fs::path out = c.output;
  if (!out.empty()) snapshot(out, model->config());
  const auto [h, w] = model->config().image_size();
  const auto report = bench::bench_latency(*model, h, w, warmup, iters);
  const auto j = bench::to_json(report);
  if (!out.empty()) write_json(out / "bench.json", j);
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_make_manifest(const std::string& root, const std::string& layout, const std::string& category,
                      const std::string& output, int folds, std::uint64_t seed) {
  auto samples = data::load_dataset(root, parse_layout(layout), category);
  if (folds > 0) samples = data::assign_folds(samples, folds, seed);
  data::write_manifest(output, samples);
  std::cout << samples.size() << " samples written to " << output << "\n";
  return 0;
}

}  // namespace

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const NumericalAbort*>(&e)) return 4;
  if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const InputError*>(&e) ||
      dynamic_cast<const UndefinedMetricError*>(&e)) {
    return 3;
  }
  return 1;
}

int run(int argc, char** argv) {
  CLI::App app{"Unified surface anomaly detection and localisation"};
  app.require_subcommand(1);

  Common train_c;
  bool verbose = false;
  auto* train_cmd = app.add_subcommand("train", "train a model; writes model.ckpt and train_log.jsonl");
  add_config_options(train_cmd, train_c, true);
  train_cmd->add_option("--output", train_c.output, "output directory")->required();
  train_cmd->add_flag("-v,--verbose", verbose, "per-epoch progress on stderr");

  Common eval_c;
  std::vector<std::string> eval_ckpts;
  int seeds = 0;
  bool no_loc = false;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate checkpoints on their test split");
  add_config_options(eval_cmd, eval_c, false);
  eval_cmd->add_option("--checkpoint", eval_ckpts, "checkpoint file (repeat for several seeds)")->required();
  eval_cmd->add_option("--seeds", seeds, "expected number of seed checkpoints; reports mean and std");
  eval_cmd->add_flag("--no-loc", no_loc, "skip localisation metrics");
  eval_cmd->add_option("--output", eval_c.output, "output directory")->required();

  std::string predict_ckpt;
  std::vector<std::string> predict_inputs;
  std::string predict_out;
  auto* predict_cmd = app.add_subcommand("predict", "anomaly maps and scores for individual images");
  predict_cmd->add_option("--checkpoint", predict_ckpt, "checkpoint file")->required();
  predict_cmd->add_option("--output", predict_out, "output directory")->required();
  predict_cmd->add_option("images", predict_inputs, "input images")->required();

  Common export_c;
  std::string export_ckpt;
  std::string export_split = "test";
  auto* export_cmd = app.add_subcommand("export-overlays", "overlays for a dataset split");
  add_config_options(export_cmd, export_c, false);
  export_cmd->add_option("--checkpoint", export_ckpt, "checkpoint file")->required();
  export_cmd->add_option("--split", export_split, "train or test")->check(CLI::IsMember({"train", "test"}));
  export_cmd->add_option("--output", export_c.output, "output directory")->required();

  Common bench_c;
  std::string bench_ckpt;
  int warmup = 10;
  int iters = 50;
  auto* bench_cmd = app.add_subcommand("bench", "inference latency and batch-16 throughput");
  add_config_options(bench_cmd, bench_c, false);
  bench_cmd->add_option("--checkpoint", bench_ckpt, "checkpoint file (default: untrained model from --config)");
  bench_cmd->add_option("--warmup", warmup, "warmup iterations");
  bench_cmd->add_option("--iters", iters, "timed iterations");
  bench_cmd->add_option("--output", bench_c.output, "output directory");

  std::string mm_root;
  std::string mm_layout;
  std::string mm_category;
  std::string mm_output;
  int mm_folds = 0;
  std::uint64_t mm_seed = 0;
  auto* mm_cmd = app.add_subcommand("make-manifest", "compile a dataset folder into a manifest");
  mm_cmd->add_option("--root", mm_root, "dataset root")->required();
  mm_cmd->add_option("--layout", mm_layout, "mvtec, visa, ksdd2 or sensum")->required();
  mm_cmd->add_option("--category", mm_category, "category sub-directory or VisA object");
  mm_cmd->add_option("--folds", mm_folds, "assign stratified folds");
  mm_cmd->add_option("--seed", mm_seed, "fold assignment seed");
  mm_cmd->add_option("--output", mm_output, "manifest path")->required();

  std::string toy_out;
  toy::ToySpec toy_spec;
  auto* toy_cmd = app.add_subcommand("make-toy", "write the procedural toy dataset");
  toy_cmd->add_option("--output", toy_out, "output directory")->required();
  toy_cmd->add_option("--seed", toy_spec.seed, "generator seed");
  toy_cmd->add_option("--size", toy_spec.size, "image side length");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*train_cmd) return cmd_train(train_c, verbose);
    if (*eval_cmd) return cmd_eval(eval_c, eval_ckpts, seeds, no_loc);
    if (*predict_cmd) return cmd_predict(predict_ckpt, predict_inputs, predict_out);
    if (*export_cmd) return cmd_export(export_c, export_ckpt, export_split);
    if (*bench_cmd) return cmd_bench(bench_c, bench_ckpt, warmup, iters);
    if (*mm_cmd) return cmd_make_manifest(mm_root, mm_layout, mm_category, mm_output, mm_folds, mm_seed);
    if (*toy_cmd) {
      const auto samples = toy::generate(toy_out, toy_spec);
      std::cout << samples.size() << " samples written to " << toy_out << "\n";
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const NumericalAbort& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return 1;
}

}  // namespace unisurf::cli
