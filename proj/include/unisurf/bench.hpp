#pragma once

#include <json.hpp>
#include <string>

#include "unisurf/model.hpp"

namespace unisurf::bench {

struct LatencyReport {
  int height = 0;
  int width = 0;
  int warmup_iters = 0;
  int timed_iters = 0;
  double mean_ms = 0.0;       // single image
  double std_ms = 0.0;
  double batch16_ms = 0.0;    // mean wall time of one batch of 16
  double per_image_batch16_ms = 0.0;
  double throughput_batch16 = 0.0;  // images per second
  std::string hardware;
};

/// Wall-clock timing of predict() after warmup, single-image and batch 16.
/// Throws InputError when timed_iters < 1.
LatencyReport bench_latency(Model& model, int height, int width, int warmup_iters, int timed_iters);

std::string hardware_descriptor();

nlohmann::json to_json(const LatencyReport& r);

}  // namespace unisurf::bench
