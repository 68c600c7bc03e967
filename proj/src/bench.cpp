#include "unisurf/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <malloc.h>
#include <thread>

#include "unisurf/errors.hpp"

namespace unisurf::bench {
namespace {

// Deterministic pseudo-image; the benchmark must not touch any RNG.
torch::Tensor probe(int batch, int height, int width) {
  const auto n = static_cast<std::int64_t>(batch) * 3 * height * width;
  return torch::sin(torch::arange(n, torch::kFloat32) * 0.01f).view({batch, 3, height, width});
}

double time_once(Model& model, const torch::Tensor& x) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto p = model.predict(x);
  (void)p.score.sum().item<float>();
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

std::string hardware_descriptor() {
  std::string cpu = "unknown cpu";
  std::ifstream in("/proc/cpuinfo");
  for (std::string line; std::getline(in, line);) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) cpu = line.substr(colon + 2);
      break;
    }
  }
  return cpu + ", " + std::to_string(std::thread::hardware_concurrency()) + " hw threads, torch intra-op threads " +
         std::to_string(at::get_num_threads());
}

LatencyReport bench_latency(Model& model, int height, int width, int warmup_iters, int timed_iters) {
  if (timed_iters < 1) throw InputError("bench_latency: timed_iters must be at least 1");
  if (warmup_iters < 0) throw InputError("bench_latency: warmup_iters must be non-negative");
  LatencyReport r;
  r.height = height;
  r.width = width;
  r.warmup_iters = warmup_iters;
  r.timed_iters = timed_iters;
  r.hardware = hardware_descriptor();

  // Keep activation buffers on the heap instead of fresh mmap pages per call.
#ifdef M_MMAP_THRESHOLD
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif

  // One batch-16 run after every fourth single-image run.
  const auto one = probe(1, height, width);
  const auto sixteen = probe(16, height, width);
  for (int i = 0; i < warmup_iters; ++i) time_once(model, one);
  for (int i = 0; i < std::min(warmup_iters, 2); ++i) time_once(model, sixteen);
  std::vector<double> single;
  std::vector<double> batched;
  for (int i = 0; i < timed_iters; ++i) {
    single.push_back(time_once(model, one));
    if (i % 4 == 3 || (timed_iters < 4 && i == timed_iters - 1)) batched.push_back(time_once(model, sixteen));
  }
  double sum = 0.0;
  for (const double v : single) sum += v;
  r.mean_ms = sum / static_cast<double>(single.size());
  double var = 0.0;
  for (const double v : single) var += (v - r.mean_ms) * (v - r.mean_ms);
  r.std_ms = single.size() > 1 ? std::sqrt(var / static_cast<double>(single.size() - 1)) : 0.0;

  double bsum = 0.0;
  for (const double v : batched) bsum += v;
  r.batch16_ms = bsum / static_cast<double>(batched.size());
  r.per_image_batch16_ms = r.batch16_ms / 16.0;
  r.throughput_batch16 = 16000.0 / r.batch16_ms;
  return r;
}

nlohmann::json to_json(const LatencyReport& r) {
  return {{"height", r.height},
          {"width", r.width},
          {"warmup_iters", r.warmup_iters},
          {"timed_iters", r.timed_iters},
          {"mean_ms", r.mean_ms},
          {"std_ms", r.std_ms},
          {"batch16_ms", r.batch16_ms},
          {"per_image_batch16_ms", r.per_image_batch16_ms},
          {"throughput_batch16", r.throughput_batch16},
          {"hardware", r.hardware}};
}

}  // namespace unisurf::bench
