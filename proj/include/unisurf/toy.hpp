#pragma once

#include <cstdint>
#include <filesystem>

#include "unisurf/datasets.hpp"

namespace unisurf::toy {

struct ToySpec {
  int size = 128;
  int train_normal = 60;
  int train_anomalous = 20;
  int test_normal = 60;
  int test_anomalous = 60;
  std::uint64_t seed = 0;
};

/// Procedural textures with square and scratch defects. Writes images/,
/// masks/ and manifest.tsv under `dir` and returns the samples. Training
/// anomalies carry their masks (anomalous_full).
data::Samples generate(const std::filesystem::path& dir, const ToySpec& spec = {});

}  // namespace unisurf::toy
