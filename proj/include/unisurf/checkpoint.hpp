#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <json.hpp>
#include <string>
#include <utility>
#include <vector>

namespace unisurf {

/// Single-file weights artifact:
///
///   8 bytes   magic "UNISURF1"
///   8 bytes   manifest length N (little endian)
///   N bytes   UTF-8 JSON manifest
///   ...       raw little-endian tensor data in manifest order
///
/// The manifest lists every tensor's name, dtype, shape, byte offset and
/// length, plus caller-supplied metadata under "meta".
struct Checkpoint {
  nlohmann::json meta;
  std::vector<std::pair<std::string, torch::Tensor>> tensors;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace unisurf
