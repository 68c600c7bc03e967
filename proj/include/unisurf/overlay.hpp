#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <string>

namespace unisurf {

/// Score as rendered on overlays and written to JSON.
std::string format_score(double score);

struct OverlayFiles {
  std::filesystem::path overlay;  // <stem>_overlay.png
  std::filesystem::path raw;      // <stem>_map.png, 16-bit grayscale
};

/// JET heat map of `map` ([H,W] in [0,1]) blended onto the RGB image
/// (HWC float in [0,1], same size), with the score in the top-right corner.
OverlayFiles write_overlay(const std::filesystem::path& out_dir, const std::string& stem, const torch::Tensor& rgb,
                           const torch::Tensor& map, double score);

}  // namespace unisurf
