#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace unisurf::grid {

/// Connected components of the non-zero cells of a row-major [height x width]
/// grid, 8-connectivity. Background gets label 0, components 1..count.
std::vector<int> label_components(std::span<const std::uint8_t> mask, int height, int width, int& count);

/// Exact Euclidean distance from every cell to the nearest zero cell
/// (separable lower-envelope transform). Zero cells map to 0. When the grid
/// has no zero cell at all, every cell maps to +infinity.
std::vector<double> distance_to_background(std::span<const std::uint8_t> mask, int height, int width);

}  // namespace unisurf::grid
