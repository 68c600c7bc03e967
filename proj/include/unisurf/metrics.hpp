#pragma once

#include <cstdint>
#include <span>

namespace unisurf::metrics {

/// Mann-Whitney statistic with half credit for ties. Labels are 0/1.
double auroc(std::span<const double> scores, std::span<const std::uint8_t> labels);

/// Sum over distinct descending thresholds of (R_k - R_{k-1}) * P_k.
double average_precision(std::span<const double> scores, std::span<const std::uint8_t> labels);
double average_precision(std::span<const float> scores, std::span<const std::uint8_t> labels);

/// Area under the per-region-overlap curve up to `fpr_limit`, normalised by
/// the limit. `maps` and `masks` are n contiguous h x w grids; regions are
/// 8-connected components of each mask.
double aupro(std::span<const float> maps, std::span<const std::uint8_t> masks, int n, int height, int width,
             double fpr_limit = 0.3);

}  // namespace unisurf::metrics
