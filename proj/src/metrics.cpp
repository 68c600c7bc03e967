#include "unisurf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "unisurf/errors.hpp"
#include "unisurf/grid.hpp"

namespace unisurf::metrics {
namespace {

void check_sizes(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw InputError(std::string(what) + ": scores and labels differ in length");
}

template <class T>
std::vector<std::size_t> order_descending(std::span<const T> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

template <class T>
void check_finite(std::span<const T> scores, const char* what) {
  for (const auto s : scores) {
    if (!std::isfinite(static_cast<double>(s))) throw InputError(std::string(what) + ": non-finite score");
  }
}

template <class T>
double ap_impl(std::span<const T> scores, std::span<const std::uint8_t> labels) {
  check_sizes(scores.size(), labels.size(), "average_precision");
  check_finite(scores, "average_precision");
  std::size_t positives = 0;
  for (const auto l : labels) positives += l != 0;
  if (positives == 0) throw UndefinedMetricError("average_precision: no positive samples");

  const auto idx = order_descending(scores);
  double ap = 0.0;
  double prev_recall = 0.0;
  std::size_t tp = 0;
  std::size_t seen = 0;
  for (std::size_t i = 0; i < idx.size();) {
    const auto t = scores[idx[i]];
    while (i < idx.size() && scores[idx[i]] == t) {
      tp += labels[idx[i]] != 0;
      ++seen;
      ++i;
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(positives);
    const double precision = static_cast<double>(tp) / static_cast<double>(seen);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return ap;
}

}  // namespace

double auroc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  check_sizes(scores.size(), labels.size(), "auroc");
  check_finite(scores, "auroc");
  std::size_t pos = 0;
  for (const auto l : labels) pos += l != 0;
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw UndefinedMetricError("auroc: both classes must be present");

  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Midranks, doubled so that every rank stays an integer.
  std::uint64_t rank_sum2 = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    std::size_t pos_in_group = 0;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      pos_in_group += labels[idx[j]] != 0;
      ++j;
    }
    rank_sum2 += pos_in_group * (i + 1 + j);
    i = j;
  }
  const double u2 = static_cast<double>(rank_sum2) - static_cast<double>(pos * (pos + 1));
  return u2 / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

double average_precision(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  return ap_impl(scores, labels);
}

double average_precision(std::span<const float> scores, std::span<const std::uint8_t> labels) {
  return ap_impl(scores, labels);
}

double aupro(std::span<const float> maps, std::span<const std::uint8_t> masks, int n, int height, int width,
             double fpr_limit) {
  const auto plane = static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  if (n < 0 || height <= 0 || width <= 0 || maps.size() != plane * n || masks.size() != plane * n) {
    throw InputError("aupro: maps and masks must both hold n x height x width values");
  }
  if (!(fpr_limit > 0.0 && fpr_limit <= 1.0)) throw InputError("aupro: fpr_limit must lie in (0, 1]");
  check_finite(maps, "aupro");

  // Global region id per pixel (-1 for background).
  std::vector<int> region(maps.size(), -1);
  std::vector<double> region_size;
  for (int b = 0; b < n; ++b) {
    int count = 0;
    const auto labels = grid::label_components(masks.subspan(plane * b, plane), height, width, count);
    const int offset = static_cast<int>(region_size.size());
    region_size.resize(region_size.size() + count, 0.0);
    for (std::size_t i = 0; i < plane; ++i) {
      if (labels[i] > 0) {
        region[plane * b + i] = offset + labels[i] - 1;
        region_size[offset + labels[i] - 1] += 1.0;
      }
    }
  }
  const auto regions = region_size.size();
  if (regions == 0) throw UndefinedMetricError("aupro: no anomalous region in the ground truth");
  std::size_t negatives = 0;
  for (const auto r : region) negatives += r < 0;
  if (negatives == 0) throw UndefinedMetricError("aupro: no normal pixels to measure false positives");

  const auto idx = order_descending(maps);
  double area = 0.0;
  double fpr_prev = 0.0;
  double pro_prev = 0.0;
  std::size_t fp = 0;
  double overlap_sum = 0.0;
  for (std::size_t i = 0; i < idx.size();) {
    const float t = maps[idx[i]];
    while (i < idx.size() && maps[idx[i]] == t) {
      const int r = region[idx[i]];
      if (r < 0) {
        ++fp;
      } else {
        overlap_sum += 1.0 / region_size[r];
      }
      ++i;
    }
    const double fpr = static_cast<double>(fp) / static_cast<double>(negatives);
    const double pro = overlap_sum / static_cast<double>(regions);
    if (fpr >= fpr_limit) {
      const double frac = fpr > fpr_prev ? (fpr_limit - fpr_prev) / (fpr - fpr_prev) : 0.0;
      const double pro_at = pro_prev + frac * (pro - pro_prev);
      area += 0.5 * (pro_prev + pro_at) * (fpr_limit - fpr_prev);
      return area / fpr_limit;
    }
    area += 0.5 * (pro_prev + pro) * (fpr - fpr_prev);
    fpr_prev = fpr;
    pro_prev = pro;
  }
  return area / fpr_limit;
}

}  // namespace unisurf::metrics
