#include "unisurf/grid.hpp"

#include <cmath>
#include <limits>

#include "unisurf/errors.hpp"

namespace unisurf::grid {

std::vector<int> label_components(std::span<const std::uint8_t> mask, int height, int width, int& count) {
  if (static_cast<std::size_t>(height) * width != mask.size()) throw InputError("label_components: size mismatch");
  std::vector<int> labels(mask.size(), 0);
  std::vector<int> stack;
  count = 0;
  for (int start = 0; start < height * width; ++start) {
    if (mask[start] == 0 || labels[start] != 0) continue;
    labels[start] = ++count;
    stack.push_back(start);
    while (!stack.empty()) {
      const int cell = stack.back();
      stack.pop_back();
      const int y = cell / width, x = cell % width;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int ny = y + dy, nx = x + dx;
          if (ny < 0 || ny >= height || nx < 0 || nx >= width) continue;
          const int n = ny * width + nx;
          if (mask[n] != 0 && labels[n] == 0) {
            labels[n] = count;
            stack.push_back(n);
          }
        }
      }
    }
  }
  return labels;
}

namespace {

constexpr double kFar = 1e20;

// Squared distance transform of a sampled function (lower envelope of parabolas).
void transform_1d(const std::vector<double>& f, std::vector<double>& d, std::vector<int>& v, std::vector<double>& z) {
  const int n = static_cast<int>(f.size());
  int k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  auto intersect = [&](int q, int p) {
    return ((f[q] + static_cast<double>(q) * q) - (f[p] + static_cast<double>(p) * p)) / (2.0 * q - 2.0 * p);
  };
  for (int q = 1; q < n; ++q) {
    double s = intersect(q, v[k]);
    while (s <= z[k]) {
      --k;
      s = intersect(q, v[k]);
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const double diff = q - v[k];
    d[q] = diff * diff + f[v[k]];
  }
}

}  // namespace

std::vector<double> distance_to_background(std::span<const std::uint8_t> mask, int height, int width) {
  if (static_cast<std::size_t>(height) * width != mask.size()) throw InputError("distance_to_background: size mismatch");
  const int longest = std::max(height, width);
  std::vector<double> grid(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) grid[i] = mask[i] != 0 ? kFar : 0.0;

  std::vector<double> f(longest), d(longest), z(longest + 1);
  std::vector<int> v(longest);
  for (int x = 0; x < width; ++x) {
    f.resize(height);
    d.resize(height);
    for (int y = 0; y < height; ++y) f[y] = grid[y * width + x];
    transform_1d(f, d, v, z);
    for (int y = 0; y < height; ++y) grid[y * width + x] = d[y];
  }
  for (int y = 0; y < height; ++y) {
    f.resize(width);
    d.resize(width);
    for (int x = 0; x < width; ++x) f[x] = grid[y * width + x];
    transform_1d(f, d, v, z);
    for (int x = 0; x < width; ++x) grid[y * width + x] = d[x];
  }
  for (auto& g : grid) g = g >= kFar / 2 ? std::numeric_limits<double>::infinity() : std::sqrt(g);
  return grid;
}

}  // namespace unisurf::grid
