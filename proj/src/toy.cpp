#include "unisurf/toy.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <cmath>
#include <numbers>
#include <random>

#include "unisurf/errors.hpp"
#include "unisurf/hash.hpp"

namespace fs = std::filesystem;

namespace unisurf::toy {
namespace {

class Draw {
 public:
  explicit Draw(std::uint64_t seed) : engine_(seed) {}
  double uniform(double lo = 0.0, double hi = 1.0) {
    return lo + (hi - lo) * static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }
  int integer(int lo, int hi) { return lo + static_cast<int>(engine_() % static_cast<std::uint64_t>(hi - lo + 1)); }
  double normal() {
    const double u = std::max(uniform(), 1e-12);
    return std::sqrt(-2.0 * std::log(u)) * std::cos(2.0 * std::numbers::pi * uniform());
  }

 private:
  std::mt19937_64 engine_;
};

// Woven-fabric texture: crossed sinusoids with jitter plus fine grain.
cv::Mat texture(int size, Draw& d) {
  cv::Mat img(size, size, CV_32FC3);
  const double f1 = d.uniform(0.18, 0.22);
  const double f2 = d.uniform(0.18, 0.22);
  const double p1 = d.uniform(0, 2 * std::numbers::pi);
  const double p2 = d.uniform(0, 2 * std::numbers::pi);
  const double base = d.uniform(0.45, 0.55);
  const cv::Vec3f tint(0.95f, 0.9f, 0.8f);
  for (int y = 0; y < size; ++y) {
    auto* row = img.ptr<cv::Vec3f>(y);
    for (int x = 0; x < size; ++x) {
      const double v = base + 0.12 * std::sin(f1 * x + p1) * std::sin(f2 * y + p2) + 0.008 * d.normal();
      for (int c = 0; c < 3; ++c) row[x][c] = static_cast<float>(v * tint[c]);
    }
  }
  return img;
}

void add_square(cv::Mat& img, cv::Mat& mask, Draw& d) {
  const int size = img.rows;
  const int side = d.integer(12, 24);
  const int x0 = d.integer(4, size - side - 4);
  const int y0 = d.integer(4, size - side - 4);
  const double shift = (d.uniform() < 0.5 ? -1.0 : 1.0) * d.uniform(0.25, 0.35);
  const cv::Rect r(x0, y0, side, side);
  img(r) += cv::Scalar::all(shift);
  mask(r).setTo(255);
}

void add_scratch(cv::Mat& img, cv::Mat& mask, Draw& d) {
  const int size = img.rows;
  const double len = d.uniform(35, 70);
  const double angle = d.uniform(0, std::numbers::pi);
  const double cx = d.uniform(len / 2 + 4, size - len / 2 - 4);
  const double cy = d.uniform(len / 2 + 4, size - len / 2 - 4);
  const cv::Point a(static_cast<int>(cx - std::cos(angle) * len / 2), static_cast<int>(cy - std::sin(angle) * len / 2));
  const cv::Point b(static_cast<int>(cx + std::cos(angle) * len / 2), static_cast<int>(cy + std::sin(angle) * len / 2));
  const int thickness = d.integer(2, 4);
  cv::Mat line = cv::Mat::zeros(size, size, CV_8U);
  cv::line(line, a, b, 255, thickness, cv::LINE_8);
  const double shift = (d.uniform() < 0.5 ? -1.0 : 1.0) * d.uniform(0.3, 0.4);
  cv::Mat shifted = img + cv::Scalar::all(shift);
  shifted.copyTo(img, line);
  mask.setTo(255, line);
}

void save_rgb(const fs::path& path, const cv::Mat& rgb) {
  cv::Mat clipped = cv::min(cv::max(rgb, 0.0), 1.0);
  cv::Mat u8;
  clipped.convertTo(u8, CV_8UC3, 255.0);
  cv::Mat bgr;
  cv::cvtColor(u8, bgr, cv::COLOR_RGB2BGR);
  if (!cv::imwrite(path.string(), bgr)) throw DataError("cannot write " + path.string());
}

}  // namespace

data::Samples generate(const fs::path& dir, const ToySpec& spec) {
  if (spec.size < 64) throw InputError("toy images must be at least 64 pixels wide");
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");

  data::Samples samples;
  int index = 0;
  auto emit = [&](data::Split split, bool anomalous) {
    Draw d(mix_seed(spec.seed, static_cast<std::uint64_t>(index)));
    auto img = texture(spec.size, d);
    cv::Mat mask = cv::Mat::zeros(spec.size, spec.size, CV_8U);
    data::LabelledSample s;
    s.split = split;
    const std::string stem = std::string(data::to_string(split)) + "_" + std::to_string(index);
    if (anomalous) {
      if (d.uniform() < 0.5) {
        add_square(img, mask, d);
      } else {
        add_scratch(img, mask, d);
      }
      s.kind = data::LabelKind::AnomalousFull;
      s.mask_path = dir / "masks" / (stem + ".png");
      if (!cv::imwrite(s.mask_path->string(), mask)) throw DataError("cannot write " + s.mask_path->string());
    }
    s.image_path = dir / "images" / (stem + ".png");
    save_rgb(s.image_path, img);
    samples.push_back(std::move(s));
    ++index;
  };

  for (int i = 0; i < spec.train_normal; ++i) emit(data::Split::Train, false);
  for (int i = 0; i < spec.train_anomalous; ++i) emit(data::Split::Train, true);
  for (int i = 0; i < spec.test_normal; ++i) emit(data::Split::Test, false);
  for (int i = 0; i < spec.test_anomalous; ++i) emit(data::Split::Test, true);
  data::write_manifest(dir / "manifest.tsv", samples);
  return samples;
}

}  // namespace unisurf::toy
