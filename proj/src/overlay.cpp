#include "unisurf/overlay.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <cmath>
#include <cstdio>
#include <cstring>

#include "unisurf/errors.hpp"

namespace unisurf {

std::string format_score(double score) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", score);
  return buf;
}

OverlayFiles write_overlay(const std::filesystem::path& out_dir, const std::string& stem, const torch::Tensor& rgb,
                           const torch::Tensor& map, double score) {
  const int h = static_cast<int>(map.size(0));
  const int w = static_cast<int>(map.size(1));
  if (rgb.dim() != 3 || rgb.size(0) != h || rgb.size(1) != w || rgb.size(2) != 3) {
    throw InputError("write_overlay: image and map sizes differ");
  }
  const auto m = map.to(torch::kFloat32).clamp(0.0, 1.0).contiguous();
  const auto im = rgb.to(torch::kFloat32).clamp(0.0, 1.0).contiguous();

  OverlayFiles files{out_dir / (stem + "_overlay.png"), out_dir / (stem + "_map.png")};

  const auto raw16 = (m * 65535.0).round().to(torch::kInt32).contiguous();
  cv::Mat raw(h, w, CV_16U);
  const auto* src = raw16.data_ptr<std::int32_t>();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) raw.at<std::uint16_t>(y, x) = static_cast<std::uint16_t>(src[y * w + x]);
  }
  if (!cv::imwrite(files.raw.string(), raw)) throw DataError("cannot write " + files.raw.string());

  cv::Mat map8(h, w, CV_8U);
  const auto map_u8 = (m * 255.0).round().to(torch::kUInt8).contiguous();
  std::memcpy(map8.data, map_u8.data_ptr<std::uint8_t>(), static_cast<std::size_t>(h) * w);
  cv::Mat heat;
  cv::applyColorMap(map8, heat, cv::COLORMAP_JET);

  const auto img_u8 = (im * 255.0).round().to(torch::kUInt8).contiguous();
  cv::Mat rgb8(h, w, CV_8UC3);
  std::memcpy(rgb8.data, img_u8.data_ptr<std::uint8_t>(), static_cast<std::size_t>(h) * w * 3);
  cv::Mat bgr;
  cv::cvtColor(rgb8, bgr, cv::COLOR_RGB2BGR);

  cv::Mat blended;
  cv::addWeighted(bgr, 0.5, heat, 0.5, 0.0, blended);

  const auto text = format_score(score);
  const double font_scale = std::max(0.4, w / 400.0);
  const int thickness = std::max(1, static_cast<int>(std::lround(font_scale * 1.5)));
  int baseline = 0;
  const auto size = cv::getTextSize(text, cv::FONT_HERSHEY_SIMPLEX, font_scale, thickness, &baseline);
  const cv::Point origin(w - size.width - 4, size.height + 4);
  cv::rectangle(blended, cv::Point(origin.x - 2, 1), cv::Point(w - 1, origin.y + baseline), cv::Scalar(0, 0, 0),
                cv::FILLED);
  cv::putText(blended, text, origin, cv::FONT_HERSHEY_SIMPLEX, font_scale, cv::Scalar(255, 255, 255), thickness,
              cv::LINE_AA);
  if (!cv::imwrite(files.overlay.string(), blended)) throw DataError("cannot write " + files.overlay.string());
  return files;
}

}  // namespace unisurf
