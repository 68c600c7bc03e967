#include "unisurf/imageio.hpp"

#include "unisurf/datasets.hpp"
#include "unisurf/errors.hpp"
#include "unisurf/model.hpp"

namespace unisurf {

torch::Tensor image_tensor(const cv::Mat& rgb) {
  if (rgb.type() != CV_32FC3) throw InputError("image_tensor expects a CV_32FC3 matrix");
  const cv::Mat c = rgb.isContinuous() ? rgb : rgb.clone();
  return torch::from_blob(const_cast<float*>(c.ptr<float>()), {c.rows, c.cols, 3}, torch::kFloat32)
      .permute({2, 0, 1})
      .contiguous()
      .clone();
}

torch::Tensor mask_tensor(const cv::Mat& mask) {
  if (mask.type() != CV_8U) throw InputError("mask_tensor expects a CV_8U matrix");
  const cv::Mat c = mask.isContinuous() ? mask : mask.clone();
  return torch::from_blob(const_cast<std::uint8_t*>(c.ptr<std::uint8_t>()), {1, c.rows, c.cols}, torch::kUInt8)
      .to(torch::kFloat32);
}

torch::Tensor load_image_tensor(const std::filesystem::path& path, int height, int width) {
  return normalize_imagenet(image_tensor(data::load_rgb(path, height, width))).squeeze(0);
}

torch::Tensor load_mask_tensor(const std::filesystem::path& path, int height, int width) {
  return mask_tensor(data::load_mask(path, height, width));
}

}  // namespace unisurf
