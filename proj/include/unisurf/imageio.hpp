#pragma once

#include <opencv2/core.hpp>
#include <torch/torch.h>

#include <filesystem>

namespace unisurf {

/// HWC float RGB -> CHW float tensor (copy).
torch::Tensor image_tensor(const cv::Mat& rgb);

/// CV_8U {0,1} mask -> [1,H,W] float tensor (copy).
torch::Tensor mask_tensor(const cv::Mat& mask);

/// Decoded, resized and ImageNet-normalised image [3,H,W].
torch::Tensor load_image_tensor(const std::filesystem::path& path, int height, int width);

/// Binarised mask [1,H,W] at image resolution.
torch::Tensor load_mask_tensor(const std::filesystem::path& path, int height, int width);

}  // namespace unisurf
