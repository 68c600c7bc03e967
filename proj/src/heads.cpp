#include "unisurf/heads.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>

#include "unisurf/errors.hpp"

namespace unisurf {
namespace F = torch::nn::functional;

SegHeadImpl::SegHeadImpl(int channels, double leaky_slope) : slope_(leaky_slope) {
  hidden_ = register_module("hidden", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, 1)));
  output_ = register_module("output", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, 1, 1)));
}

torch::Tensor SegHeadImpl::forward(const torch::Tensor& adapted) {
  return output_(torch::leaky_relu(hidden_(adapted), slope_));
}

ClsHeadImpl::ClsHeadImpl(int feature_channels, int block_channels, ClsHeadVariant variant, double leaky_slope)
    : variant_(variant), block_channels_(block_channels), slope_(leaky_slope) {
  if (variant_ == ClsHeadVariant::MaxOfMap) return;
  const int blocks = variant_ == ClsHeadVariant::Complex ? 3 : 1;
  int in = feature_channels + (variant_ == ClsHeadVariant::NoMap ? 0 : 1);
  for (int i = 0; i < blocks; ++i) {
    const auto idx = std::to_string(i);
    convs_.push_back(register_module(
        "conv" + idx, torch::nn::Conv2d(torch::nn::Conv2dOptions(in, block_channels, 5).padding(2).bias(false))));
    norms_.push_back(register_module("bn" + idx, torch::nn::BatchNorm2d(block_channels)));
    in = block_channels;
  }
  fc_ = register_module("fc", torch::nn::Linear(pooled_length(), 1));
}

int ClsHeadImpl::pooled_length() const {
  switch (variant_) {
    case ClsHeadVariant::MaxOfMap:
      return 0;
    case ClsHeadVariant::NoMap:
      return 2 * block_channels_;
    default:
      return 2 * block_channels_ + 2;
  }
}

torch::Tensor ClsHeadImpl::forward(const torch::Tensor& features, const torch::Tensor& map_logits,
                                   bool stop_map_gradient) {
  if (features.size(0) != map_logits.size(0) || features.size(2) != map_logits.size(2) ||
      features.size(3) != map_logits.size(3)) {
    throw InputError("cls_forward: features and anomaly map are not spatially aligned");
  }
  const auto map = stop_map_gradient ? map_logits.detach() : map_logits;
  if (variant_ == ClsHeadVariant::MaxOfMap) return map.amax({1, 2, 3});

  auto x = variant_ == ClsHeadVariant::NoMap ? features : torch::cat({features, map}, 1);
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    x = torch::leaky_relu(norms_[i](convs_[i](x)), slope_);
  }
  std::vector<torch::Tensor> pooled{x.mean({2, 3}), x.amax({2, 3})};
  if (variant_ != ClsHeadVariant::NoMap) {
    pooled.push_back(map.mean({2, 3}));
    pooled.push_back(map.amax({2, 3}));
  }
  return fc_(torch::cat(pooled, 1)).squeeze(1);
}

void init_head_parameters(torch::nn::Module& module, std::uint64_t seed) {
  torch::NoGradGuard no_grad;
  auto gen = at::detail::createCPUGenerator(seed);
  for (auto& p : module.named_parameters()) {
    auto& t = p.value();
    const auto& name = p.key();
    if (name.ends_with("bias")) {
      t.zero_();
    } else if (t.dim() >= 2) {
      const auto receptive = t.dim() > 2 ? t[0][0].numel() : 1;
      const double fan_in = static_cast<double>(t.size(1) * receptive);
      const double fan_out = static_cast<double>(t.size(0) * receptive);
      t.copy_(torch::randn(t.sizes(), gen) * std::sqrt(2.0 / (fan_in + fan_out)));
    } else {
      t.fill_(1.0);  // batch-norm scale
    }
  }
}

torch::Tensor gaussian_kernel_1d(double sigma) {
  if (sigma <= 0) return torch::ones({1}, torch::kFloat64);
  const int radius = static_cast<int>(std::ceil(4.0 * sigma));
  auto k = torch::empty({2 * radius + 1}, torch::kFloat64);
  auto a = k.accessor<double, 1>();
  double total = 0;
  for (int i = -radius; i <= radius; ++i) {
    a[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    total += a[i + radius];
  }
  return k / total;
}

namespace {

inline std::int64_t reflect101(std::int64_t i, std::int64_t n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return i;
}

// Convolve along the last axis of a contiguous [rows, n] double buffer.
void convolve_rows(const double* in, double* out, std::int64_t rows, std::int64_t n, const std::vector<double>& kernel) {
  const auto radius = static_cast<std::int64_t>(kernel.size() / 2);
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* src = in + r * n;
    double* dst = out + r * n;
    for (std::int64_t j = 0; j < n; ++j) {
      double acc = 0;
      for (std::int64_t t = -radius; t <= radius; ++t) acc += kernel[t + radius] * src[reflect101(j + t, n)];
      dst[j] = acc;
    }
  }
}

}  // namespace

torch::Tensor gaussian_blur(const torch::Tensor& maps, double sigma) {
  if (maps.dim() != 3) throw InputError("gaussian_blur: expected [B,H,W]");
  if (sigma <= 0) return maps.clone();
  const auto k = gaussian_kernel_1d(sigma);
  const std::vector<double> kernel(k.data_ptr<double>(), k.data_ptr<double>() + k.numel());
  const auto b = maps.size(0), h = maps.size(1), w = maps.size(2);

  auto x = maps.to(torch::kFloat64).contiguous();
  auto tmp = torch::empty_like(x);
  convolve_rows(x.data_ptr<double>(), tmp.data_ptr<double>(), b * h, w, kernel);
  auto xt = tmp.transpose(1, 2).contiguous();
  auto out = torch::empty_like(xt);
  convolve_rows(xt.data_ptr<double>(), out.data_ptr<double>(), b * w, h, kernel);
  return out.transpose(1, 2).contiguous().to(maps.dtype());
}

torch::Tensor postprocess(const torch::Tensor& map_logits, int height, int width, double sigma) {
  if (map_logits.dim() != 4 || map_logits.size(1) != 1) throw InputError("postprocess: expected [B,1,h,w] logits");
  auto probs = torch::sigmoid(map_logits);
  if (probs.size(2) != height || probs.size(3) != width) {
    probs = F::interpolate(probs, F::InterpolateFuncOptions()
                                      .size(std::vector<std::int64_t>{height, width})
                                      .mode(torch::kBilinear)
                                      .align_corners(false));
  }
  return gaussian_blur(probs.squeeze(1), sigma).clamp(0.0, 1.0);
}

}  // namespace unisurf
