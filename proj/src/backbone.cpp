#include "unisurf/backbone.hpp"

#include <ATen/CPUGeneratorImpl.h>
#include <torch/csrc/jit/serialization/pickle.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>

#include "unisurf/errors.hpp"
#include "unisurf/hash.hpp"

namespace unisurf {
namespace {

namespace nn = torch::nn;

nn::Conv2d conv(int in, int out, int kernel, int stride, int padding) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, kernel).stride(stride).padding(padding).bias(false));
}

class ResidualBlockImpl : public nn::Module {
 public:
  ResidualBlockImpl(bool bottleneck, int inplanes, int planes, int stride, int width_per_group)
      : bottleneck_(bottleneck) {
    const int expansion = bottleneck ? 4 : 1;
    if (bottleneck) {
      const int width = planes * width_per_group / 64;
      conv1_ = register_module("conv1", conv(inplanes, width, 1, 1, 0));
      bn1_ = register_module("bn1", nn::BatchNorm2d(width));
      conv2_ = register_module("conv2", conv(width, width, 3, stride, 1));
      bn2_ = register_module("bn2", nn::BatchNorm2d(width));
      conv3_ = register_module("conv3", conv(width, planes * expansion, 1, 1, 0));
      bn3_ = register_module("bn3", nn::BatchNorm2d(planes * expansion));
    } else {
      conv1_ = register_module("conv1", conv(inplanes, planes, 3, stride, 1));
      bn1_ = register_module("bn1", nn::BatchNorm2d(planes));
      conv2_ = register_module("conv2", conv(planes, planes, 3, 1, 1));
      bn2_ = register_module("bn2", nn::BatchNorm2d(planes));
    }
    if (stride != 1 || inplanes != planes * expansion) {
      downsample_ = register_module(
          "downsample", nn::Sequential(conv(inplanes, planes * expansion, 1, stride, 0), nn::BatchNorm2d(planes * expansion)));
    }
  }

  torch::Tensor forward(const torch::Tensor& x) {
    auto out = torch::relu(bn1_(conv1_(x)));
    if (bottleneck_) {
      out = torch::relu(bn2_(conv2_(out)));
      out = bn3_(conv3_(out));
    } else {
      out = bn2_(conv2_(out));
    }
    const auto identity = downsample_ ? downsample_->forward(x) : x;
    return torch::relu(out + identity);
  }

 private:
  bool bottleneck_;
  nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, conv3_{nullptr};
  nn::BatchNorm2d bn1_{nullptr}, bn2_{nullptr}, bn3_{nullptr};
  nn::Sequential downsample_{nullptr};
};
TORCH_MODULE(ResidualBlock);

int conv_out(int size, int kernel, int stride, int padding) { return (size + 2 * padding - kernel) / stride + 1; }

}  // namespace

const BackboneSpec& backbone_spec(const std::string& name) {
  static const std::map<std::string, BackboneSpec> specs = {
      {"wide_resnet50", {"wide_resnet50", true, 64, {64, 128, 256, 512}, {3, 4, 6, 3}, 128}},
      {"resnet50", {"resnet50", true, 64, {64, 128, 256, 512}, {3, 4, 6, 3}, 64}},
      {"resnet18", {"resnet18", false, 64, {64, 128, 256, 512}, {2, 2, 2, 2}, 64}},
      {"tiny_resnet", {"tiny_resnet", false, 16, {16, 32, 64, 128}, {1, 1, 1, 1}, 64}},
  };
  const auto it = specs.find(name);
  if (it == specs.end()) throw ConfigError("backbone.name", "unknown backbone '" + name + "'");
  return it->second;
}

std::pair<int, int> stage_size(int height, int width, int layer) {
  auto down = [layer](int s) {
    s = conv_out(s, 7, 2, 3);  // stem conv
    s = conv_out(s, 3, 2, 1);  // max pool
    for (int l = 2; l <= layer; ++l) s = conv_out(s, 3, 2, 1);
    return s;
  };
  return {down(height), down(width)};
}

ResNetImpl::ResNetImpl(const BackboneSpec& spec, int last_stage) : spec_(spec) {
  conv1_ = register_module("conv1", conv(3, spec.stem_channels, 7, 2, 3));
  bn1_ = register_module("bn1", nn::BatchNorm2d(spec.stem_channels));
  int inplanes = spec.stem_channels;
  for (int s = 0; s < last_stage; ++s) {
    nn::Sequential stage;
    const int stride = s == 0 ? 1 : 2;
    for (int b = 0; b < spec.blocks[s]; ++b) {
      stage->push_back(ResidualBlock(spec.bottleneck, inplanes, spec.planes[s], b == 0 ? stride : 1, spec.width_per_group));
      inplanes = spec.stage_channels(s + 1);
    }
    stages_.push_back(register_module("layer" + std::to_string(s + 1), stage));
  }
}

std::vector<torch::Tensor> ResNetImpl::forward_stages(const torch::Tensor& x, const std::vector<int>& stages) {
  std::vector<torch::Tensor> out;
  auto h = torch::relu(bn1_(conv1_(x)));
  h = torch::max_pool2d(h, 3, 2, 1);
  std::size_t next = 0;
  for (int s = 0; s < last_stage() && next < stages.size(); ++s) {
    h = stages_[s]->forward(h);
    if (stages[next] == s + 1) {
      out.push_back(h);
      ++next;
    }
  }
  return out;
}

void init_backbone_random(ResNetImpl& net, std::uint64_t seed) {
  torch::NoGradGuard no_grad;
  auto gen = at::detail::createCPUGenerator(seed);
  for (auto& m : net.modules(/*include_self=*/false)) {
    if (auto* c = m->as<nn::Conv2d>()) {
      auto& w = c->weight;
      const double fan_out = static_cast<double>(w.size(0) * w.size(2) * w.size(3));
      w.copy_(torch::randn(w.sizes(), gen) * std::sqrt(2.0 / fan_out));
    } else if (auto* bn = m->as<nn::BatchNorm2d>()) {
      bn->weight.fill_(1.0);
      bn->bias.zero_();
      bn->running_mean.zero_();
      bn->running_var.fill_(1.0);
    }
  }
}

std::filesystem::path resolve_weights_path(const BackboneConfig& config) {
  namespace fs = std::filesystem;
  std::vector<fs::path> candidates;
  const char* cache = std::getenv("UNISURF_CACHE");
  if (!config.weights_path.empty()) {
    candidates.emplace_back(config.weights_path);
    if (cache != nullptr && fs::path(config.weights_path).is_relative()) {
      candidates.push_back(fs::path(cache) / config.weights_path);
    }
  } else if (cache != nullptr) {
    candidates.push_back(fs::path(cache) / (config.name + ".pth"));
    candidates.push_back(fs::path(cache) / (config.name + ".pt"));
  }
  for (const auto& c : candidates) {
    if (fs::is_regular_file(c)) return c;
  }
  if (candidates.empty()) {
    throw ConfigError("backbone.weights_path",
                      "no pretrained weights configured (set backbone.weights_path, UNISURF_CACHE, or "
                      "backbone.random_init=true)");
  }
  throw ConfigError("backbone.weights_path", "weight file not found: " + candidates.front().string());
}

void load_backbone_weights(ResNetImpl& net, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("backbone.weights_path", "cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  c10::IValue loaded;
  try {
    loaded = torch::pickle_load(bytes);
  } catch (const std::exception& e) {
    throw ConfigError("backbone.weights_path", "unreadable weight file " + path.string() + ": " + e.what());
  }
  if (!loaded.isGenericDict()) {
    throw ConfigError("backbone.weights_path", "weight file must hold a plain dict of tensors");
  }
  std::map<std::string, torch::Tensor> tensors;
  for (const auto& entry : loaded.toGenericDict()) {
    if (entry.key().isString() && entry.value().isTensor()) {
      tensors.emplace(entry.key().toStringRef(), entry.value().toTensor());
    }
  }

  torch::NoGradGuard no_grad;
  auto copy_into = [&](const std::string& name, torch::Tensor& target) {
    const auto it = tensors.find(name);
    if (it == tensors.end()) throw ConfigError("backbone.weights_path", "weight file lacks tensor '" + name + "'");
    if (it->second.sizes() != target.sizes()) {
      throw ConfigError("backbone.weights_path", "shape mismatch for '" + name + "'");
    }
    target.copy_(it->second.to(target.dtype()));
  };
  for (auto& p : net.named_parameters()) copy_into(p.key(), p.value());
  for (auto& b : net.named_buffers()) {
    if (b.key().ends_with("num_batches_tracked")) continue;
    copy_into(b.key(), b.value());
  }
}

std::vector<torch::Tensor> extract_layers(ResNetImpl& net, const torch::Tensor& images, const std::vector<int>& layers) {
  if (images.dim() != 4 || images.size(1) != 3) throw InputError("extract_layers: expected [B,3,H,W] images");
  if (images.size(2) % 8 != 0 || images.size(3) % 8 != 0) {
    throw InputError("extract_layers: image height and width must be multiples of 8");
  }
  if (layers.empty()) throw InputError("extract_layers: empty layer set");
  for (int l : layers) {
    if (l < 1 || l > net.last_stage()) throw InputError("extract_layers: layer " + std::to_string(l) + " not built");
  }
  torch::NoGradGuard no_grad;
  return net.forward_stages(images, layers);
}

torch::Tensor upscale_concat(const std::vector<torch::Tensor>& grids, bool upscale) {
  if (grids.empty()) throw InputError("upscale_concat: empty input");
  std::int64_t h0 = 0, w0 = 0;
  for (const auto& g : grids) {
    if (g.dim() != 4) throw InputError("upscale_concat: expected [B,C,H,W] grids");
    if (g.size(2) * g.size(3) > h0 * w0) {
      h0 = g.size(2);
      w0 = g.size(3);
    }
  }
  const std::int64_t factor = upscale ? 2 : 1;
  const std::vector<std::int64_t> target{h0 * factor, w0 * factor};
  std::vector<torch::Tensor> resized;
  resized.reserve(grids.size());
  for (const auto& g : grids) {
    if (g.size(0) != grids.front().size(0)) throw InputError("upscale_concat: batch size mismatch");
    if (g.size(2) == target[0] && g.size(3) == target[1]) {
      resized.push_back(g);
    } else {
      resized.push_back(torch::nn::functional::interpolate(
          g, torch::nn::functional::InterpolateFuncOptions().size(target).mode(torch::kBilinear).align_corners(false)));
    }
  }
  return torch::cat(resized, 1);
}

torch::Tensor neighborhood_pool(const torch::Tensor& grid) {
  return torch::avg_pool2d(grid, /*kernel_size=*/3, /*stride=*/1, /*padding=*/1, /*ceil_mode=*/false,
                           /*count_include_pad=*/true);
}

FeatureExtractor::FeatureExtractor(const BackboneConfig& config, bool upscale)
    : layers_(config.layers), upscale_(upscale) {
  const auto& spec = backbone_spec(config.name);
  if (layers_.empty()) throw ConfigError("backbone.layers", "must not be empty");
  net_ = ResNet(spec, layers_.back());
  if (config.random_init) {
    init_backbone_random(*net_, config.init_seed);
  } else {
    load_backbone_weights(*net_, resolve_weights_path(config));
  }
  net_->eval();
  for (auto& p : net_->parameters()) p.set_requires_grad(false);
}

torch::Tensor FeatureExtractor::operator()(const torch::Tensor& images) {
  torch::NoGradGuard no_grad;
  return neighborhood_pool(upscale_concat(extract_layers(*net_, images, layers_), upscale_));
}

int FeatureExtractor::channels() const {
  int c = 0;
  for (int l : layers_) c += net_->spec().stage_channels(l);
  return c;
}

std::pair<int, int> FeatureExtractor::feature_size(int image_height, int image_width) const {
  const auto [h, w] = stage_size(image_height, image_width, layers_.front());
  const int f = upscale_ ? 2 : 1;
  return {h * f, w * f};
}

std::string FeatureExtractor::checksum() const {
  Sha256 h;
  auto feed = [&h](const std::string& name, const torch::Tensor& t) {
    const auto c = t.contiguous();
    h.update(name);
    h.update(std::span(static_cast<const std::byte*>(c.data_ptr()), c.numel() * c.element_size()));
  };
  for (const auto& p : net_->named_parameters()) feed(p.key(), p.value());
  for (const auto& b : net_->named_buffers()) feed(b.key(), b.value());
  return h.finish();
}

AdaptorImpl::AdaptorImpl(int channels) {
  proj_ = register_module("proj", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, 1).bias(true)));
  reset(0);
}

void AdaptorImpl::reset(std::uint64_t seed, double perturbation_std) {
  torch::NoGradGuard no_grad;
  auto gen = at::detail::createCPUGenerator(seed);
  const auto c = proj_->weight.size(0);
  auto w = torch::eye(c).reshape({c, c, 1, 1});
  if (perturbation_std > 0) w = w + torch::randn({c, c, 1, 1}, gen) * perturbation_std;
  proj_->weight.copy_(w);
  proj_->bias.zero_();
}

torch::Tensor AdaptorImpl::forward(const torch::Tensor& features) { return proj_(features); }

}  // namespace unisurf
