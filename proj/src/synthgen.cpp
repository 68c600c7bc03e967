#include "unisurf/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "unisurf/errors.hpp"
#include "unisurf/hash.hpp"

namespace unisurf::synth {
namespace {

inline double fade(double t) { return t * t * t * (t * (t * 6 - 15) + 10); }

int lattice_resolution(int dim, RandomStream& rng) {
  int res = 1 << rng.uniform_int(1, 6);
  while (res > 2 && res > dim / 2) res /= 2;
  return res;
}

void require_same_grid(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (a.sizes() != b.sizes()) throw InputError(std::string(what) + ": mask dimensions differ");
}

}  // namespace

torch::Tensor perlin_field(int height, int width, RandomStream& rng, int& res_y, int& res_x) {
  if (height < 8 || width < 8) throw InputError("perlin_field: grid smaller than one lattice cell (min 8x8)");
  res_y = lattice_resolution(height, rng);
  res_x = lattice_resolution(width, rng);

  // Unit gradients on the (res_y+1) x (res_x+1) lattice.
  const int gw = res_x + 1;
  std::vector<double> gx((res_y + 1) * gw), gy((res_y + 1) * gw);
  for (std::size_t i = 0; i < gx.size(); ++i) {
    const double angle = 2.0 * std::numbers::pi * rng.uniform();
    gx[i] = std::cos(angle);
    gy[i] = std::sin(angle);
  }

  auto field = torch::empty({height, width}, torch::kFloat32);
  auto acc = field.accessor<float, 2>();
  for (int i = 0; i < height; ++i) {
    const double v = static_cast<double>(i) * res_y / height;
    const int cy = static_cast<int>(v);
    const double ty = v - cy;
    for (int j = 0; j < width; ++j) {
      const double u = static_cast<double>(j) * res_x / width;
      const int cx = static_cast<int>(u);
      const double tx = u - cx;
      auto dot = [&](int oy, int ox) {
        const int g = (cy + oy) * gw + (cx + ox);
        return gx[g] * (tx - ox) + gy[g] * (ty - oy);
      };
      const double n00 = dot(0, 0), n01 = dot(0, 1), n10 = dot(1, 0), n11 = dot(1, 1);
      const double fx = fade(tx), fy = fade(ty);
      const double top = n00 + fx * (n01 - n00);
      const double bottom = n10 + fx * (n11 - n10);
      const double value = std::numbers::sqrt2 * (top + fy * (bottom - top));
      acc[i][j] = static_cast<float>(std::clamp(value, -1.0, 1.0));
    }
  }
  return field;
}

torch::Tensor perlin_field(int height, int width, RandomStream& rng) {
  int ry = 0, rx = 0;
  return perlin_field(height, width, rng, ry, rx);
}

torch::Tensor threshold_mask(const torch::Tensor& field, double tau) { return field.gt(tau).to(torch::kFloat32); }

torch::Tensor synth_mask(const torch::Tensor& perlin_mask, const torch::Tensor& gt_mask) {
  require_same_grid(perlin_mask, gt_mask, "synth_mask");
  return perlin_mask * (1.0f - gt_mask);
}

Perturbed inject(const torch::Tensor& features, const torch::Tensor& adapted, const torch::Tensor& mask, double sigma,
                 RandomStream& rng) {
  if (sigma < 0) throw InputError("inject: sigma must be >= 0");
  if (features.sizes() != adapted.sizes()) throw InputError("inject: feature maps differ in shape");
  if (mask.size(-1) != features.size(-1) || mask.size(-2) != features.size(-2)) {
    throw InputError("inject: mask is not aligned with the features");
  }
  const auto m = mask.to(features.dtype());
  auto noise_f = rng.normal(features.sizes(), sigma).to(features.dtype()) * m;
  auto noise_a = rng.normal(adapted.sizes(), sigma).to(adapted.dtype()) * m;
  return {features + noise_f, adapted + noise_a};
}

Assembled assemble(const torch::Tensor& synth, const torch::Tensor& gt) {
  require_same_grid(synth, gt, "assemble");
  auto m = torch::maximum(synth, gt);
  return {m, m.max().item<float>() > 0.5f};
}

Options options_from(const RunConfig& config) {
  Options o;
  o.sigma = config.synth.sigma;
  o.threshold = config.perlin_threshold();
  o.strategy = config.ablate.anomaly_strategy;
  o.overlap_allowed = config.ablate.overlap_allowed;
  o.clean_copy_probability = config.synth.clean_copy_probability;
  return o;
}

PerturbedBatch duplicate_and_perturb(const torch::Tensor& features, const torch::Tensor& adapted,
                                     const torch::Tensor& gt_masks, const std::vector<bool>& anomalous,
                                     const Options& options, RandomStream& rng) {
  if (features.dim() != 4 || features.size(0) == 0) throw InputError("duplicate_and_perturb: empty batch");
  const auto b = features.size(0);
  const auto h = static_cast<int>(features.size(2));
  const auto w = static_cast<int>(features.size(3));
  if (gt_masks.sizes() != torch::IntArrayRef({b, 1, h, w})) {
    throw InputError("duplicate_and_perturb: gt masks must be [B,1,h,w] at feature resolution");
  }
  if (static_cast<std::int64_t>(anomalous.size()) != b) throw InputError("duplicate_and_perturb: label count mismatch");

  const std::uint64_t base = rng.next_u64();
  std::vector<torch::Tensor> pf, pa, masks, synths, targets;
  PerturbedBatch out;
  for (std::int64_t k = 0; k < 2 * b; ++k) {
    const auto src = k % b;
    RandomStream item(mix_seed(base, static_cast<std::uint64_t>(k)));
    const auto gt = gt_masks[src][0];

    torch::Tensor perlin;
    switch (options.strategy) {
      case AnomalyStrategy::Masked:
        if (!anomalous[src] && item.bernoulli(options.clean_copy_probability)) {
          perlin = torch::zeros({h, w});
        } else {
          perlin = threshold_mask(perlin_field(h, w, item), options.threshold);
        }
        break;
      case AnomalyStrategy::SimpleNet:
        perlin = k < b ? torch::zeros({h, w}) : torch::ones({h, w});
        break;
      case AnomalyStrategy::None:
        perlin = torch::zeros({h, w});
        break;
    }
    const auto synth = options.overlap_allowed ? perlin : synth_mask(perlin, gt);
    const auto noisy = inject(features[src], adapted[src], synth, options.sigma, item);
    const auto assembled = assemble(synth, gt);

    pf.push_back(noisy.features);
    pa.push_back(noisy.adapted);
    masks.push_back(assembled.mask.unsqueeze(0));
    synths.push_back(synth.unsqueeze(0));
    targets.push_back(torch::full({1}, (assembled.anomalous || anomalous[src]) ? 1.0f : 0.0f));
    out.source.push_back(static_cast<int>(src));
  }
  out.features = torch::stack(pf);
  out.adapted = torch::stack(pa);
  out.mask = torch::stack(masks);
  out.synth = torch::stack(synths);
  out.gt = torch::cat({gt_masks, gt_masks});
  out.target = torch::cat(targets);
  return out;
}

torch::Tensor downsample_mask(const torch::Tensor& mask, int height, int width) {
  if (mask.dim() != 4) throw InputError("downsample_mask: expected [B,1,H,W]");
  if (mask.size(2) == height && mask.size(3) == width) return mask.to(torch::kFloat32);
  return std::get<0>(torch::adaptive_max_pool2d(mask.to(torch::kFloat32), {height, width}));
}

}  // namespace unisurf::synth
