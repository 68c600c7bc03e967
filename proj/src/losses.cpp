#include "unisurf/losses.hpp"

#include <algorithm>
#include <cmath>

#include "unisurf/errors.hpp"
#include "unisurf/grid.hpp"

namespace unisurf::loss {

torch::Tensor truncated_l1_terms(const torch::Tensor& logits, const torch::Tensor& mask, double th) {
  if (logits.sizes() != mask.sizes()) throw InputError("truncated_l1: logits and mask differ in shape");
  const auto m = mask.to(logits.dtype());
  const auto positive = torch::clamp_min(th - logits, 0.0);
  const auto negative = torch::clamp_min(th + logits, 0.0);
  return m * positive + (1 - m) * negative;
}

torch::Tensor truncated_l1(const torch::Tensor& logits, const torch::Tensor& mask, double th,
                           const torch::Tensor& weights) {
  auto terms = truncated_l1_terms(logits, mask, th);
  if (weights.defined()) terms = terms * weights.to(terms.dtype());
  return terms.mean();
}

torch::Tensor focal_terms(const torch::Tensor& prob, const torch::Tensor& target, FocalParams params) {
  if (prob.sizes() != target.sizes()) throw InputError("focal: prob and target differ in shape");
  const auto p = prob.clamp(kProbEpsilon, 1.0 - kProbEpsilon);
  const auto t = target.to(p.dtype());
  const auto p_t = t * p + (1 - t) * (1 - p);
  auto terms = -torch::log(p_t);
  if (params.gamma != 0) terms = terms * torch::pow(1 - p_t, params.gamma);
  if (params.alpha >= 0) terms = terms * (t * params.alpha + (1 - t) * (1 - params.alpha));
  return terms;
}

torch::Tensor focal(const torch::Tensor& prob, const torch::Tensor& target, FocalParams params) {
  return focal_terms(prob, target, params).mean();
}

torch::Tensor distance_weights(const torch::Tensor& gt_mask, double w_max) {
  if (gt_mask.dim() == 4) {
    std::vector<torch::Tensor> per_image;
    for (std::int64_t i = 0; i < gt_mask.size(0); ++i) {
      per_image.push_back(distance_weights(gt_mask[i][0], w_max).unsqueeze(0));
    }
    return torch::stack(per_image);
  }
  if (gt_mask.dim() != 2) throw InputError("distance_weights: expected [h,w] or [B,1,h,w]");
  const int h = static_cast<int>(gt_mask.size(0));
  const int w = static_cast<int>(gt_mask.size(1));
  const auto binary = gt_mask.gt(0.5).to(torch::kUInt8).contiguous();
  const std::span<const std::uint8_t> cells(binary.data_ptr<std::uint8_t>(), static_cast<std::size_t>(h) * w);

  int count = 0;
  const auto labels = grid::label_components(cells, h, w, count);
  auto weights = torch::ones({h, w}, torch::kFloat32);
  if (count == 0) return weights;
  const auto dist = grid::distance_to_background(cells, h, w);

  std::vector<double> peak(count + 1, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] > 0) peak[labels[i]] = std::max(peak[labels[i]], dist[i]);
  }
  auto* out = weights.data_ptr<float>();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 0) continue;
    const double top = peak[labels[i]];
    const double normalised = std::isinf(top) ? 1.0 : dist[i] / top;
    out[i] = static_cast<float>(1.0 + (w_max - 1.0) * normalised);
  }
  return weights;
}

Terms total_loss(const torch::Tensor& seg_logits, const torch::Tensor& score_logits, const torch::Tensor& mask,
                 const torch::Tensor& target, const torch::Tensor& gate, const torch::Tensor& weights,
                 const LossConfig& config, bool include_cls) {
  const auto b = seg_logits.size(0);
  if (mask.sizes() != seg_logits.sizes()) throw InputError("total_loss: mask/logit shape mismatch");
  if (target.size(0) != b || gate.size(0) != b) throw InputError("total_loss: per-image vectors must have length B");
  const FocalParams fp{config.focal_alpha, config.focal_gamma};

  auto l1 = truncated_l1_terms(seg_logits, mask, config.th);
  auto pix = focal_terms(torch::sigmoid(seg_logits), mask, fp);
  if (weights.defined()) {
    const auto wt = weights.to(l1.dtype());
    l1 = l1 * wt;
    pix = pix * wt;
  }
  Terms t;
  t.seg_per_image = l1.flatten(1).mean(1) + pix.flatten(1).mean(1);
  t.seg = (gate.to(t.seg_per_image.dtype()) * t.seg_per_image).mean();
  if (include_cls) {
    t.cls_per_image = focal_terms(torch::sigmoid(score_logits), target.to(score_logits.dtype()), fp);
    t.cls = t.cls_per_image.mean();
  } else {
    t.cls_per_image = torch::zeros({b}, seg_logits.options());
    t.cls = torch::zeros({}, seg_logits.options());
  }
  t.total = t.seg + t.cls;
  return t;
}

}  // namespace unisurf::loss
