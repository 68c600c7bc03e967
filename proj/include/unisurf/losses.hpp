#pragma once

#include <torch/torch.h>

#include "unisurf/config.hpp"

namespace unisurf::loss {

/// Elementwise truncated L1: max(0, th - x) on anomalous cells, max(0, th + x)
/// elsewhere.
torch::Tensor truncated_l1_terms(const torch::Tensor& logits, const torch::Tensor& mask, double th = 0.5);

/// Mean over all cells of the (optionally weighted) truncated L1 terms.
torch::Tensor truncated_l1(const torch::Tensor& logits, const torch::Tensor& mask, double th = 0.5,
                           const torch::Tensor& weights = {});

struct FocalParams {
  double alpha = 0.25;  // < 0: no class balancing
  double gamma = 2.0;
};

inline constexpr double kProbEpsilon = 1e-7;

/// Elementwise binary focal loss; probabilities are clamped to
/// [1e-7, 1 - 1e-7].
torch::Tensor focal_terms(const torch::Tensor& prob, const torch::Tensor& target, FocalParams params = {});

torch::Tensor focal(const torch::Tensor& prob, const torch::Tensor& target, FocalParams params = {});

/// Loss weights from M_gt ([h,w] or [B,1,h,w]): inside each 8-connected
/// region, 1 + (w_max - 1) * d / d_max with d the Euclidean distance to the
/// nearest normal cell; 1 on every normal cell.
torch::Tensor distance_weights(const torch::Tensor& gt_mask, double w_max = 3.0);

struct Terms {
  torch::Tensor total;      // scalar
  torch::Tensor seg;        // scalar, mean over images of gate * L_seg
  torch::Tensor cls;        // scalar, mean over images of L_cls
  torch::Tensor seg_per_image;  // [B], ungated
  torch::Tensor cls_per_image;  // [B]
};

/// L = mean_i(gate_i * (L1t_i + Lfoc_pix_i) + Lfoc_img_i).
/// `weights` may be undefined (unweighted). With `include_cls` false the
/// classification term is dropped (map-maximum scoring).
Terms total_loss(const torch::Tensor& seg_logits, const torch::Tensor& score_logits, const torch::Tensor& mask,
                 const torch::Tensor& target, const torch::Tensor& gate, const torch::Tensor& weights,
                 const LossConfig& config, bool include_cls = true);

}  // namespace unisurf::loss
