#pragma once

#include "affsam/tensor.hpp"

namespace affsam {

struct LossConfig {
  double lambda_dice = 0.5;
  double lambda_bce = 1.0;
  double focal_pos_weight = 0.9;
  double focal_neg_weight = 0.1;
  double focal_gamma = 2.0;
  double dice_smooth = 1.0;

  void validate() const;
};

/// 1 - (2*sum(p*t) + s) / (sum(p) + sum(t) + s) on probabilities. Rank-3
/// inputs are treated as a batch of maps and the per-map losses averaged.
Tensor dice_loss(const Tensor& probs, const Tensor& target, double smooth = 1.0);

/// Mean binary cross-entropy on logits, in the overflow-free softplus form.
Tensor bce_loss(const Tensor& logits, const Tensor& target);

/// lambda_dice * dice(sigmoid(logits), target) + lambda_bce * bce(logits, target)
Tensor combined_mask_loss(const Tensor& logits, const Tensor& target, const LossConfig& config);

/// Class-weighted binary focal loss against a soft target map t in [0,1]:
/// mean of w * [t (1-p)^g (-log p) + (1-t) p^g (-log(1-p))],
/// w = pos*t + neg*(1-t), p = sigmoid(logit), g = focal_gamma.
Tensor weighted_focal_loss(const Tensor& logits, const Tensor& target, const LossConfig& config);

}  // namespace affsam
