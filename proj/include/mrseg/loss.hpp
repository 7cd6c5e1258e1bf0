#pragma once

#include <vector>

#include "mrseg/tensor.hpp"

namespace mrseg {

struct LossConfig {
  double alpha = 0.3;  // dice weight
  double gamma = 0.7;  // top-k cross-entropy weight
  double topk_fraction = 0.10;
  double dice_eps = 1e-5;

  void validate() const;
};

/// 1 - mean over foreground classes c >= 1 of (2 sum p_c y_c + eps) / (sum p_c + sum y_c + eps).
/// `probs` is [C, d, h, w]; `target` is [1, d, h, w] holding labels in [0, C).
Tensor dice_loss(const Tensor& probs, const Tensor& target, double eps = 1e-5);

/// Per-voxel losses w * -log p_target (the probability floored at 1e-12).
std::vector<double> weighted_ce_voxels(const Tensor& probs, const Tensor& target, const Tensor& weights);

/// Mean of the ceil(k N) largest per-voxel weighted cross-entropies; equal
/// losses at the cut are taken in voxel-index order. InvalidK unless k in (0, 1].
Tensor topk_weighted_ce(const Tensor& probs, const Tensor& target, const Tensor& weights, double k);

Tensor combined_loss(const Tensor& probs, const Tensor& target, const Tensor& weights, const LossConfig& cfg = {});

/// Number of voxels kept by the top-k reduction.
std::size_t topk_count(std::size_t n, double k);

}  // namespace mrseg
