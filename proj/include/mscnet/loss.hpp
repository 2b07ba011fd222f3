#pragma once

#include "mscnet/tensor.hpp"

namespace mscnet {

// Composite training objective: pixel-wise BCE plus a region-level IoU term.
struct LossConfig {
    real lambda = real(0.6);      // weight of the IoU term
    real clamp_eps = real(1e-7);  // probabilities clamped to [eps, 1-eps] before logs
    bool sum_reduction = false;   // reduce BCE by sum instead of the default pixel mean
};

// Binary cross-entropy between predicted probabilities and targets in [0,1].
// Probabilities are clamped to [clamp_eps, 1-clamp_eps]; the gradient is zero
// where the clamp saturates. Reduction is the mean over every element unless
// sum_reduction is set. Differentiable wrt both arguments.
Tensor bce_loss(const Tensor& pred, const Tensor& target, real clamp_eps = real(1e-7),
                bool sum_reduction = false);

// Soft-IoU loss: per batch item 1 - (sum(p*g) + 1) / (sum(p + g - p*g) + 1),
// averaged over the batch (dim 0). Symmetric in its arguments and
// differentiable wrt both.
Tensor iou_loss(const Tensor& pred, const Tensor& target);

// bce_loss + lambda * iou_loss, as a taped scalar.
Tensor total_loss(const Tensor& pred, const Tensor& target, const LossConfig& cfg = {});

}  // namespace mscnet
