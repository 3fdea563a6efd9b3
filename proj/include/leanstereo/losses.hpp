#pragma once

#include <torch/torch.h>

#include "leanstereo/config.hpp"
#include "leanstereo/types.hpp"

namespace leanstereo {

// True where 0 < gt < max_disparity. Zero marks unlabeled pixels.
torch::Tensor validity_mask(const torch::Tensor& gt, double max_disparity);

// Mean over masked pixels of ln(|pred - gt| + epsilon). Differentiable in
// pred. Throws EmptyMaskError when the mask selects nothing.
torch::Tensor logl1_loss(const torch::Tensor& pred, const torch::Tensor& gt, const torch::Tensor& mask,
                         double epsilon = 1.0);

// Masked mean of |e| (l1), e^2 (l2) or smooth-L1 (0.5 e^2 if |e| < 1, else
// |e| - 0.5). kind must not be logl1; throws ConfigError otherwise.
torch::Tensor baseline_loss(const torch::Tensor& pred, const torch::Tensor& gt, const torch::Tensor& mask,
                            LossKind kind);

// Dispatches on cfg.kind.
torch::Tensor disparity_loss(const torch::Tensor& pred, const torch::Tensor& gt, const torch::Tensor& mask,
                             const LossConfig& cfg);

// sum_k w_k * loss(out_k, gt, mask). Outputs with weight 0 are skipped.
torch::Tensor multi_output_loss(const HeadOutputs& outs, const torch::Tensor& gt, const torch::Tensor& mask,
                                const LossConfig& cfg);

}  // namespace leanstereo
