#pragma once

#include <torch/torch.h>

#include <array>
#include <atomic>
#include <variant>

#include "leanstereo/backbone.hpp"
#include "leanstereo/config.hpp"
#include "leanstereo/cost_volume.hpp"
#include "leanstereo/layers.hpp"
#include "leanstereo/types.hpp"

namespace leanstereo {

// Four stride-1 3D convs in two residual pairs; output at base width.
class PreAggregateImpl : public torch::nn::Module {
 public:
  PreAggregateImpl(std::int64_t in, std::int64_t width);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Sequential first_{nullptr};
  torch::nn::Sequential second_{nullptr};
};
TORCH_MODULE(PreAggregate);

// Internal activations of one hourglass pass, for inspection in tests.
struct HourglassTrace {
  torch::Tensor half;        // after the first stride-2 stage
  torch::Tensor bottleneck;  // after the second stride-2 stage
};

// 3D encoder-decoder: two stride-2 stages (w -> 2w -> 4w) and two transposed
// convs back up, each summed with a 1x1x1 skip before the ReLU. D, H and W of
// the input must be divisible by 4.
class HourglassImpl : public torch::nn::Module {
 public:
  HourglassImpl(std::int64_t width, bool separable);
  torch::Tensor forward(const torch::Tensor& x, HourglassTrace* trace = nullptr);

 private:
  torch::nn::AnyModule down1_, conv2_, down3_, conv4_;
  DeconvBn3d up5_{nullptr};
  DeconvBn3d up6_{nullptr};
  ConvBn3d skip1_{nullptr};
  ConvBn3d skip2_{nullptr};
};
TORCH_MODULE(Hourglass);

// Two 3D convs down to one channel: per-bin matching logits.
class RegressionHeadImpl : public torch::nn::Module {
 public:
  explicit RegressionHeadImpl(std::int64_t width);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  ConvBn3d conv_{nullptr};
  torch::nn::Conv3d project_{nullptr};
};
TORCH_MODULE(RegressionHead);

// Trilinearly resizes [B, 1, D', H', W'] logits to [B, max_disparity, H, W]
// and applies a softmax over the disparity axis.
torch::Tensor disparity_probabilities(const torch::Tensor& logits, std::int64_t max_disparity, std::int64_t height,
                                      std::int64_t width);

// Expected disparity sum_d d * p_d over the disparity axis of [B, D, H, W].
DisparityField soft_argmax(const torch::Tensor& probabilities);

enum class ForwardMode { kTrain, kEval };

class LeanStereoNetImpl : public torch::nn::Module {
 public:
  explicit LeanStereoNetImpl(const ModelConfig& cfg);

  CostVolume pre_aggregate(const CostVolume& vol);
  CostVolume hourglass_forward(int index, const CostVolume& vol, HourglassTrace* trace = nullptr);
  DisparityField regress_disparity(int head, const CostVolume& vol, std::int64_t height, std::int64_t width);

  // Throws ContractError if the two images differ in shape.
  CostVolume build_volume(const ImageBatch& left, const ImageBatch& right);
  HeadOutputs forward_train(const ImageBatch& left, const ImageBatch& right);
  // Out2 only; the Out0/Out1 heads are not evaluated.
  DisparityField infer(const ImageBatch& left, const ImageBatch& right);
  std::variant<HeadOutputs, DisparityField> model_forward(const ImageBatch& left, const ImageBatch& right,
                                                          ForwardMode mode);

  const ModelConfig& config() const { return cfg_; }
  Backbone& backbone() { return backbone_; }
  CostVolumeBuilder& cost_volume() { return cost_volume_; }
  // Parameters of pre-aggregation, both hourglasses and the three heads.
  std::vector<torch::Tensor> aggregation_parameters() const;

  // Number of regression-head evaluations since construction (or reset).
  std::int64_t head_evaluations() const { return head_evaluations_.load(); }
  void reset_head_evaluations() { head_evaluations_.store(0); }

 private:
  void check_volume(const CostVolume& vol) const;

  ModelConfig cfg_;
  Backbone backbone_{nullptr};
  CostVolumeBuilder cost_volume_{nullptr};
  PreAggregate pre_{nullptr};
  std::array<Hourglass, 2> hourglasses_{Hourglass{nullptr}, Hourglass{nullptr}};
  std::array<RegressionHead, 3> heads_{RegressionHead{nullptr}, RegressionHead{nullptr}, RegressionHead{nullptr}};
  std::atomic<std::int64_t> head_evaluations_{0};
};
TORCH_MODULE(LeanStereoNet);

// Learnable scalar count of a module.
std::int64_t count_parameters(const torch::nn::Module& module);
std::int64_t count_parameters(const std::vector<torch::Tensor>& params);

}  // namespace leanstereo
