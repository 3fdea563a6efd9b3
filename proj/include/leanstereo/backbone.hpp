#pragma once

#include <torch/torch.h>

#include <utility>

#include "leanstereo/config.hpp"
#include "leanstereo/layers.hpp"
#include "leanstereo/types.hpp"

namespace leanstereo {

// 3x3 stride-2 conv, then parallel (1x1 conv -> 3x3 stride-2 conv | 3x3
// stride-2 max-pool), concatenated and fused by a 3x3 conv. Level 2 output.
class StemImpl : public torch::nn::Module {
 public:
  explicit StemImpl(std::int64_t width);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  ConvBn2d entry_{nullptr};
  ConvBn2d squeeze_{nullptr};
  ConvBn2d down_{nullptr};
  ConvBn2d fuse_{nullptr};
};
TORCH_MODULE(Stem);

// Gather-and-expansion block, stride 1: 3x3 conv, expanding 3x3 depthwise
// conv, 1x1 projection, identity shortcut.
class GELayer1Impl : public torch::nn::Module {
 public:
  GELayer1Impl(std::int64_t channels, std::int64_t expansion);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  ConvBn2d gather_{nullptr};
  ConvBn2d expand_{nullptr};
  ConvBn2d project_{nullptr};
};
TORCH_MODULE(GELayer1);

// Gather-and-expansion block, stride 2. The shortcut is a stride-2 depthwise
// conv followed by a 1x1 conv.
class GELayer2Impl : public torch::nn::Module {
 public:
  GELayer2Impl(std::int64_t in, std::int64_t out, std::int64_t expansion);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  ConvBn2d gather_{nullptr};
  ConvBn2d expand_down_{nullptr};
  ConvBn2d expand_{nullptr};
  ConvBn2d project_{nullptr};
  ConvBn2d shortcut_dw_{nullptr};
  ConvBn2d shortcut_pw_{nullptr};
};
TORCH_MODULE(GELayer2);

// Eight 3x3 convs in three levels: detail features at level 3.
class ShallowBranchImpl : public torch::nn::Module {
 public:
  explicit ShallowBranchImpl(const BackboneConfig& cfg);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Sequential layers_{nullptr};
};
TORCH_MODULE(ShallowBranch);

// Stem + GE stack + global context: semantic features at level 5.
class DeepBranchImpl : public torch::nn::Module {
 public:
  explicit DeepBranchImpl(const BackboneConfig& cfg);
  torch::Tensor forward(const torch::Tensor& x);
  torch::Tensor stem_forward(const torch::Tensor& x);

 private:
  Stem stem_{nullptr};
  torch::nn::Sequential stages_{nullptr};
  torch::nn::Conv2d context_{nullptr};  // 1x1 on the pooled vector
  ConvBn2d fuse_{nullptr};
};
TORCH_MODULE(DeepBranch);

// Intermediate tensors of one bilateral aggregation pass.
struct AggregationTrace {
  torch::Tensor detail_gate;    // sigmoid(upsampled deep), level 3
  torch::Tensor semantic_gate;  // sigmoid(downsampled shallow), level 5
  torch::Tensor detail;         // shallow * detail_gate
  torch::Tensor semantic;       // deep * semantic_gate
};

// Mutual gating of the two branches; output at level 3.
class BilateralAggregationImpl : public torch::nn::Module {
 public:
  explicit BilateralAggregationImpl(std::int64_t channels);
  torch::Tensor forward(const torch::Tensor& shallow, const torch::Tensor& deep,
                        AggregationTrace* trace = nullptr);

 private:
  ConvBn2d deep_up_conv_{nullptr};
  ConvBn2d shallow_down_conv_{nullptr};
  ConvBn2d fuse_{nullptr};
};
TORCH_MODULE(BilateralAggregation);

// Weight-shared two-branch feature extractor.
class BackboneImpl : public torch::nn::Module {
 public:
  explicit BackboneImpl(const BackboneConfig& cfg);

  FeatureMap shallow_forward(const ImageBatch& img);
  FeatureMap deep_forward(const ImageBatch& img);
  // Contract: shallow at level 3, deep at level 5, equal channel counts.
  FeatureMap aggregate_features(const FeatureMap& shallow, const FeatureMap& deep,
                                AggregationTrace* trace = nullptr);
  FeatureMap forward(const ImageBatch& img);
  // Both images through the same weights. Throws ContractError on shape mismatch.
  std::pair<FeatureMap, FeatureMap> backbone_forward(const ImageBatch& left, const ImageBatch& right);

  const BackboneConfig& config() const { return cfg_; }
  DeepBranch& deep() { return deep_; }

 private:
  BackboneConfig cfg_;
  ShallowBranch shallow_{nullptr};
  DeepBranch deep_{nullptr};
  BilateralAggregation aggregation_{nullptr};
};
TORCH_MODULE(Backbone);

}  // namespace leanstereo
