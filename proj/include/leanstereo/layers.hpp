#pragma once

#include <torch/torch.h>

#include <cstdint>

namespace leanstereo {

enum class Activation { kRelu, kNone };

struct ConvSpec {
  std::int64_t in = 0;
  std::int64_t out = 0;
  std::int64_t kernel = 3;
  std::int64_t stride = 1;
  std::int64_t groups = 1;
  std::int64_t dilation = 1;
};

// 2D convolution (no bias) + batch norm + optional ReLU. Padding keeps
// "same" geometry at stride 1 and halves exactly at stride 2.
class ConvBn2dImpl : public torch::nn::Module {
 public:
  ConvBn2dImpl(const ConvSpec& spec, Activation act = Activation::kRelu);
  torch::Tensor forward(const torch::Tensor& x);

  const ConvSpec& spec() const { return spec_; }

 private:
  ConvSpec spec_;
  Activation act_;
  torch::nn::Conv2d conv_{nullptr};
  torch::nn::BatchNorm2d bn_{nullptr};
};
TORCH_MODULE(ConvBn2d);

class ConvBn3dImpl : public torch::nn::Module {
 public:
  ConvBn3dImpl(const ConvSpec& spec, Activation act = Activation::kRelu);
  torch::Tensor forward(const torch::Tensor& x);

  const ConvSpec& spec() const { return spec_; }

 private:
  ConvSpec spec_;
  Activation act_;
  torch::nn::Conv3d conv_{nullptr};
  torch::nn::BatchNorm3d bn_{nullptr};
};
TORCH_MODULE(ConvBn3d);

// Depthwise k^3 conv followed by a pointwise 1^3 conv, each with norm + ReLU.
// Drop-in replacement for ConvBn3d in the separable ablation.
class SeparableConvBn3dImpl : public torch::nn::Module {
 public:
  SeparableConvBn3dImpl(const ConvSpec& spec, Activation act = Activation::kRelu);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  ConvBn3d depthwise_{nullptr};
  ConvBn3d pointwise_{nullptr};
};
TORCH_MODULE(SeparableConvBn3d);

// Stride-2 transposed 3D conv (k=3, output_padding=1) + batch norm, doubling
// every spatial dim. No activation: callers add a skip first.
class DeconvBn3dImpl : public torch::nn::Module {
 public:
  DeconvBn3dImpl(std::int64_t in, std::int64_t out);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::ConvTranspose3d deconv_{nullptr};
  torch::nn::BatchNorm3d bn_{nullptr};
};
TORCH_MODULE(DeconvBn3d);

// Bilinear resize, align_corners disabled.
torch::Tensor resize_bilinear(const torch::Tensor& x, std::int64_t height, std::int64_t width);

}  // namespace leanstereo
