#include "leanstereo/layers.hpp"

namespace leanstereo {

namespace F = torch::nn::functional;

ConvBn2dImpl::ConvBn2dImpl(const ConvSpec& spec, Activation act) : spec_(spec), act_(act) {
  const auto pad = spec.dilation * (spec.kernel / 2);
  conv_ = register_module("conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(spec.in, spec.out, spec.kernel)
                                                        .stride(spec.stride)
                                                        .padding(pad)
                                                        .dilation(spec.dilation)
                                                        .groups(spec.groups)
                                                        .bias(false)));
  bn_ = register_module("bn", torch::nn::BatchNorm2d(spec.out));
}

torch::Tensor ConvBn2dImpl::forward(const torch::Tensor& x) {
  auto y = bn_(conv_(x));
  return act_ == Activation::kRelu ? torch::relu(y) : y;
}

ConvBn3dImpl::ConvBn3dImpl(const ConvSpec& spec, Activation act) : spec_(spec), act_(act) {
  const auto pad = spec.dilation * (spec.kernel / 2);
  conv_ = register_module("conv", torch::nn::Conv3d(torch::nn::Conv3dOptions(spec.in, spec.out, spec.kernel)
                                                        .stride(spec.stride)
                                                        .padding(pad)
                                                        .dilation(spec.dilation)
                                                        .groups(spec.groups)
                                                        .bias(false)));
  bn_ = register_module("bn", torch::nn::BatchNorm3d(spec.out));
}

torch::Tensor ConvBn3dImpl::forward(const torch::Tensor& x) {
  auto y = bn_(conv_(x));
  return act_ == Activation::kRelu ? torch::relu(y) : y;
}

SeparableConvBn3dImpl::SeparableConvBn3dImpl(const ConvSpec& spec, Activation act) {
  ConvSpec dw = spec;
  dw.out = spec.in;
  dw.groups = spec.in;
  ConvSpec pw{.in = spec.in, .out = spec.out, .kernel = 1};
  depthwise_ = register_module("depthwise", ConvBn3d(dw, Activation::kRelu));
  pointwise_ = register_module("pointwise", ConvBn3d(pw, act));
}

torch::Tensor SeparableConvBn3dImpl::forward(const torch::Tensor& x) { return pointwise_(depthwise_(x)); }

DeconvBn3dImpl::DeconvBn3dImpl(std::int64_t in, std::int64_t out) {
  deconv_ = register_module(
      "deconv", torch::nn::ConvTranspose3d(
                    torch::nn::ConvTranspose3dOptions(in, out, 3).stride(2).padding(1).output_padding(1).bias(false)));
  bn_ = register_module("bn", torch::nn::BatchNorm3d(out));
}

torch::Tensor DeconvBn3dImpl::forward(const torch::Tensor& x) { return bn_(deconv_(x)); }

torch::Tensor resize_bilinear(const torch::Tensor& x, std::int64_t height, std::int64_t width) {
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .size(std::vector<std::int64_t>{height, width})
                               .mode(torch::kBilinear)
                               .align_corners(false));
}

}  // namespace leanstereo
