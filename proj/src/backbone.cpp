#include "leanstereo/backbone.hpp"

#include "leanstereo/error.hpp"

namespace leanstereo {

namespace F = torch::nn::functional;

StemImpl::StemImpl(std::int64_t width) {
  entry_ = register_module("entry", ConvBn2d(ConvSpec{.in = 3, .out = width, .stride = 2}));
  squeeze_ = register_module("squeeze", ConvBn2d(ConvSpec{.in = width, .out = width / 2, .kernel = 1}));
  down_ = register_module("down", ConvBn2d(ConvSpec{.in = width / 2, .out = width, .stride = 2}));
  fuse_ = register_module("fuse", ConvBn2d(ConvSpec{.in = 2 * width, .out = width}));
}

torch::Tensor StemImpl::forward(const torch::Tensor& x) {
  auto y = entry_(x);
  auto conv_path = down_(squeeze_(y));
  auto pool_path = F::max_pool2d(y, F::MaxPool2dFuncOptions(3).stride(2).padding(1));
  return fuse_(torch::cat({conv_path, pool_path}, 1));
}

GELayer1Impl::GELayer1Impl(std::int64_t channels, std::int64_t expansion) {
  const auto mid = channels * expansion;
  gather_ = register_module("gather", ConvBn2d(ConvSpec{.in = channels, .out = channels}));
  expand_ = register_module("expand", ConvBn2d(ConvSpec{.in = channels, .out = mid, .groups = channels}));
  project_ = register_module("project", ConvBn2d(ConvSpec{.in = mid, .out = channels, .kernel = 1}, Activation::kNone));
}

torch::Tensor GELayer1Impl::forward(const torch::Tensor& x) {
  return torch::relu(project_(expand_(gather_(x))) + x);
}

GELayer2Impl::GELayer2Impl(std::int64_t in, std::int64_t out, std::int64_t expansion) {
  const auto mid = in * expansion;
  gather_ = register_module("gather", ConvBn2d(ConvSpec{.in = in, .out = in}));
  expand_down_ = register_module(
      "expand_down", ConvBn2d(ConvSpec{.in = in, .out = mid, .stride = 2, .groups = in}, Activation::kNone));
  expand_ = register_module("expand", ConvBn2d(ConvSpec{.in = mid, .out = mid, .groups = mid}));
  project_ = register_module("project", ConvBn2d(ConvSpec{.in = mid, .out = out, .kernel = 1}, Activation::kNone));
  shortcut_dw_ = register_module(
      "shortcut_dw", ConvBn2d(ConvSpec{.in = in, .out = in, .stride = 2, .groups = in}, Activation::kNone));
  shortcut_pw_ =
      register_module("shortcut_pw", ConvBn2d(ConvSpec{.in = in, .out = out, .kernel = 1}, Activation::kNone));
}

torch::Tensor GELayer2Impl::forward(const torch::Tensor& x) {
  auto trunk = project_(expand_(expand_down_(gather_(x))));
  return torch::relu(trunk + shortcut_pw_(shortcut_dw_(x)));
}

ShallowBranchImpl::ShallowBranchImpl(const BackboneConfig& cfg) {
  const auto& w = cfg.shallow_channels;
  layers_ = register_module(
      "layers", torch::nn::Sequential(
                    // level 1
                    ConvBn2d(ConvSpec{.in = 3, .out = w[0], .stride = 2}), ConvBn2d(ConvSpec{.in = w[0], .out = w[0]}),
                    // level 2
                    ConvBn2d(ConvSpec{.in = w[0], .out = w[1], .stride = 2}),
                    ConvBn2d(ConvSpec{.in = w[1], .out = w[1]}), ConvBn2d(ConvSpec{.in = w[1], .out = w[1]}),
                    // level 3
                    ConvBn2d(ConvSpec{.in = w[1], .out = w[2], .stride = 2}),
                    ConvBn2d(ConvSpec{.in = w[2], .out = w[2]}), ConvBn2d(ConvSpec{.in = w[2], .out = w[2]})));
}

torch::Tensor ShallowBranchImpl::forward(const torch::Tensor& x) { return layers_->forward(x); }

DeepBranchImpl::DeepBranchImpl(const BackboneConfig& cfg) {
  const auto& w = cfg.deep_channels;
  const auto e = cfg.ge_expansion;
  stem_ = register_module("stem", Stem(w[0]));
  stages_ = register_module("stages", torch::nn::Sequential(GELayer2(w[0], w[1], e), GELayer1(w[1], e),  // level 3
                                                            GELayer2(w[1], w[2], e), GELayer1(w[2], e),  // level 4
                                                            GELayer2(w[2], w[3], e), GELayer1(w[3], e),  // level 5
                                                            GELayer1(w[3], e), GELayer1(w[3], e)));
  // No norm on the pooled 1x1 map: batch statistics of a single pooled vector
  // are undefined for batch size 1.
  context_ = register_module("context", torch::nn::Conv2d(torch::nn::Conv2dOptions(w[3], w[3], 1).bias(true)));
  fuse_ = register_module("fuse", ConvBn2d(ConvSpec{.in = w[3], .out = cfg.out_channels}));
}

torch::Tensor DeepBranchImpl::stem_forward(const torch::Tensor& x) { return stem_(x); }

torch::Tensor DeepBranchImpl::forward(const torch::Tensor& x) {
  auto y = stages_->forward(stem_(x));
  auto pooled = torch::relu(context_(y.mean({2, 3}, /*keepdim=*/true)));
  return fuse_(y + pooled);
}

BilateralAggregationImpl::BilateralAggregationImpl(std::int64_t channels) {
  deep_up_conv_ =
      register_module("deep_up_conv", ConvBn2d(ConvSpec{.in = channels, .out = channels}, Activation::kNone));
  shallow_down_conv_ = register_module(
      "shallow_down_conv", ConvBn2d(ConvSpec{.in = channels, .out = channels, .stride = 2}, Activation::kNone));
  fuse_ = register_module("fuse", ConvBn2d(ConvSpec{.in = channels, .out = channels}));
}

torch::Tensor BilateralAggregationImpl::forward(const torch::Tensor& shallow, const torch::Tensor& deep,
                                                AggregationTrace* trace) {
  const auto h = shallow.size(2);
  const auto w = shallow.size(3);
  auto detail_gate = torch::sigmoid(resize_bilinear(deep_up_conv_(deep), h, w));
  auto detail = shallow * detail_gate;

  auto down = F::avg_pool2d(shallow_down_conv_(shallow), F::AvgPool2dFuncOptions(3).stride(2).padding(1));
  auto semantic_gate = torch::sigmoid(down);
  auto semantic = deep * semantic_gate;

  if (trace != nullptr) *trace = AggregationTrace{detail_gate, semantic_gate, detail, semantic};
  return fuse_(detail + resize_bilinear(semantic, h, w));
}

BackboneImpl::BackboneImpl(const BackboneConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  shallow_ = register_module("shallow", ShallowBranch(cfg_));
  deep_ = register_module("deep", DeepBranch(cfg_));
  aggregation_ = register_module("aggregation", BilateralAggregation(cfg_.out_channels));
}

FeatureMap BackboneImpl::shallow_forward(const ImageBatch& img) {
  return {shallow_(img.data()), BackboneConfig::kShallowLevel};
}

FeatureMap BackboneImpl::deep_forward(const ImageBatch& img) {
  return {deep_(img.data()), BackboneConfig::kDeepLevel};
}

FeatureMap BackboneImpl::aggregate_features(const FeatureMap& shallow, const FeatureMap& deep,
                                            AggregationTrace* trace) {
  if (shallow.level != BackboneConfig::kShallowLevel || deep.level != BackboneConfig::kDeepLevel) {
    throw ContractError("aggregate_features: expected shallow level 3 and deep level 5");
  }
  if (shallow.data.dim() != 4 || deep.data.dim() != 4 || shallow.channels() != deep.channels()) {
    throw ContractError("aggregate_features: channel mismatch between branches");
  }
  if (shallow.height() != deep.height() * 4 || shallow.width() != deep.width() * 4) {
    throw ContractError("aggregate_features: branch spatial dims are not 4x apart");
  }
  return {aggregation_(shallow.data, deep.data, trace), BackboneConfig::kOutputLevel};
}

FeatureMap BackboneImpl::forward(const ImageBatch& img) {
  return aggregate_features(shallow_forward(img), deep_forward(img));
}

std::pair<FeatureMap, FeatureMap> BackboneImpl::backbone_forward(const ImageBatch& left, const ImageBatch& right) {
  if (left.data().sizes() != right.data().sizes()) {
    throw ContractError("backbone_forward: left and right images differ in shape");
  }
  return {forward(left), forward(right)};
}

}  // namespace leanstereo
