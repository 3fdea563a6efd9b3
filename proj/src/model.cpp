#include "leanstereo/model.hpp"

#include "leanstereo/error.hpp"

namespace leanstereo {

namespace F = torch::nn::functional;

PreAggregateImpl::PreAggregateImpl(std::int64_t in, std::int64_t width) {
  first_ = register_module("first", torch::nn::Sequential(ConvBn3d(ConvSpec{.in = in, .out = width}),
                                                          ConvBn3d(ConvSpec{.in = width, .out = width})));
  second_ = register_module(
      "second", torch::nn::Sequential(ConvBn3d(ConvSpec{.in = width, .out = width}),
                                      ConvBn3d(ConvSpec{.in = width, .out = width}, Activation::kNone)));
}

torch::Tensor PreAggregateImpl::forward(const torch::Tensor& x) {
  auto y = first_->forward(x);
  return second_->forward(y) + y;
}

namespace {

torch::nn::AnyModule conv3d_block(const ConvSpec& spec, bool separable) {
  if (separable) return torch::nn::AnyModule(SeparableConvBn3d(spec));
  return torch::nn::AnyModule(ConvBn3d(spec));
}

}  // namespace

HourglassImpl::HourglassImpl(std::int64_t width, bool separable) {
  const auto w = width;
  down1_ = conv3d_block(ConvSpec{.in = w, .out = 2 * w, .stride = 2}, separable);
  conv2_ = conv3d_block(ConvSpec{.in = 2 * w, .out = 2 * w}, separable);
  down3_ = conv3d_block(ConvSpec{.in = 2 * w, .out = 4 * w, .stride = 2}, separable);
  conv4_ = conv3d_block(ConvSpec{.in = 4 * w, .out = 4 * w}, separable);
  register_module("down1", down1_.ptr());
  register_module("conv2", conv2_.ptr());
  register_module("down3", down3_.ptr());
  register_module("conv4", conv4_.ptr());
  up5_ = register_module("up5", DeconvBn3d(4 * w, 2 * w));
  up6_ = register_module("up6", DeconvBn3d(2 * w, w));
  skip1_ = register_module("skip1", ConvBn3d(ConvSpec{.in = w, .out = w, .kernel = 1}, Activation::kNone));
  skip2_ = register_module("skip2", ConvBn3d(ConvSpec{.in = 2 * w, .out = 2 * w, .kernel = 1}, Activation::kNone));
}

torch::Tensor HourglassImpl::forward(const torch::Tensor& x, HourglassTrace* trace) {
  for (int dim = 2; dim < 5; ++dim) {
    if (x.size(dim) % 4 != 0) {
      throw ConfigError("hourglass: disparity/height/width of the volume must be divisible by 4");
    }
  }
  auto half = conv2_.forward<torch::Tensor>(down1_.forward<torch::Tensor>(x));
  auto quarter = conv4_.forward<torch::Tensor>(down3_.forward<torch::Tensor>(half));
  if (trace != nullptr) *trace = HourglassTrace{half, quarter};
  auto up = torch::relu(up5_(quarter) + skip2_(half));
  return torch::relu(up6_(up) + skip1_(x));
}

RegressionHeadImpl::RegressionHeadImpl(std::int64_t width) {
  conv_ = register_module("conv", ConvBn3d(ConvSpec{.in = width, .out = width}));
  project_ = register_module("project",
                             torch::nn::Conv3d(torch::nn::Conv3dOptions(width, 1, 3).padding(1).bias(false)));
}

torch::Tensor RegressionHeadImpl::forward(const torch::Tensor& x) { return project_(conv_(x)); }

torch::Tensor disparity_probabilities(const torch::Tensor& logits, std::int64_t max_disparity, std::int64_t height,
                                      std::int64_t width) {
  auto up = F::interpolate(logits, F::InterpolateFuncOptions()
                                       .size(std::vector<std::int64_t>{max_disparity, height, width})
                                       .mode(torch::kTrilinear)
                                       .align_corners(false));
  return torch::softmax(up.squeeze(1), 1);
}

DisparityField soft_argmax(const torch::Tensor& probabilities) {
  const auto bins = probabilities.size(1);
  auto index = torch::arange(bins, probabilities.options()).view({1, bins, 1, 1});
  return {(probabilities * index).sum(1)};
}

LeanStereoNetImpl::LeanStereoNetImpl(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const auto width = cfg_.head.base_width;
  backbone_ = register_module("backbone", Backbone(cfg_.backbone));
  cost_volume_ = register_module("cost_volume", CostVolumeBuilder(cfg_.cost_volume, cfg_.backbone.out_channels));
  pre_ = register_module("pre", PreAggregate(2 * cfg_.cost_volume.concat_channels, width));
  for (std::size_t i = 0; i < hourglasses_.size(); ++i) {
    hourglasses_[i] = register_module("hourglass" + std::to_string(i + 1), Hourglass(width, cfg_.head.separable));
  }
  for (std::size_t i = 0; i < heads_.size(); ++i) {
    heads_[i] = register_module("head" + std::to_string(i), RegressionHead(width));
  }
}

void LeanStereoNetImpl::check_volume(const CostVolume& vol) const {
  if (vol.data.dim() != 5) throw ContractError("expected a 5D cost volume");
}

CostVolume LeanStereoNetImpl::pre_aggregate(const CostVolume& vol) {
  check_volume(vol);
  return {pre_(vol.data), vol.level, vol.disp_stride};
}

CostVolume LeanStereoNetImpl::hourglass_forward(int index, const CostVolume& vol, HourglassTrace* trace) {
  check_volume(vol);
  return {hourglasses_.at(static_cast<std::size_t>(index))->forward(vol.data, trace), vol.level, vol.disp_stride};
}

DisparityField LeanStereoNetImpl::regress_disparity(int head, const CostVolume& vol, std::int64_t height,
                                                    std::int64_t width) {
  check_volume(vol);
  head_evaluations_.fetch_add(1);
  auto logits = heads_.at(static_cast<std::size_t>(head))->forward(vol.data);
  return soft_argmax(disparity_probabilities(logits, cfg_.cost_volume.max_disparity, height, width));
}

CostVolume LeanStereoNetImpl::build_volume(const ImageBatch& left, const ImageBatch& right) {
  auto [lf, rf] = backbone_->backbone_forward(left, right);
  return cost_volume_->forward(lf, rf);
}

HeadOutputs LeanStereoNetImpl::forward_train(const ImageBatch& left, const ImageBatch& right) {
  const auto h = left.height();
  const auto w = left.width();
  auto v0 = pre_aggregate(build_volume(left, right));
  auto v1 = hourglass_forward(0, v0);
  auto v2 = hourglass_forward(1, v1);
  return {regress_disparity(0, v0, h, w), regress_disparity(1, v1, h, w), regress_disparity(2, v2, h, w)};
}

DisparityField LeanStereoNetImpl::infer(const ImageBatch& left, const ImageBatch& right) {
  auto v = hourglass_forward(1, hourglass_forward(0, pre_aggregate(build_volume(left, right))));
  return regress_disparity(2, v, left.height(), left.width());
}

std::variant<HeadOutputs, DisparityField> LeanStereoNetImpl::model_forward(const ImageBatch& left,
                                                                           const ImageBatch& right,
                                                                           ForwardMode mode) {
  if (mode == ForwardMode::kTrain) return forward_train(left, right);
  return infer(left, right);
}

std::vector<torch::Tensor> LeanStereoNetImpl::aggregation_parameters() const {
  std::vector<torch::Tensor> out;
  auto append = [&](const torch::nn::Module& m) {
    for (const auto& p : m.parameters()) out.push_back(p);
  };
  append(*pre_);
  for (const auto& hg : hourglasses_) append(*hg);
  for (const auto& head : heads_) append(*head);
  return out;
}

std::int64_t count_parameters(const std::vector<torch::Tensor>& params) {
  std::int64_t n = 0;
  for (const auto& p : params) n += p.numel();
  return n;
}

std::int64_t count_parameters(const torch::nn::Module& module) { return count_parameters(module.parameters()); }

}  // namespace leanstereo
