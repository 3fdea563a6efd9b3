#include "leanstereo/cost_volume.hpp"

#include <cmath>

#include "leanstereo/error.hpp"

namespace leanstereo {

namespace F = torch::nn::functional;

namespace {

void check_pair(const FeatureMap& left, const FeatureMap& right) {
  if (left.level != right.level) throw ContractError("cost volume: left/right feature levels differ");
  if (left.data.dim() != 4 || left.data.sizes() != right.data.sizes()) {
    throw ContractError("cost volume: left/right feature shapes differ");
  }
}

// First column whose match lies inside the right image.
std::int64_t first_valid_column(double shift) { return static_cast<std::int64_t>(std::ceil(shift - 1e-9)); }

// right(x - shift) for every x, zero where x - shift < 0. Fractional shifts
// interpolate linearly between the two neighbouring columns.
torch::Tensor shift_columns(const torch::Tensor& x, double shift) {
  const auto width = x.size(3);
  const auto whole = static_cast<std::int64_t>(std::floor(shift));
  const double frac = shift - static_cast<double>(whole);
  auto shifted_by = [&](std::int64_t s) {
    if (s >= width) return torch::zeros_like(x);
    if (s == 0) return x;
    return F::pad(x.narrow(3, 0, width - s), F::PadFuncOptions({s, 0}));
  };
  auto out = shifted_by(whole);
  if (frac > 1e-12) out = out * (1.0 - frac) + shifted_by(whole + 1) * frac;
  return out;
}

// Zeroes columns x < first.
torch::Tensor mask_columns(const torch::Tensor& x, std::int64_t first) {
  const auto width = x.size(3);
  if (first <= 0) return x;
  if (first >= width) return torch::zeros_like(x);
  return F::pad(x.narrow(3, first, width - first), F::PadFuncOptions({first, 0}));
}

}  // namespace

double bin_shift(std::int64_t bin, std::int64_t disp_stride, int level) {
  return static_cast<double>(bin * disp_stride) / static_cast<double>(std::int64_t{1} << level);
}

CostVolume concat_volume(const FeatureMap& left, const FeatureMap& right, std::int64_t bins,
                         std::int64_t disp_stride) {
  check_pair(left, right);
  std::vector<torch::Tensor> slices;
  slices.reserve(bins);
  for (std::int64_t d = 0; d < bins; ++d) {
    const double shift = bin_shift(d, disp_stride, left.level);
    const auto first = first_valid_column(shift);
    slices.push_back(
        torch::cat({mask_columns(left.data, first), mask_columns(shift_columns(right.data, shift), first)}, 1));
  }
  return {torch::stack(slices, 2), left.level, static_cast<int>(disp_stride)};
}

CostVolume build_gwc_volume(const FeatureMap& left, const FeatureMap& right, std::int64_t num_groups,
                            std::int64_t bins, std::int64_t disp_stride) {
  check_pair(left, right);
  const auto channels = left.channels();
  if (num_groups <= 0 || channels % num_groups != 0) {
    throw ConfigError("build_gwc_volume: " + std::to_string(num_groups) + " groups do not divide " +
                      std::to_string(channels) + " channels");
  }
  const auto b = left.data.size(0);
  const auto h = left.height();
  const auto w = left.width();
  const auto group_size = channels / num_groups;
  std::vector<torch::Tensor> slices;
  slices.reserve(bins);
  for (std::int64_t d = 0; d < bins; ++d) {
    const double shift = bin_shift(d, disp_stride, left.level);
    auto prod = left.data * shift_columns(right.data, shift);
    auto corr = prod.view({b, num_groups, group_size, h, w}).mean(2);
    slices.push_back(mask_columns(corr, first_valid_column(shift)));
  }
  return {torch::stack(slices, 2), left.level, static_cast<int>(disp_stride)};
}

CostVolume build_gwc_volume(const FeatureMap& left, const FeatureMap& right, const CostVolumeConfig& cfg) {
  return build_gwc_volume(left, right, cfg.num_groups, cfg.bins(), cfg.disp_stride);
}

CostVolume apply_attention(const CostVolume& pre, const AttentionWeights& att) {
  const auto& p = pre.data;
  const auto& a = att.data;
  if (p.dim() != 5 || a.dim() != 5 || a.size(1) != 1 || a.size(0) != p.size(0) || a.size(2) != p.size(2) ||
      a.size(3) != p.size(3) || a.size(4) != p.size(4)) {
    throw ContractError("apply_attention: weights must be [B, 1, D, H, W] matching the volume");
  }
  return {p * a, pre.level, pre.disp_stride};
}

AttentionNetImpl::AttentionNetImpl(const CostVolumeConfig& cfg) : split_(cfg.subgroup_sizes()) {
  const auto width = cfg.attention_width;
  for (std::size_t i = 0; i < split_.size(); ++i) {
    auto block = torch::nn::Sequential(ConvBn3d(ConvSpec{.in = split_[i], .out = width}),
                                       ConvBn3d(ConvSpec{.in = width, .out = width}));
    blocks_.push_back(register_module("block" + std::to_string(i), block));
  }
  merge_ = register_module("merge", ConvBn3d(ConvSpec{.in = width, .out = width}));
  project_ = register_module("project",
                             torch::nn::Conv3d(torch::nn::Conv3dOptions(width, 1, 3).padding(1).bias(false)));
}

AttentionWeights AttentionNetImpl::forward(const CostVolume& corr) {
  std::int64_t total = 0;
  for (auto s : split_) total += s;
  if (corr.data.dim() != 5 || corr.channels() != total) {
    throw ContractError("attention: correlation volume has " + std::to_string(corr.data.size(1)) +
                        " channels, expected " + std::to_string(total));
  }
  auto parts = corr.data.split_with_sizes(split_, 1);
  torch::Tensor sum;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    auto y = blocks_[i]->forward(parts[i]);
    sum = sum.defined() ? sum + y : y;
  }
  return {torch::sigmoid(project_(merge_(sum)))};
}

CostVolumeBuilderImpl::CostVolumeBuilderImpl(const CostVolumeConfig& cfg, std::int64_t feature_channels)
    : cfg_(cfg) {
  cfg_.validate(feature_channels);
  compress_ = register_module(
      "compress", torch::nn::Conv2d(torch::nn::Conv2dOptions(feature_channels, cfg_.concat_channels, 1).bias(false)));
  if (cfg_.attention) attention_ = register_module("attention", AttentionNet(cfg_));
}

CostVolume CostVolumeBuilderImpl::build_concat_volume(const FeatureMap& left, const FeatureMap& right) {
  check_pair(left, right);
  FeatureMap lc{compress_(left.data), left.level};
  FeatureMap rc{compress_(right.data), right.level};
  return concat_volume(lc, rc, cfg_.bins(), cfg_.disp_stride);
}

AttentionWeights CostVolumeBuilderImpl::compute_attention_weights(const CostVolume& corr) {
  if (!attention_) throw ContractError("compute_attention_weights: attention is disabled in this model");
  return attention_(corr);
}

CostVolume CostVolumeBuilderImpl::forward(const FeatureMap& left, const FeatureMap& right) {
  auto pre = build_concat_volume(left, right);
  if (!cfg_.attention) return pre;
  auto corr = build_gwc_volume(left, right, cfg_);
  return apply_attention(pre, compute_attention_weights(corr));
}

}  // namespace leanstereo
