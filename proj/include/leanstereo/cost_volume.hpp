#pragma once

#include <torch/torch.h>

#include "leanstereo/config.hpp"
#include "leanstereo/layers.hpp"
#include "leanstereo/types.hpp"

namespace leanstereo {

// Shift (in feature pixels) that disparity bin `bin` applies at `level`.
double bin_shift(std::int64_t bin, std::int64_t disp_stride, int level);

// Concatenation volume from already-compressed maps: channels [0, C) hold the
// left features, [C, 2C) the right features shifted by each bin. Columns whose
// match falls left of the image are exactly zero.
CostVolume concat_volume(const FeatureMap& left, const FeatureMap& right, std::int64_t bins,
                         std::int64_t disp_stride);

// Group-wise correlation: channel g holds the mean over group g of
// left(y, x) * right(y, x - shift). Throws ConfigError if num_groups does not
// divide the channel count.
CostVolume build_gwc_volume(const FeatureMap& left, const FeatureMap& right, std::int64_t num_groups,
                            std::int64_t bins, std::int64_t disp_stride);
CostVolume build_gwc_volume(const FeatureMap& left, const FeatureMap& right, const CostVolumeConfig& cfg);

// out[:, c] = pre[:, c] * att[:, 0] for every channel c.
CostVolume apply_attention(const CostVolume& pre, const AttentionWeights& att);

// Subgroup blocks (two 3D convs each), summed, then two 3D convs to one
// channel and a sigmoid.
class AttentionNetImpl : public torch::nn::Module {
 public:
  explicit AttentionNetImpl(const CostVolumeConfig& cfg);
  AttentionWeights forward(const CostVolume& corr);

 private:
  std::vector<std::int64_t> split_;
  std::vector<torch::nn::Sequential> blocks_;
  ConvBn3d merge_{nullptr};
  torch::nn::Conv3d project_{nullptr};
};
TORCH_MODULE(AttentionNet);

// Learned part of the cost volume: feature compression for the concatenation
// volume and the attention subnetwork.
class CostVolumeBuilderImpl : public torch::nn::Module {
 public:
  CostVolumeBuilderImpl(const CostVolumeConfig& cfg, std::int64_t feature_channels);

  // Throws ContractError if the maps differ in level or shape.
  CostVolume build_concat_volume(const FeatureMap& left, const FeatureMap& right);
  AttentionWeights compute_attention_weights(const CostVolume& corr);
  // Attention-filtered volume, or the plain concatenation volume when the
  // attention switch is off.
  CostVolume forward(const FeatureMap& left, const FeatureMap& right);

  const CostVolumeConfig& config() const { return cfg_; }

 private:
  CostVolumeConfig cfg_;
  torch::nn::Conv2d compress_{nullptr};
  AttentionNet attention_{nullptr};
};
TORCH_MODULE(CostVolumeBuilder);

}  // namespace leanstereo
