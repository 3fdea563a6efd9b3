#pragma once

#include <torch/torch.h>

#include <cstdint>

namespace leanstereo {

// Deep branch bottoms out at level 5, so network inputs are multiples of 2^5.
inline constexpr std::int64_t kInputAlignment = 32;

// Standardized RGB batch [B, 3, H, W] with H and W multiples of 32.
// orig_height/orig_width remember the size before any padding.
class ImageBatch {
 public:
  // Throws ContractError if the tensor is not [B, 3, H, W] with aligned H, W.
  explicit ImageBatch(torch::Tensor data);
  ImageBatch(torch::Tensor data, std::int64_t orig_height, std::int64_t orig_width);

  const torch::Tensor& data() const { return data_; }
  std::int64_t batch() const { return data_.size(0); }
  std::int64_t height() const { return data_.size(2); }
  std::int64_t width() const { return data_.size(3); }
  std::int64_t orig_height() const { return orig_height_; }
  std::int64_t orig_width() const { return orig_width_; }

 private:
  torch::Tensor data_;
  std::int64_t orig_height_;
  std::int64_t orig_width_;
};

// Feature tensor [B, C, H/2^level, W/2^level].
struct FeatureMap {
  torch::Tensor data;
  int level = 0;

  std::int64_t channels() const { return data.size(1); }
  std::int64_t height() const { return data.size(2); }
  std::int64_t width() const { return data.size(3); }
};

// Matching volume [B, C, D, H', W'] at spatial `level`; one disparity bin
// spans `disp_stride` full-resolution pixels.
struct CostVolume {
  torch::Tensor data;
  int level = 0;
  int disp_stride = 1;

  std::int64_t channels() const { return data.size(1); }
  std::int64_t bins() const { return data.size(2); }
};

// Per-bin gating weights [B, 1, D, H', W'] in (0, 1).
struct AttentionWeights {
  torch::Tensor data;
};

// Per-pixel disparity [B, H, W] in full-resolution pixels.
struct DisparityField {
  torch::Tensor data;
};

// Training-mode outputs from the three supervision points.
struct HeadOutputs {
  DisparityField out0;
  DisparityField out1;
  DisparityField out2;
};

}  // namespace leanstereo
