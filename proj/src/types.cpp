#include "leanstereo/types.hpp"

#include "leanstereo/error.hpp"

namespace leanstereo {

ImageBatch::ImageBatch(torch::Tensor data)
    : ImageBatch(data, data.dim() == 4 ? data.size(2) : 0, data.dim() == 4 ? data.size(3) : 0) {}

ImageBatch::ImageBatch(torch::Tensor data, std::int64_t orig_height, std::int64_t orig_width)
    : data_(std::move(data)), orig_height_(orig_height), orig_width_(orig_width) {
  if (data_.dim() != 4 || data_.size(1) != 3) {
    throw ContractError("ImageBatch: expected [B, 3, H, W] tensor");
  }
  if (data_.size(2) % kInputAlignment != 0 || data_.size(3) % kInputAlignment != 0) {
    throw ContractError("ImageBatch: height and width must be divisible by 32, got " +
                        std::to_string(data_.size(2)) + "x" + std::to_string(data_.size(3)));
  }
  if (orig_height_ > data_.size(2) || orig_width_ > data_.size(3)) {
    throw ContractError("ImageBatch: original size exceeds padded size");
  }
}

}  // namespace leanstereo
