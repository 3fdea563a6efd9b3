#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "leanstereo/config.hpp"
#include "leanstereo/types.hpp"

namespace leanstereo {

// One rectified pair. left(x, y) matches right(x - d(x, y), y).
struct StereoSample {
  torch::Tensor left;   // [3, H, W] float in [0, 1]
  torch::Tensor right;  // [3, H, W] float in [0, 1]
  torch::Tensor gt;     // [H, W] float, left-view disparity; 0 where unknown
  torch::Tensor valid;  // [H, W] bool
  std::string name;

  std::int64_t height() const { return left.size(1); }
  std::int64_t width() const { return left.size(2); }
};

// ---- PFM -------------------------------------------------------------------

struct PfmImage {
  torch::Tensor data;  // [C, H, W] float32, C = 1 ("Pf") or 3 ("PF"), top row first
  float scale = -1.0f;
};

// Throws ParseError (with byte offset) on a malformed header or truncated
// payload and DataError if the file cannot be opened.
PfmImage read_pfm(const std::filesystem::path& path);
PfmImage parse_pfm(const std::string& bytes);
// Like read_pfm but requires a single channel; returns [H, W].
torch::Tensor read_pfm_disparity(const std::filesystem::path& path);
// Accepts [H, W], [1, H, W] or [3, H, W]. Writes little-endian (scale -1).
void write_pfm(const std::filesystem::path& path, const torch::Tensor& image);
std::string encode_pfm(const torch::Tensor& image);

// ---- PNG -------------------------------------------------------------------

struct KittiDisparity {
  torch::Tensor disparity;  // [H, W] float, raw / 256
  torch::Tensor valid;      // [H, W] bool, raw != 0
};

// 16-bit single-channel PNG; any other bit depth or colour type -> DataError.
KittiDisparity read_kitti_disparity(const std::filesystem::path& path);
// Encodes round(disparity * 256), clamped to uint16; invalid pixels -> 0.
void write_kitti_disparity(const std::filesystem::path& path, const torch::Tensor& disparity,
                           const torch::Tensor& valid);
// Raw 16-bit grayscale access, mainly for tests and tools.
void write_png16(const std::filesystem::path& path, const torch::Tensor& raw);  // [H, W] int32 in [0, 65535]

// 8-bit PNG (gray, RGB or RGBA; alpha dropped) -> [3, H, W] float in [0, 1].
torch::Tensor read_rgb_png(const std::filesystem::path& path);
// [3, H, W] float in [0, 1] -> 8-bit RGB PNG, rounded to nearest level.
void write_rgb_png(const std::filesystem::path& path, const torch::Tensor& image);

// Colour visualisations, [3, H, W] in [0, 1]. Disparity maps 0..max_disparity
// onto a blue-to-red ramp; the error map saturates at max_error pixels and
// paints pixels outside mask black.
torch::Tensor colorize_disparity(const torch::Tensor& disparity, double max_disparity);
torch::Tensor colorize_error(const torch::Tensor& pred, const torch::Tensor& gt, const torch::Tensor& mask,
                             double max_error = 5.0);

// ---- Synthetic pairs ----------------------------------------------------------

// Background plane plus num_shapes rectangles of larger constant disparity
// (the nearest wins where they overlap). All disparities are integers in
// [d_min, d_max]. The right image is smoothed multi-scale noise quantised to
// 8-bit levels, so a PNG round trip is lossless. The left image copies
// right(x - d) exactly; where x - d < 0 it shows texture from outside the
// right frame and valid is false. Deterministic in seed.
// Throws ConfigError if H or W is not a multiple of 32, or the range is
// negative, inverted or not smaller than W.
StereoSample generate_synthetic_pair(std::uint64_t seed, std::int64_t height, std::int64_t width,
                                     std::int64_t num_shapes, std::int64_t d_min, std::int64_t d_max);
StereoSample generate_synthetic_pair(std::uint64_t seed, const SynthConfig& cfg);

// Writes left/NNNNNN.png, right/NNNNNN.png and disp/NNNNNN.pfm for
// cfg.count samples seeded seed, seed+1, ...
void write_synthetic_dataset(const std::filesystem::path& root, const SynthConfig& cfg, std::uint64_t seed);

// ---- Preprocessing ---------------------------------------------------------------

// Per-channel standardisation constants applied to [0, 1] RGB.
inline constexpr std::array<double, 3> kChannelMean{0.485, 0.456, 0.406};
inline constexpr std::array<double, 3> kChannelStd{0.229, 0.224, 0.225};

torch::Tensor standardize(const torch::Tensor& image);

// Model-ready pair. Images are standardised [3, H', W']; gt/valid share the
// same geometry (padding is invalid).
struct PreparedPair {
  torch::Tensor left;
  torch::Tensor right;
  torch::Tensor gt;
  torch::Tensor valid;
  std::int64_t pad_top = 0;
  std::int64_t pad_left = 0;
  std::int64_t orig_height = 0;
  std::int64_t orig_width = 0;
};

std::int64_t padded_size(std::int64_t n);  // next multiple of 32

// Training: one random crop_height x crop_width window shared by the two
// images and the ground truth. Throws DataError if the sample is smaller.
// Evaluation: zero padding on the top and left (image anchored bottom-right)
// up to the next multiple of 32; offsets recorded for unpad().
PreparedPair preprocess(const StereoSample& sample, const DatasetSpec& spec, bool training, std::mt19937_64& rng);
PreparedPair crop_sample(const StereoSample& sample, std::int64_t top, std::int64_t left, std::int64_t height,
                         std::int64_t width);

// Removes the padding recorded in `p` from a [..., H', W'] tensor.
torch::Tensor unpad(const torch::Tensor& padded, const PreparedPair& p);

// ---- Datasets --------------------------------------------------------------------

// Directory conventions:
//   synthetic  root/{left,right}/*.png, root/disp/*.pfm (or generated in
//              memory from SynthConfig when root is empty)
//   sceneflow  root/frames_{cleanpass,finalpass}/{TRAIN,TEST}/**/left/*.png,
//              matching right/ and root/disparity/.../left/*.pfm
//   kitti      root/training/{image_2,image_3,disp_occ_0}/*_10.png;
//              train keeps frames whose index % 5 != 0, val the rest;
//              test reads root/testing/ without ground truth
// Loading is stateless per sample and safe from several threads.
class StereoDataset {
 public:
  // Throws DataError if the root is missing or holds no samples.
  StereoDataset(const DatasetSpec& spec, const SynthConfig& synth = {}, std::uint64_t seed = 1);

  std::size_t size() const { return entries_.empty() ? generated_ : entries_.size(); }
  StereoSample get(std::size_t index) const;
  const DatasetSpec& spec() const { return spec_; }

 private:
  struct Entry {
    std::filesystem::path left, right, disp;
    std::string name;
  };

  DatasetSpec spec_;
  SynthConfig synth_;
  std::uint64_t seed_;
  std::size_t generated_ = 0;
  std::vector<Entry> entries_;

  // Generated samples are kept after the first request.
  struct Cache {
    std::mutex mu;
    std::vector<std::optional<StereoSample>> samples;
  };
  std::shared_ptr<Cache> cache_ = std::make_shared<Cache>();
};

}  // namespace leanstereo
