#include <png.h>

#include <bit>
#include <csetjmp>
#include <cstdio>
#include <memory>

#include "leanstereo/data.hpp"
#include "leanstereo/error.hpp"

namespace leanstereo {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

File open_file(const std::filesystem::path& path, const char* mode) {
  File f(std::fopen(path.c_str(), mode));
  if (!f) throw DataError("cannot open " + path.string());
  return f;
}

struct RawImage {
  std::int64_t height = 0, width = 0, channels = 0;
  int bit_depth = 0;
  std::vector<unsigned char> bytes;  // 16-bit samples already in host order
};

// Low-level read without any colour or gamma conversion besides expanding
// palettes and dropping alpha on request.
RawImage read_png_raw(const std::filesystem::path& path, bool expand_to_8bit_rgb) {
  auto file = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (png == nullptr) throw DataError("libpng init failed");
  png_infop info = png_create_info_struct(png);
  RawImage img;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("malformed PNG: " + path.string());
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  img.bit_depth = png_get_bit_depth(png, info);
  const auto color = png_get_color_type(png, info);
  if (expand_to_8bit_rgb) {
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    if (img.bit_depth < 8) png_set_expand(png);
    if (img.bit_depth == 16) png_set_strip_16(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  } else {
    if (img.bit_depth != 16 || color != PNG_COLOR_TYPE_GRAY) {
      png_destroy_read_struct(&png, &info, nullptr);
      throw DataError(path.string() + ": expected a 16-bit single-channel PNG, got bit depth " +
                      std::to_string(img.bit_depth));
    }
    if (std::endian::native == std::endian::little) png_set_swap(png);
  }
  png_read_update_info(png, info);
  img.height = png_get_image_height(png, info);
  img.width = png_get_image_width(png, info);
  img.channels = png_get_channels(png, info);
  const auto stride = png_get_rowbytes(png, info);
  img.bytes.resize(stride * static_cast<std::size_t>(img.height));
  rows.resize(static_cast<std::size_t>(img.height));
  for (std::int64_t y = 0; y < img.height; ++y) rows[y] = img.bytes.data() + stride * y;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_png_raw(const std::filesystem::path& path, const unsigned char* data, std::int64_t height,
                   std::int64_t width, int channels, int bit_depth) {
  auto file = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (png == nullptr) throw DataError("libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("PNG write failed: " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth,
               channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (bit_depth == 16 && std::endian::native == std::endian::little) png_set_swap(png);
  const auto stride = static_cast<std::size_t>(width) * channels * (bit_depth / 8);
  for (std::int64_t y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(data + stride * static_cast<std::size_t>(y)));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

KittiDisparity read_kitti_disparity(const std::filesystem::path& path) {
  auto img = read_png_raw(path, false);
  // Reinterpret the uint16 samples as int16 and undo the sign extension.
  auto raw = torch::from_blob(img.bytes.data(), {img.height, img.width}, torch::kInt16)
                 .to(torch::kInt32)
                 .bitwise_and(0xffff);
  return {raw.to(torch::kFloat32) / 256.0f, raw != 0};
}

void write_png16(const std::filesystem::path& path, const torch::Tensor& raw) {
  if (raw.dim() != 2) throw ContractError("write_png16: expected [H, W]");
  auto v = raw.to(torch::kInt32).clamp(0, 65535).contiguous();
  std::vector<std::uint16_t> buf(static_cast<std::size_t>(v.numel()));
  const auto* src = v.data_ptr<std::int32_t>();
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<std::uint16_t>(src[i]);
  write_png_raw(path, reinterpret_cast<const unsigned char*>(buf.data()), v.size(0), v.size(1), 1, 16);
}

void write_kitti_disparity(const std::filesystem::path& path, const torch::Tensor& disparity,
                           const torch::Tensor& valid) {
  auto raw = torch::round(disparity.to(torch::kFloat64) * 256.0).clamp(1, 65535).to(torch::kInt32);
  write_png16(path, torch::where(valid.to(torch::kBool), raw, torch::zeros_like(raw)));
}

torch::Tensor read_rgb_png(const std::filesystem::path& path) {
  auto img = read_png_raw(path, true);
  if (img.channels != 3) throw DataError(path.string() + ": could not convert to RGB");
  auto t = torch::from_blob(img.bytes.data(), {img.height, img.width, 3}, torch::kUInt8).clone();
  return t.permute({2, 0, 1}).to(torch::kFloat32).div(255.0f).contiguous();
}

void write_rgb_png(const std::filesystem::path& path, const torch::Tensor& image) {
  if (image.dim() != 3 || image.size(0) != 3) throw ContractError("write_rgb_png: expected [3, H, W]");
  auto bytes = torch::round(image.detach().to(torch::kCPU, torch::kFloat32).clamp(0, 1) * 255.0f)
                   .to(torch::kUInt8)
                   .permute({1, 2, 0})
                   .contiguous();
  write_png_raw(path, bytes.data_ptr<std::uint8_t>(), bytes.size(0), bytes.size(1), 3, 8);
}

namespace {

// Piecewise-linear blue -> cyan -> yellow -> red ramp for t in [0, 1].
torch::Tensor ramp(const torch::Tensor& t) {
  auto r = (t * 4.0 - 1.5).clamp(0, 1);
  auto g = torch::min(t * 4.0 - 0.5, 3.5 - t * 4.0).clamp(0, 1);
  auto b = (2.5 - t * 4.0).clamp(0, 1).min(t * 4.0 + 0.5);
  return torch::stack({r, g, b.clamp(0, 1)}, 0);
}

}  // namespace

torch::Tensor colorize_disparity(const torch::Tensor& disparity, double max_disparity) {
  auto d = disparity.detach().to(torch::kCPU, torch::kFloat32);
  if (d.dim() == 3) d = d[0];
  return ramp((d / static_cast<float>(max_disparity)).clamp(0, 1));
}

torch::Tensor colorize_error(const torch::Tensor& pred, const torch::Tensor& gt, const torch::Tensor& mask,
                             double max_error) {
  auto e = (pred.detach().to(torch::kCPU, torch::kFloat32) - gt.to(torch::kCPU, torch::kFloat32)).abs();
  auto rgb = ramp((e / static_cast<float>(max_error)).clamp(0, 1));
  return rgb * mask.to(torch::kCPU, torch::kFloat32).unsqueeze(0);
}

}  // namespace leanstereo
