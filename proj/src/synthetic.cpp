#include <cmath>
#include <cstdio>
#include <random>

#include "leanstereo/data.hpp"
#include "leanstereo/error.hpp"

namespace leanstereo {

namespace {

// Explicit mapping from raw engine output so samples do not depend on the
// standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Integer in [lo, hi].
  std::int64_t integer(std::int64_t lo, std::int64_t hi) {
    const auto span = static_cast<double>(hi - lo + 1);
    return std::min(hi, lo + static_cast<std::int64_t>(std::floor(uniform() * span)));
  }
  torch::Tensor noise(std::int64_t h, std::int64_t w) {
    auto t = torch::empty({h, w}, torch::kFloat64);
    auto* p = t.data_ptr<double>();
    for (std::int64_t i = 0; i < h * w; ++i) p[i] = uniform();
    return t;
  }

 private:
  std::mt19937_64 engine_;
};

// Separable Gaussian blur of a [H, W] map with reflected borders.
torch::Tensor gaussian_blur(const torch::Tensor& x, double sigma) {
  const auto radius = static_cast<std::int64_t>(std::ceil(3.0 * sigma));
  auto k = torch::arange(-radius, radius + 1, torch::kFloat64);
  k = torch::exp(-0.5 * (k / sigma).square());
  k = k / k.sum();
  namespace F = torch::nn::functional;
  auto y = x.view({1, 1, x.size(0), x.size(1)});
  y = F::pad(y, F::PadFuncOptions({radius, radius, radius, radius}).mode(torch::kReflect));
  y = F::conv2d(y, k.view({1, 1, 1, -1}));
  y = F::conv2d(y, k.view({1, 1, -1, 1}));
  return y.view({x.size(0), x.size(1)});
}

// [3, H, W] texture in [0, 1], quantised to 8-bit levels. Fine grain for
// exact matching plus coarser blobs so low-resolution features can match.
torch::Tensor texture(Rng& rng, std::int64_t h, std::int64_t w) {
  constexpr std::array<std::pair<double, double>, 3> kOctaves{{{0.7, 0.4}, {2.0, 0.3}, {4.0, 0.3}}};
  auto tex = torch::zeros({3, h, w}, torch::kFloat64);
  for (const auto& [sigma, weight] : kOctaves) {
    std::vector<torch::Tensor> ch;
    for (int c = 0; c < 3; ++c) ch.push_back(gaussian_blur(rng.noise(h, w), sigma));
    auto t = torch::stack(ch);
    tex += weight * (t - t.mean()) / (t.std() + 1e-6);
  }
  tex = (0.5 + 0.2 * tex).clamp(0, 1);
  return torch::round(tex * 255.0).div(255.0).to(torch::kFloat32);
}

}  // namespace

StereoSample generate_synthetic_pair(std::uint64_t seed, std::int64_t height, std::int64_t width,
                                     std::int64_t num_shapes, std::int64_t d_min, std::int64_t d_max) {
  if (height <= 0 || width <= 0 || height % kInputAlignment != 0 || width % kInputAlignment != 0) {
    throw ConfigError("synthetic pair: height and width must be positive multiples of 32");
  }
  if (d_min < 0 || d_max < d_min) throw ConfigError("synthetic pair: invalid disparity range");
  if (d_max >= width) throw ConfigError("synthetic pair: disparity range exceeds image width");
  if (num_shapes < 0) throw ConfigError("synthetic pair: num_shapes must be >= 0");

  Rng rng(seed);
  const auto range = static_cast<double>(d_max - d_min);
  // Slanted background plane, rounded to whole pixels. Its values and the
  // shape values overlap, so the disparity histogram has no gaps.
  const double base = d_min + rng.uniform(0.0, 0.5 * range);
  const double sx = rng.uniform(-0.3, 0.3) * range / static_cast<double>(width);
  const double sy = rng.uniform(-0.2, 0.2) * range / static_cast<double>(height);
  auto ys = torch::arange(height, torch::kFloat64).view({-1, 1});
  auto xs = torch::arange(width, torch::kFloat64).view({1, -1});
  auto disp = torch::round(base + sx * xs + sy * ys)
                  .clamp(static_cast<double>(d_min), static_cast<double>(d_max))
                  .to(torch::kInt64);

  // Fronto-parallel rectangles, never behind what they cover.
  for (std::int64_t s = 0; s < num_shapes; ++s) {
    const auto h = rng.integer(height / 6, height / 2 - 1);
    const auto w = rng.integer(width / 8, width / 3 - 1);
    const auto y0 = rng.integer(0, height - h - 1);
    const auto x0 = rng.integer(0, width - w - 1);
    const auto value = rng.integer(d_min + (d_max - d_min) / 4, d_max);
    auto region = disp.narrow(0, y0, h).narrow(1, x0, w);
    region.copy_(region.clamp_min(value));
  }

  // texture column c corresponds to right-image column c - d_max.
  auto tex = texture(rng, height, width + d_max);
  auto right = tex.narrow(2, d_max, width).contiguous();
  auto src = (xs.to(torch::kInt64) - disp + d_max).view({1, height, width}).expand({3, height, width});
  auto left = tex.gather(2, src.contiguous());

  StereoSample out;
  out.left = left;
  out.right = right;
  out.valid = xs.to(torch::kInt64) - disp >= 0;
  out.gt = disp.to(torch::kFloat32);
  char name[32];
  std::snprintf(name, sizeof(name), "synth_%llu", static_cast<unsigned long long>(seed));
  out.name = name;
  return out;
}

StereoSample generate_synthetic_pair(std::uint64_t seed, const SynthConfig& cfg) {
  return generate_synthetic_pair(seed, cfg.height, cfg.width, cfg.num_shapes, cfg.min_disparity,
                                 cfg.max_disparity);
}

void write_synthetic_dataset(const std::filesystem::path& root, const SynthConfig& cfg, std::uint64_t seed) {
  namespace fs = std::filesystem;
  for (const char* sub : {"left", "right", "disp"}) fs::create_directories(root / sub);
  for (std::int64_t i = 0; i < cfg.count; ++i) {
    auto s = generate_synthetic_pair(seed + static_cast<std::uint64_t>(i), cfg);
    char stem[24];
    std::snprintf(stem, sizeof(stem), "%06lld", static_cast<long long>(i));
    write_rgb_png(root / "left" / (std::string(stem) + ".png"), s.left);
    write_rgb_png(root / "right" / (std::string(stem) + ".png"), s.right);
    // Invalid pixels are stored as 0, the "unknown" sentinel.
    write_pfm(root / "disp" / (std::string(stem) + ".pfm"), s.gt * s.valid.to(torch::kFloat32));
  }
}

}  // namespace leanstereo
