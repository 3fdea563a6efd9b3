#include <gtest/gtest.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <thread>

#include "leanstereo/data.hpp"
#include "leanstereo/error.hpp"
#include "test_util.hpp"

using namespace leanstereo;
namespace fs = std::filesystem;

namespace {

std::string le_floats(std::initializer_list<float> values) {
  std::string out;
  for (float f : values) {
    auto bits = std::bit_cast<std::uint32_t>(f);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
  return out;
}

std::string be_floats(std::initializer_list<float> values) {
  std::string out;
  for (float f : values) {
    auto bits = std::bit_cast<std::uint32_t>(f);
    for (int i = 3; i >= 0; --i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
  return out;
}

std::uint64_t parse_offset(const std::string& bytes) {
  try {
    parse_pfm(bytes);
  } catch (const ParseError& e) {
    return e.offset();
  }
  ADD_FAILURE() << "no ParseError for header " << bytes.substr(0, 20);
  return 0;
}

void write_file(const fs::path& p, const std::string& bytes) {
  fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << bytes;
}

// Photometric warp check: every valid pixel copies right(x - d); returns the
// number of pixels checked.
std::int64_t check_warp(const torch::Tensor& left, const torch::Tensor& right, const torch::Tensor& gt,
                        const torch::Tensor& valid) {
  auto L = left.accessor<float, 3>();
  auto R = right.accessor<float, 3>();
  auto G = gt.accessor<float, 2>();
  auto V = valid.accessor<bool, 2>();
  std::int64_t checked = 0;
  for (std::int64_t y = 0; y < gt.size(0); ++y) {
    for (std::int64_t x = 0; x < gt.size(1); ++x) {
      if (!V[y][x]) continue;
      const auto d = static_cast<std::int64_t>(G[y][x]);
      if (x - d < 0) {
        ADD_FAILURE() << "valid pixel matches outside the frame at " << y << "," << x;
        return checked;
      }
      for (int c = 0; c < 3; ++c) {
        if (L[c][y][x] != R[c][y][x - d]) {
          ADD_FAILURE() << "warp mismatch at " << y << "," << x << " d=" << d;
          return checked;
        }
      }
      ++checked;
    }
  }
  return checked;
}

StereoSample blank_sample(std::int64_t h, std::int64_t w) {
  StereoSample s;
  s.left = torch::rand({3, h, w});
  s.right = torch::rand({3, h, w});
  s.gt = torch::rand({h, w}) * 50 + 1;
  s.valid = torch::ones({h, w}, torch::kBool);
  s.name = "blank";
  return s;
}

}  // namespace

// ---- PFM --------------------------------------------------------------------

TEST(Pfm, LittleEndianRowsFlipped) {
  auto img = parse_pfm("Pf\n2 2\n-1.0\n" + le_floats({1, 2, 3, 4}));
  EXPECT_EQ(img.scale, -1.0f);
  ASSERT_EQ(img.data.sizes(), (std::vector<std::int64_t>{1, 2, 2}));
  EXPECT_TRUE(torch::equal(img.data[0], torch::tensor({{3.0f, 4.0f}, {1.0f, 2.0f}})));
}

TEST(Pfm, BigEndianPayload) {
  auto img = parse_pfm("Pf\n2 1\n1.0\n" + be_floats({1.5f, -7.25f}));
  EXPECT_TRUE(torch::equal(img.data[0], torch::tensor({{1.5f, -7.25f}})));
}

TEST(Pfm, ThreeChannelsInterleaved) {
  auto img = parse_pfm("PF\n1 1\n-1\n" + le_floats({0.1f, 0.2f, 0.3f}));
  ASSERT_EQ(img.data.sizes(), (std::vector<std::int64_t>{3, 1, 1}));
  EXPECT_EQ(img.data[2][0][0].item<float>(), 0.3f);
}

TEST(Pfm, RoundTripBitExact) {
  testutil::TempDir dir;
  torch::manual_seed(1);
  auto map = torch::randn({8, 6}) * 1000;
  map[0][0] = -0.0f;
  map[1][1] = std::numeric_limits<float>::denorm_min();
  map[2][2] = std::numeric_limits<float>::max();
  write_pfm(dir / "a.pfm", map);
  auto back = read_pfm_disparity(dir / "a.pfm");
  EXPECT_TRUE(torch::equal(back.view(torch::kInt32), map.view(torch::kInt32)));

  auto rgb = torch::rand({3, 5, 7});
  write_pfm(dir / "b.pfm", rgb);
  auto back_rgb = read_pfm(dir / "b.pfm");
  EXPECT_TRUE(torch::equal(back_rgb.data.view(torch::kInt32), rgb.view(torch::kInt32)));
  EXPECT_EQ(encode_pfm(rgb).substr(0, 10), "PF\n7 5\n-1\n");
}

TEST(Pfm, ColourFileRejectedAsDisparity) {
  testutil::TempDir dir;
  write_pfm(dir / "c.pfm", torch::rand({3, 2, 2}));
  EXPECT_THROW(read_pfm_disparity(dir / "c.pfm"), DataError);
}

TEST(Pfm, ErrorsCarryByteOffsets) {
  EXPECT_EQ(parse_offset("P6\n1 1\n-1\n"), 0u);
  EXPECT_EQ(parse_offset("Pf1 1\n-1\n"), 2u);
  EXPECT_EQ(parse_offset("Pf\nx 1\n-1\n"), 3u);
  EXPECT_EQ(parse_offset("Pf\n2 0\n-1\n"), 5u);
  EXPECT_EQ(parse_offset("Pf\n2 1\nabc\n"), 7u);
  EXPECT_EQ(parse_offset("Pf\n2 1\n0.0\n"), 7u);
  EXPECT_EQ(parse_offset("Pf\n2 1\n-1"), 9u);
  const std::string truncated = "Pf\n2 2\n-1\n" + le_floats({1, 2, 3});
  EXPECT_EQ(parse_offset(truncated), truncated.size());
  EXPECT_EQ(parse_offset("Pf\n"), 3u);
}

TEST(Pfm, MissingFile) {
  EXPECT_THROW(read_pfm("/nonexistent/x.pfm"), DataError);
}

// ---- PNG --------------------------------------------------------------------

TEST(KittiPng, RawEncoding) {
  testutil::TempDir dir;
  write_png16(dir / "d.png", torch::tensor({{25600, 0, 1}, {65535, 256, 384}}, torch::kInt32));
  auto k = read_kitti_disparity(dir / "d.png");
  EXPECT_FLOAT_EQ(k.disparity[0][0].item<float>(), 100.0f);
  EXPECT_FALSE(k.valid[0][1].item<bool>());
  EXPECT_FLOAT_EQ(k.disparity[0][2].item<float>(), 1.0f / 256.0f);
  EXPECT_TRUE(k.valid[0][2].item<bool>());
  EXPECT_FLOAT_EQ(k.disparity[1][0].item<float>(), 65535.0f / 256.0f);
  EXPECT_FLOAT_EQ(k.disparity[1][1].item<float>(), 1.0f);
  EXPECT_FLOAT_EQ(k.disparity[1][2].item<float>(), 1.5f);
}

TEST(KittiPng, WriteRoundTrip) {
  testutil::TempDir dir;
  auto d = torch::tensor({{12.5f, 0.0f}, {200.25f, 3.0f}});
  auto v = torch::tensor({{true, false}, {true, true}});
  write_kitti_disparity(dir / "k.png", d, v);
  auto k = read_kitti_disparity(dir / "k.png");
  EXPECT_TRUE(torch::equal(k.valid, v));
  EXPECT_TRUE(torch::equal(k.disparity, d));
}

TEST(KittiPng, WrongBitDepthRejected) {
  testutil::TempDir dir;
  write_rgb_png(dir / "rgb.png", torch::rand({3, 4, 4}));
  EXPECT_THROW(read_kitti_disparity(dir / "rgb.png"), DataError);
  write_file(dir / "junk.png", "not a png at all");
  EXPECT_THROW(read_kitti_disparity(dir / "junk.png"), DataError);
  EXPECT_THROW(read_rgb_png(dir / "junk.png"), DataError);
}

TEST(RgbPng, QuantizedRoundTrip) {
  testutil::TempDir dir;
  auto img = torch::randint(0, 256, {3, 5, 9}).to(torch::kFloat32) / 255;
  write_rgb_png(dir / "i.png", img);
  EXPECT_TRUE(torch::equal(read_rgb_png(dir / "i.png"), img));
}

TEST(Colorize, RangeAndMask) {
  auto d = torch::linspace(0, 64, 32).view({4, 8});
  auto c = colorize_disparity(d, 64);
  EXPECT_EQ(c.sizes(), (std::vector<std::int64_t>{3, 4, 8}));
  EXPECT_GE(c.min().item<float>(), 0.0f);
  EXPECT_LE(c.max().item<float>(), 1.0f);
  EXPECT_FALSE(torch::equal(c.select(2, 0), c.select(2, 7)));

  auto mask = torch::ones({4, 8}, torch::kBool);
  mask[0][0] = false;
  auto e = colorize_error(d + 2, d, mask);
  EXPECT_EQ(e.select(1, 0).select(1, 0).abs().sum().item<float>(), 0.0f);
  EXPECT_GT(e.select(1, 1).select(1, 1).sum().item<float>(), 0.0f);
}

// ---- Synthetic ----------------------------------------------------------------

TEST(Synthetic, ZeroDisparityIsIdentity) {
  auto s = generate_synthetic_pair(3, 64, 128, 3, 0, 0);
  EXPECT_TRUE(torch::equal(s.left, s.right));
  EXPECT_TRUE(s.valid.all().item<bool>());
  EXPECT_EQ(s.gt.abs().max().item<float>(), 0.0f);
}

TEST(Synthetic, WarpOracleOverSeeds) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto s = generate_synthetic_pair(seed, 64, 128, 3, 0, 32);
    EXPECT_EQ(s.left.sizes(), (std::vector<std::int64_t>{3, 64, 128}));
    EXPECT_TRUE(torch::equal(s.gt, s.gt.round())) << "seed " << seed;
    EXPECT_GE(s.gt.min().item<float>(), 0.0f);
    EXPECT_LE(s.gt.max().item<float>(), 32.0f);
    // valid is exactly "match inside the frame".
    auto x = torch::arange(128, torch::kFloat32).view({1, 128});
    EXPECT_TRUE(torch::equal(s.valid, (x - s.gt) >= 0)) << "seed " << seed;
    const auto checked = check_warp(s.left, s.right, s.gt, s.valid);
    EXPECT_EQ(checked, s.valid.sum().item<std::int64_t>()) << "seed " << seed;
    EXPECT_GT(checked, 64 * 128 / 2);
    // Images are 8-bit levels in [0, 1].
    EXPECT_TRUE(torch::equal(s.left * 255, (s.left * 255).round()));
    EXPECT_GE(s.right.min().item<float>(), 0.0f);
    EXPECT_LE(s.right.max().item<float>(), 1.0f);
  }
}

TEST(Synthetic, ShapesAreNeverBehindTheBackground) {
  // The background is drawn first, so dropping the shapes leaves the plane.
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto with = generate_synthetic_pair(seed, 64, 128, 3, 0, 32);
    auto plane = generate_synthetic_pair(seed, 64, 128, 0, 0, 32);
    EXPECT_TRUE((with.gt >= plane.gt).all().item<bool>()) << "seed " << seed;
    EXPECT_TRUE((with.gt > plane.gt).any().item<bool>()) << "seed " << seed;
  }
}

TEST(Synthetic, DisparityHistogramHasNoGaps) {
  auto all = torch::cat({generate_synthetic_pair(0, 64, 128, 3, 0, 32).gt.flatten(),
                         generate_synthetic_pair(1, 64, 128, 3, 0, 32).gt.flatten(),
                         generate_synthetic_pair(2, 64, 128, 3, 0, 32).gt.flatten(),
                         generate_synthetic_pair(3, 64, 128, 3, 0, 32).gt.flatten()});
  auto hist = torch::histc(all, 4, 0, 32);
  EXPECT_TRUE((hist > 0).all().item<bool>()) << hist;
}

TEST(Synthetic, Deterministic) {
  auto a = generate_synthetic_pair(42, 64, 128, 3, 0, 32);
  auto b = generate_synthetic_pair(42, 64, 128, 3, 0, 32);
  auto c = generate_synthetic_pair(43, 64, 128, 3, 0, 32);
  EXPECT_TRUE(torch::equal(a.left, b.left));
  EXPECT_TRUE(torch::equal(a.right, b.right));
  EXPECT_TRUE(torch::equal(a.gt, b.gt));
  EXPECT_FALSE(torch::equal(a.right, c.right));
}

TEST(Synthetic, RejectsBadArguments) {
  EXPECT_THROW(generate_synthetic_pair(1, 60, 128, 3, 0, 32), ConfigError);
  EXPECT_THROW(generate_synthetic_pair(1, 64, 100, 3, 0, 32), ConfigError);
  EXPECT_THROW(generate_synthetic_pair(1, 64, 128, 3, 0, 128), ConfigError);
  EXPECT_THROW(generate_synthetic_pair(1, 64, 128, 3, 10, 5), ConfigError);
  EXPECT_THROW(generate_synthetic_pair(1, 64, 128, 3, -1, 5), ConfigError);
}

// ---- Preprocessing -------------------------------------------------------------

TEST(Preprocess, PaddedSizes) {
  EXPECT_EQ(padded_size(540), 544);
  EXPECT_EQ(padded_size(960), 960);
  EXPECT_EQ(padded_size(376), 384);
  EXPECT_EQ(padded_size(1240), 1248);
  EXPECT_EQ(padded_size(1), 32);
}

TEST(Preprocess, EvalPadsTopLeftAndUnpads) {
  std::mt19937_64 rng(0);
  for (auto [h, w, ph, pw] : std::vector<std::array<std::int64_t, 4>>{{540, 960, 544, 960}, {376, 1240, 384, 1248}}) {
    auto s = blank_sample(h, w);
    auto p = preprocess(s, DatasetSpec{}, false, rng);
    EXPECT_EQ(p.left.sizes(), (std::vector<std::int64_t>{3, ph, pw}));
    EXPECT_EQ(p.gt.sizes(), (std::vector<std::int64_t>{ph, pw}));
    EXPECT_EQ(p.pad_top, ph - h);
    EXPECT_EQ(p.pad_left, pw - w);
    EXPECT_TRUE(torch::equal(unpad(p.left, p), standardize(s.left)));
    EXPECT_TRUE(torch::equal(unpad(p.gt, p), s.gt));
    EXPECT_EQ(p.valid.sum().item<std::int64_t>(), h * w);
    EXPECT_EQ(p.left.narrow(1, 0, p.pad_top).abs().sum().item<float>(), 0.0f);
  }
}

TEST(Preprocess, StandardizeConstants) {
  auto img = torch::stack({torch::full({1, 1}, 0.485), torch::full({1, 1}, 0.456 + 0.224),
                           torch::full({1, 1}, 0.406 - 0.225)});
  auto z = standardize(img).flatten();
  EXPECT_NEAR(z[0].item<float>(), 0.0, 1e-6);
  EXPECT_NEAR(z[1].item<float>(), 1.0, 1e-6);
  EXPECT_NEAR(z[2].item<float>(), -1.0, 1e-6);
}

TEST(Preprocess, TrainingCropKeepsWarp) {
  DatasetSpec spec;
  spec.crop_height = 32;
  spec.crop_width = 64;
  std::mt19937_64 rng(9);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto s = generate_synthetic_pair(seed, 64, 128, 3, 0, 16);
    auto p = preprocess(s, spec, true, rng);
    ASSERT_EQ(p.left.sizes(), (std::vector<std::int64_t>{3, 32, 64}));
    // Inside the crop, a valid pixel whose match stays in the window still
    // satisfies the warp; standardization is the same map on both images.
    auto x = torch::arange(64, torch::kFloat32).view({1, 64});
    auto in_window = p.valid & ((x - p.gt) >= 0);
    const auto checked = check_warp(p.left, p.right, p.gt, in_window);
    EXPECT_GT(checked, 32 * 64 / 2) << "seed " << seed;
  }
  auto s = generate_synthetic_pair(1, 64, 128, 3, 0, 16);
  spec.crop_height = 96;
  EXPECT_THROW(preprocess(s, spec, true, rng), DataError);
}

TEST(Preprocess, CropWindowSharedByAllTensors) {
  auto s = blank_sample(64, 128);
  auto p = crop_sample(s, 10, 20, 32, 64);
  EXPECT_TRUE(torch::equal(p.gt, s.gt.narrow(0, 10, 32).narrow(1, 20, 64)));
  EXPECT_TRUE(torch::equal(p.left, standardize(s.left.narrow(1, 10, 32).narrow(2, 20, 64))));
  EXPECT_TRUE(torch::equal(p.right, standardize(s.right.narrow(1, 10, 32).narrow(2, 20, 64))));
  EXPECT_THROW(crop_sample(s, 40, 0, 32, 64), DataError);
}

// ---- Datasets ------------------------------------------------------------------

TEST(Dataset, SyntheticDirectoryMatchesGenerator) {
  testutil::TempDir dir;
  SynthConfig cfg;
  cfg.count = 3;
  write_synthetic_dataset(dir.path(), cfg, 7);
  EXPECT_TRUE(fs::exists(dir / "left/000002.png"));
  EXPECT_TRUE(fs::exists(dir / "disp/000000.pfm"));
  DatasetSpec spec;
  spec.root = dir.path().string();
  StereoDataset ds(spec);
  ASSERT_EQ(ds.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    auto want = generate_synthetic_pair(7 + i, cfg);
    auto got = ds.get(i);
    EXPECT_TRUE(torch::equal(got.left, want.left));
    EXPECT_TRUE(torch::equal(got.right, want.right));
    // Unlabeled pixels are stored as 0, so zero disparity reads back as unknown.
    EXPECT_TRUE(torch::equal(got.valid, want.valid & (want.gt > 0)));
    EXPECT_TRUE(torch::equal(got.gt, torch::where(got.valid, want.gt, torch::zeros_like(want.gt))));
  }
  EXPECT_THROW(ds.get(3), DataError);
}

TEST(Dataset, InMemorySyntheticIsCachedAndThreadSafe) {
  SynthConfig cfg;
  cfg.count = 4;
  StereoDataset ds(DatasetSpec{}, cfg, 11);
  ASSERT_EQ(ds.size(), 4u);
  std::vector<torch::Tensor> firsts(4);
  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&, t] { firsts[t] = ds.get(static_cast<std::size_t>(t % 2)).left; });
  }
  for (auto& th : threads) th.join();
  EXPECT_TRUE(torch::equal(firsts[0], firsts[2]));
  EXPECT_TRUE(torch::equal(firsts[0], generate_synthetic_pair(11, cfg).left));
  EXPECT_TRUE(torch::equal(firsts[1], generate_synthetic_pair(12, cfg).left));
}

TEST(Dataset, KittiLayoutAndSplit) {
  testutil::TempDir dir;
  const auto train = dir / "training";
  fs::create_directories(train / "image_2");
  fs::create_directories(train / "image_3");
  fs::create_directories(train / "disp_occ_0");
  fs::create_directories(dir / "testing/image_2");
  fs::create_directories(dir / "testing/image_3");
  char name[32];
  for (int i = 0; i < 7; ++i) {
    std::snprintf(name, sizeof(name), "%06d_10.png", i);
    write_rgb_png(train / "image_2" / name, torch::rand({3, 4, 8}));
    write_rgb_png(train / "image_3" / name, torch::rand({3, 4, 8}));
    write_png16(train / "disp_occ_0" / name, torch::full({4, 8}, 256 * (i + 1), torch::kInt32));
    // The _11 frames of each pair are not part of the disparity benchmark.
    std::snprintf(name, sizeof(name), "%06d_11.png", i);
    write_rgb_png(train / "image_2" / name, torch::rand({3, 4, 8}));
  }
  write_rgb_png(dir / "testing/image_2/000000_10.png", torch::rand({3, 4, 8}));
  write_rgb_png(dir / "testing/image_3/000000_10.png", torch::rand({3, 4, 8}));

  DatasetSpec spec;
  spec.kind = DatasetKind::kKitti;
  spec.root = dir.path().string();
  StereoDataset tr(spec);
  EXPECT_EQ(tr.size(), 5u);  // 1, 2, 3, 4, 6
  EXPECT_FLOAT_EQ(tr.get(0).gt[0][0].item<float>(), 2.0f);
  spec.split = Split::kVal;
  StereoDataset val(spec);
  ASSERT_EQ(val.size(), 2u);  // 0, 5
  EXPECT_FLOAT_EQ(val.get(1).gt[0][0].item<float>(), 6.0f);
  spec.split = Split::kTest;
  StereoDataset test(spec);
  ASSERT_EQ(test.size(), 1u);
  EXPECT_FALSE(test.get(0).valid.any().item<bool>());
}

TEST(Dataset, SceneFlowLayout) {
  testutil::TempDir dir;
  const auto seq = fs::path("TRAIN/A/0000");
  for (const auto* side : {"left", "right"}) fs::create_directories(dir / "frames_cleanpass" / seq / side);
  for (const char* frame : {"0006", "0007"}) {
    write_rgb_png(dir / "frames_cleanpass" / seq / "left" / (std::string(frame) + ".png"), torch::rand({3, 4, 8}));
    write_rgb_png(dir / "frames_cleanpass" / seq / "right" / (std::string(frame) + ".png"), torch::rand({3, 4, 8}));
    auto d = torch::full({4, 8}, 3.5f);
    d[0][0] = std::numeric_limits<float>::infinity();
    fs::create_directories(dir / "disparity" / seq / "left");
    write_pfm(dir / "disparity" / seq / "left" / (std::string(frame) + ".pfm"), d);
  }
  DatasetSpec spec;
  spec.kind = DatasetKind::kSceneFlow;
  spec.root = dir.path().string();
  StereoDataset ds(spec);
  ASSERT_EQ(ds.size(), 2u);
  auto s = ds.get(1);
  EXPECT_FALSE(s.valid[0][0].item<bool>());
  EXPECT_EQ(s.gt[0][0].item<float>(), 0.0f);
  EXPECT_FLOAT_EQ(s.gt[1][1].item<float>(), 3.5f);
  spec.split = Split::kTest;
  EXPECT_THROW(StereoDataset{spec}, DataError);
}

TEST(Dataset, MissingRoot) {
  DatasetSpec spec;
  spec.root = "/nonexistent/leanstereo";
  EXPECT_THROW(StereoDataset{spec}, DataError);
}
