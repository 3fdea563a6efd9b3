#include <gtest/gtest.h>

#include "leanstereo/cost_volume.hpp"
#include "leanstereo/error.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace leanstereo;

namespace {

// Level 3 with stride 8: one bin shifts one feature column.
FeatureMap fm(torch::Tensor t) { return {std::move(t), 3}; }

}  // namespace

TEST(CostVolume, BinShift) {
  EXPECT_DOUBLE_EQ(bin_shift(5, 8, 3), 5.0);
  EXPECT_DOUBLE_EQ(bin_shift(5, 4, 3), 2.5);
  EXPECT_DOUBLE_EQ(bin_shift(3, 1, 0), 3.0);
}

TEST(CostVolume, ConcatShapeFromBuilder) {
  torch::NoGradGuard ng;
  CostVolumeConfig cfg;
  CostVolumeBuilder builder(cfg, 128);
  auto v = builder->build_concat_volume(fm(torch::randn({1, 128, 32, 64})), fm(torch::randn({1, 128, 32, 64})));
  EXPECT_EQ(v.data.sizes(), (std::vector<std::int64_t>{1, 24, 24, 32, 64}));
  EXPECT_EQ(v.level, 3);
  EXPECT_EQ(v.disp_stride, 8);
}

TEST(CostVolume, ConcatZeroShiftIsChannelConcat) {
  auto l = torch::randn({1, 4, 3, 7});
  auto r = torch::randn({1, 4, 3, 7});
  auto v = concat_volume(fm(l), fm(r), 5, 8);
  EXPECT_TRUE(torch::equal(v.data.select(2, 0), torch::cat({l, r}, 1)));
}

TEST(CostVolume, ConcatMatchesLoopOracle) {
  torch::manual_seed(11);
  auto l = torch::randn({1, 4, 2, 5});
  auto r = torch::randn({1, 4, 2, 5});
  auto v = concat_volume(fm(l), fm(r), 4, 8);
  EXPECT_TRUE(torch::equal(v.data.to(torch::kFloat64), testutil::concat_oracle(l, r, 4)));
}

TEST(CostVolume, ConcatRejectsLevelMismatch) {
  auto l = torch::randn({1, 4, 2, 5});
  EXPECT_THROW(concat_volume(FeatureMap{l, 3}, FeatureMap{l, 2}, 4, 8), ContractError);
  EXPECT_THROW(concat_volume(fm(l), fm(torch::randn({1, 4, 2, 6})), 4, 8), ContractError);
  CostVolumeBuilder builder(CostVolumeConfig{}, 128);
  auto f = torch::randn({1, 128, 4, 8});
  EXPECT_THROW(builder->build_concat_volume(FeatureMap{f, 3}, FeatureMap{f, 4}), ContractError);
}

TEST(CostVolume, GwcOnesAndZeroFill) {
  auto ones = torch::ones({1, 32, 4, 8});
  auto v = build_gwc_volume(fm(ones), fm(ones), 8, 6, 8).data;
  EXPECT_EQ(v.sizes(), (std::vector<std::int64_t>{1, 8, 6, 4, 8}));
  for (std::int64_t d = 0; d < 6; ++d) {
    auto slice = v.select(2, d);
    EXPECT_TRUE(torch::equal(slice.narrow(3, d, 8 - d), torch::ones({1, 8, 4, 8 - d}))) << "bin " << d;
    if (d > 0) EXPECT_TRUE(torch::equal(slice.narrow(3, 0, d), torch::zeros({1, 8, 4, d}))) << "bin " << d;
  }
}

TEST(CostVolume, GwcMatchesLoopOracle) {
  torch::manual_seed(12);
  auto l = torch::randn({1, 8, 2, 6});
  auto r = torch::randn({1, 8, 2, 6});
  auto v = build_gwc_volume(fm(l), fm(r), 4, 4, 8).data.to(torch::kFloat64);
  EXPECT_LT((v - testutil::gwc_oracle(l, r, 4, 4)).abs().max().item<double>(), 1e-5);
}

TEST(CostVolume, GwcSingleChannelGroupsGiveSquares) {
  auto f = torch::randn({1, 6, 3, 5});
  auto v = build_gwc_volume(fm(f), fm(f), 6, 1, 8).data.select(2, 0);
  EXPECT_TRUE(torch::allclose(v, f * f));
}

TEST(CostVolume, GwcRejectsNonDividingGroups) {
  auto f = torch::randn({1, 8, 2, 6});
  EXPECT_THROW(build_gwc_volume(fm(f), fm(f), 3, 4, 8), ConfigError);
  EXPECT_THROW(build_gwc_volume(fm(f), fm(f), 0, 4, 8), ConfigError);
}

TEST(CostVolume, ZeroFillInvariantOnFullBuilder) {
  torch::NoGradGuard ng;
  torch::manual_seed(2);
  auto cfg = testutil::tiny_model().cost_volume;
  CostVolumeBuilder builder(cfg, 16);
  builder->eval();
  auto l = fm(torch::randn({1, 16, 4, 12}));
  auto r = fm(torch::randn({1, 16, 4, 12}));
  auto pre = builder->build_concat_volume(l, r).data;
  auto corr = build_gwc_volume(l, r, cfg).data;
  for (std::int64_t d = 1; d < cfg.bins(); ++d) {
    EXPECT_EQ(pre.select(2, d).narrow(3, 0, d).abs().max().item<float>(), 0.0f);
    EXPECT_EQ(corr.select(2, d).narrow(3, 0, d).abs().max().item<float>(), 0.0f);
  }
}

TEST(CostVolume, HalfPixelStrideInterpolates) {
  // disp_stride 4 at level 3: odd bins fall between feature columns.
  auto l = torch::ones({1, 2, 1, 6});
  auto r = torch::arange(6, torch::kFloat32).view({1, 1, 1, 6}).expand({1, 2, 1, 6}).contiguous();
  auto v = concat_volume(fm(l), fm(r), 3, 4).data;
  auto right_bin1 = v.select(2, 1).select(1, 2).flatten();
  // Columns x >= 1 sample r at x - 0.5.
  for (std::int64_t x = 1; x < 6; ++x) EXPECT_FLOAT_EQ(right_bin1[x].item<float>(), static_cast<float>(x) - 0.5f);
  EXPECT_EQ(right_bin1[0].item<float>(), 0.0f);
}

TEST(Attention, ShapeAndRange) {
  torch::NoGradGuard ng;
  torch::manual_seed(4);
  AttentionNet net(CostVolumeConfig{});
  net->eval();
  auto w = net->forward(CostVolume{torch::randn({1, 32, 24, 32, 64}), 3, 8}).data;
  EXPECT_EQ(w.sizes(), (std::vector<std::int64_t>{1, 1, 24, 32, 64}));
  EXPECT_GT(w.min().item<float>(), 0.0f);
  EXPECT_LT(w.max().item<float>(), 1.0f);
}

TEST(Attention, SubgroupSplit) {
  EXPECT_EQ(CostVolumeConfig{}.subgroup_sizes(), (std::vector<std::int64_t>{11, 11, 10}));
  CostVolumeConfig c;
  c.num_groups = 4;
  EXPECT_EQ(c.subgroup_sizes(), (std::vector<std::int64_t>{2, 1, 1}));
}

TEST(Attention, Nonlinear) {
  torch::NoGradGuard ng;
  torch::manual_seed(5);
  auto cfg = testutil::tiny_model().cost_volume;
  AttentionNet net(cfg);
  net->eval();
  auto x = torch::randn(std::vector<std::int64_t>{1, cfg.num_groups, 8, 4, 8});
  auto a = net->forward(CostVolume{x, 3, 8}).data;
  auto b = net->forward(CostVolume{2 * x, 3, 8}).data;
  EXPECT_FALSE(torch::allclose(b, 2 * a, 1e-3, 1e-4));
}

TEST(Attention, GradientReachesEverySubgroup) {
  torch::manual_seed(6);
  auto cfg = testutil::tiny_model().cost_volume;
  cfg.num_groups = 6;  // subgroups {2, 2, 2}
  AttentionNet net(cfg);
  net->to(torch::kFloat64);
  net->eval();
  auto x = torch::randn({1, 6, 4, 4, 4}, torch::kFloat64).requires_grad_();
  net->forward(CostVolume{x, 3, 8}).data.sum().backward();
  auto grad = x.grad();
  auto f = [&](torch::Tensor t) { return net->forward(CostVolume{t, 3, 8}).data.sum().item<double>(); };
  auto x0 = x.detach().clone();
  const std::int64_t block = 2 * 4 * 4 * 4;
  for (std::int64_t g = 0; g < 3; ++g) {
    EXPECT_GT(grad.narrow(1, 2 * g, 2).abs().sum().item<double>(), 0.0) << "subgroup " << g;
    const auto idx = g * block + 37;
    EXPECT_NEAR(testutil::central_difference(f, x0, idx), grad.view({-1})[idx].item<double>(), 1e-6);
  }
}

TEST(Attention, ApplyIdentityAndAnnihilation) {
  auto pre = CostVolume{torch::randn({2, 5, 3, 4, 6}), 3, 8};
  auto ones = AttentionWeights{torch::ones({2, 1, 3, 4, 6})};
  auto zeros = AttentionWeights{torch::zeros({2, 1, 3, 4, 6})};
  EXPECT_TRUE(torch::equal(apply_attention(pre, ones).data, pre.data));
  EXPECT_TRUE(torch::equal(apply_attention(pre, zeros).data, torch::zeros_like(pre.data)));
}

TEST(Attention, ApplyMatchesLoopAndIsLinear) {
  torch::manual_seed(7);
  auto p = torch::randn({1, 3, 2, 2, 3}, torch::kFloat64);
  auto a = torch::rand({1, 1, 2, 2, 3}, torch::kFloat64);
  auto out = apply_attention(CostVolume{p, 3, 8}, AttentionWeights{a}).data;
  auto P = p.accessor<double, 5>();
  auto A = a.accessor<double, 5>();
  auto O = out.accessor<double, 5>();
  for (int c = 0; c < 3; ++c)
    for (int d = 0; d < 2; ++d)
      for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 3; ++x) EXPECT_EQ(O[0][c][d][y][x], P[0][c][d][y][x] * A[0][0][d][y][x]);

  auto p1 = torch::randn({1, 3, 2, 2, 3});
  auto p2 = torch::randn({1, 3, 2, 2, 3});
  auto w = AttentionWeights{torch::rand({1, 1, 2, 2, 3})};
  auto lhs = apply_attention(CostVolume{1.5 * p1 - 0.25 * p2, 3, 8}, w).data;
  auto rhs = 1.5 * apply_attention(CostVolume{p1, 3, 8}, w).data - 0.25 * apply_attention(CostVolume{p2, 3, 8}, w).data;
  EXPECT_LT((lhs - rhs).abs().max().item<float>(), 1e-6f);
}

TEST(Attention, ApplyRejectsShapeMismatch) {
  auto pre = CostVolume{torch::randn({1, 4, 3, 4, 6}), 3, 8};
  EXPECT_THROW(apply_attention(pre, AttentionWeights{torch::ones({1, 2, 3, 4, 6})}), ContractError);
  EXPECT_THROW(apply_attention(pre, AttentionWeights{torch::ones({1, 1, 2, 4, 6})}), ContractError);
}

TEST(Attention, DisabledSwitchKeepsShape) {
  torch::NoGradGuard ng;
  auto on = testutil::tiny_model().cost_volume;
  auto off = on;
  off.attention = false;
  CostVolumeBuilder a(on, 16), b(off, 16);
  a->eval();
  b->eval();
  auto l = fm(torch::randn({1, 16, 4, 12}));
  auto r = fm(torch::randn({1, 16, 4, 12}));
  EXPECT_EQ(a->forward(l, r).data.sizes(), b->forward(l, r).data.sizes());
  EXPECT_TRUE(torch::equal(b->forward(l, r).data, b->build_concat_volume(l, r).data));
  EXPECT_THROW(b->compute_attention_weights(CostVolume{torch::randn({1, 4, 8, 4, 12}), 3, 8}), ContractError);
}

TEST(CostVolumeConfig, Validation) {
  CostVolumeConfig c;
  EXPECT_NO_THROW(c.validate(128));
  EXPECT_THROW(c.validate(100), ConfigError);  // 32 groups do not divide 100
  c.max_disparity = 100;                       // not a multiple of the bin stride
  EXPECT_THROW(c.validate(128), ConfigError);
}
