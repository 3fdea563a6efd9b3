#pragma once

// Brute-force reference implementations. Plain loops over accessors, no
// vectorized tensor ops, so they share no code path with the library.

#include <torch/torch.h>

#include <cmath>
#include <cstdint>

#include "leanstereo/metrics.hpp"

namespace leanstereo::testutil {

// One bin shifts one column.
inline torch::Tensor concat_oracle(const torch::Tensor& l, const torch::Tensor& r, std::int64_t bins) {
  const auto b = l.size(0), c = l.size(1), h = l.size(2), w = l.size(3);
  auto out = torch::zeros({b, 2 * c, bins, h, w}, torch::kFloat64);
  auto la = l.to(torch::kFloat64);
  auto ra = r.to(torch::kFloat64);
  auto L = la.accessor<double, 4>();
  auto R = ra.accessor<double, 4>();
  auto O = out.accessor<double, 5>();
  for (std::int64_t n = 0; n < b; ++n)
    for (std::int64_t d = 0; d < bins; ++d)
      for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = d; x < w; ++x)
          for (std::int64_t k = 0; k < c; ++k) {
            O[n][k][d][y][x] = L[n][k][y][x];
            O[n][c + k][d][y][x] = R[n][k][y][x - d];
          }
  return out;
}

inline torch::Tensor gwc_oracle(const torch::Tensor& l, const torch::Tensor& r, std::int64_t groups,
                                std::int64_t bins) {
  const auto b = l.size(0), c = l.size(1), h = l.size(2), w = l.size(3);
  const auto ng = c / groups;
  auto out = torch::zeros({b, groups, bins, h, w}, torch::kFloat64);
  auto la = l.to(torch::kFloat64);
  auto ra = r.to(torch::kFloat64);
  auto L = la.accessor<double, 4>();
  auto R = ra.accessor<double, 4>();
  auto O = out.accessor<double, 5>();
  for (std::int64_t n = 0; n < b; ++n)
    for (std::int64_t g = 0; g < groups; ++g)
      for (std::int64_t d = 0; d < bins; ++d)
        for (std::int64_t y = 0; y < h; ++y)
          for (std::int64_t x = d; x < w; ++x) {
            double dot = 0;
            for (std::int64_t k = g * ng; k < (g + 1) * ng; ++k) dot += L[n][k][y][x] * R[n][k][y][x - d];
            O[n][g][d][y][x] = dot / static_cast<double>(ng);
          }
  return out;
}

// Per-pixel metrics over 2D fields; valid where 0 < gt < max_disparity.
inline MetricsReport metrics_oracle(const torch::Tensor& pred, const torch::Tensor& gt, double max_disparity) {
  auto p = pred.to(torch::kFloat64).contiguous();
  auto g = gt.to(torch::kFloat64).contiguous();
  auto P = p.accessor<double, 2>();
  auto G = g.accessor<double, 2>();
  double abs_sum = 0;
  std::int64_t n = 0, d1 = 0, px3 = 0, px2 = 0, px1 = 0;
  for (std::int64_t y = 0; y < p.size(0); ++y) {
    for (std::int64_t x = 0; x < p.size(1); ++x) {
      const double gv = G[y][x];
      if (!(gv > 0 && gv < max_disparity)) continue;
      const double e = std::fabs(P[y][x] - gv);
      abs_sum += e;
      ++n;
      if (e > 3 && e > 0.05 * gv) ++d1;
      if (e > 3) ++px3;
      if (e > 2) ++px2;
      if (e > 1) ++px1;
    }
  }
  MetricsReport r;
  r.valid_count = n;
  if (n == 0) return r;
  const double dn = static_cast<double>(n);
  r.epe = abs_sum / dn;
  r.d1 = 100.0 * static_cast<double>(d1) / dn;
  r.px3 = 100.0 * static_cast<double>(px3) / dn;
  r.px2 = 100.0 * static_cast<double>(px2) / dn;
  r.px1 = 100.0 * static_cast<double>(px1) / dn;
  return r;
}

// Largest absolute field difference between two reports; valid_count must match.
inline double report_distance(const MetricsReport& a, const MetricsReport& b) {
  if (a.valid_count != b.valid_count) return INFINITY;
  double m = 0;
  for (double v : {a.epe - b.epe, a.d1 - b.d1, a.px3 - b.px3, a.px2 - b.px2, a.px1 - b.px1}) m = std::max(m, std::fabs(v));
  return m;
}

// Field with a share of unlabeled zeros, a few out-of-range values and
// errors spread around the 1/2/3 px thresholds.
inline std::pair<torch::Tensor, torch::Tensor> random_field_pair(std::int64_t h, std::int64_t w,
                                                                 double max_disparity) {
  auto gt = torch::rand({h, w}, torch::kFloat64) * (max_disparity + 10);
  gt = torch::where(torch::rand({h, w}) < 0.2, torch::zeros_like(gt), gt);
  auto err = (torch::rand({h, w}, torch::kFloat64) - 0.5) * 12;
  // A few exact threshold hits.
  err.view({-1}).narrow(0, 0, 3).copy_(torch::tensor({3.0, -2.0, 1.0}, torch::kFloat64));
  return {gt + err, gt};
}

// Valid pixels where left(x) differs from right(x - gt) in any channel, or
// where the match falls outside the frame.
inline std::int64_t warp_mismatches(const torch::Tensor& left, const torch::Tensor& right, const torch::Tensor& gt,
                                    const torch::Tensor& valid) {
  auto L = left.accessor<float, 3>();
  auto R = right.accessor<float, 3>();
  auto G = gt.accessor<float, 2>();
  auto V = valid.accessor<bool, 2>();
  std::int64_t bad = 0;
  for (std::int64_t y = 0; y < gt.size(0); ++y) {
    for (std::int64_t x = 0; x < gt.size(1); ++x) {
      if (!V[y][x]) continue;
      const auto src = x - static_cast<std::int64_t>(G[y][x]);
      bool ok = src >= 0;
      for (int c = 0; ok && c < 3; ++c) ok = L[c][y][x] == R[c][y][src];
      bad += ok ? 0 : 1;
    }
  }
  return bad;
}

}  // namespace leanstereo::testutil
