#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <string>

namespace leanstereo {

// Percentages in [0, 100]. Thresholds are strict: an error of exactly k
// pixels does not count towards the k-px error.
struct MetricsReport {
  double epe = 0.0;
  double d1 = 0.0;
  double px3 = 0.0;
  double px2 = 0.0;
  double px1 = 0.0;
  std::int64_t valid_count = 0;
};

// All of these throw EmptyMaskError when mask selects no pixel. Tensors are
// promoted to double before reducing.
double compute_epe(const torch::Tensor& pred, const torch::Tensor& gt, const torch::Tensor& mask);
double compute_kpx(const torch::Tensor& pred, const torch::Tensor& gt, const torch::Tensor& mask, int k);
// |e| > 3 and |e| > 0.05 * gt.
double compute_d1(const torch::Tensor& pred, const torch::Tensor& gt, const torch::Tensor& mask);

MetricsReport compute_metrics(const torch::Tensor& pred, const torch::Tensor& gt, const torch::Tensor& mask);
// Mask from validity_mask(gt, max_disparity).
MetricsReport metrics_report(const torch::Tensor& pred, const torch::Tensor& gt, double max_disparity);

// Pools pixels across samples: the result equals metrics over the union of
// all masked pixels, i.e. per-sample reports weighted by valid_count.
class MetricsAccumulator {
 public:
  void add(const MetricsReport& r);
  bool empty() const { return count_ == 0; }
  // Throws EmptyMaskError if nothing was added.
  MetricsReport result() const;

 private:
  double abs_sum_ = 0.0;
  double d1_ = 0.0, px3_ = 0.0, px2_ = 0.0, px1_ = 0.0;  // pixel counts
  std::int64_t count_ = 0;
};

// "EPE(px)  D1(%)  3px(%)  2px(%)  1px(%)" header plus one row.
std::string format_table(const MetricsReport& r, const std::string& label = "");
// epe=... d1=... px3=... px2=... px1=... valid_count=..., one per line.
std::string format_key_values(const MetricsReport& r);

}  // namespace leanstereo
