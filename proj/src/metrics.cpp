#include "leanstereo/metrics.hpp"

#include <cstdio>

#include "leanstereo/error.hpp"
#include "leanstereo/losses.hpp"

namespace leanstereo {

namespace {

// |pred - gt| and gt over the masked pixels, as double.
std::pair<torch::Tensor, torch::Tensor> masked_abs_error(const torch::Tensor& pred, const torch::Tensor& gt,
                                                         const torch::Tensor& mask) {
  if (pred.sizes() != gt.sizes() || mask.sizes() != gt.sizes()) {
    throw ContractError("metrics: prediction, ground truth and mask shapes differ");
  }
  auto m = mask.to(torch::kBool);
  auto g = gt.to(torch::kFloat64).masked_select(m);
  if (g.numel() == 0) throw EmptyMaskError();
  auto e = (pred.to(torch::kFloat64).masked_select(m) - g).abs();
  return {e, g};
}

template <typename... Args>
std::string format(const char* pattern, Args... args) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), pattern, args...);
  return buf;
}

double percent(const torch::Tensor& flags) { return 100.0 * flags.to(torch::kFloat64).mean().item<double>(); }

}  // namespace

double compute_epe(const torch::Tensor& pred, const torch::Tensor& gt, const torch::Tensor& mask) {
  return masked_abs_error(pred, gt, mask).first.mean().item<double>();
}

double compute_kpx(const torch::Tensor& pred, const torch::Tensor& gt, const torch::Tensor& mask, int k) {
  if (k < 1 || k > 3) throw ConfigError("compute_kpx: k must be 1, 2 or 3");
  return percent(masked_abs_error(pred, gt, mask).first > k);
}

double compute_d1(const torch::Tensor& pred, const torch::Tensor& gt, const torch::Tensor& mask) {
  auto [e, g] = masked_abs_error(pred, gt, mask);
  return percent((e > 3.0) & (e > 0.05 * g));
}

MetricsReport compute_metrics(const torch::Tensor& pred, const torch::Tensor& gt, const torch::Tensor& mask) {
  auto [e, g] = masked_abs_error(pred, gt, mask);
  MetricsReport r;
  r.epe = e.mean().item<double>();
  r.d1 = percent((e > 3.0) & (e > 0.05 * g));
  r.px3 = percent(e > 3.0);
  r.px2 = percent(e > 2.0);
  r.px1 = percent(e > 1.0);
  r.valid_count = e.numel();
  return r;
}

MetricsReport metrics_report(const torch::Tensor& pred, const torch::Tensor& gt, double max_disparity) {
  return compute_metrics(pred, gt, validity_mask(gt, max_disparity));
}

void MetricsAccumulator::add(const MetricsReport& r) {
  const auto n = static_cast<double>(r.valid_count);
  abs_sum_ += r.epe * n;
  d1_ += r.d1 * n / 100.0;
  px3_ += r.px3 * n / 100.0;
  px2_ += r.px2 * n / 100.0;
  px1_ += r.px1 * n / 100.0;
  count_ += r.valid_count;
}

MetricsReport MetricsAccumulator::result() const {
  if (count_ == 0) throw EmptyMaskError();
  const auto n = static_cast<double>(count_);
  return {abs_sum_ / n, 100.0 * d1_ / n, 100.0 * px3_ / n, 100.0 * px2_ / n, 100.0 * px1_ / n, count_};
}

std::string format_table(const MetricsReport& r, const std::string& label) {
  return format("%-12s%9s%9s%9s%9s%9s%12s\n", "", "EPE(px)", "D1(%)", "3px(%)", "2px(%)", "1px(%)", "pixels") +
         format("%-12s%9.4f%9.2f%9.2f%9.2f%9.2f%12lld\n", label.c_str(), r.epe, r.d1, r.px3, r.px2, r.px1,
                static_cast<long long>(r.valid_count));
}

std::string format_key_values(const MetricsReport& r) {
  return format("epe=%.6f\nd1=%.4f\npx3=%.4f\npx2=%.4f\npx1=%.4f\nvalid_count=%lld\n", r.epe, r.d1, r.px3,
                r.px2, r.px1, static_cast<long long>(r.valid_count));
}

}  // namespace leanstereo
