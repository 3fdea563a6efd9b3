#include "leanstereo/losses.hpp"

#include "leanstereo/error.hpp"

namespace leanstereo {

namespace {

torch::Tensor masked_errors(const torch::Tensor& pred, const torch::Tensor& gt, const torch::Tensor& mask) {
  if (pred.sizes() != gt.sizes() || mask.sizes() != gt.sizes()) {
    throw ContractError("loss: prediction, ground truth and mask shapes differ");
  }
  auto m = mask.to(torch::kBool);
  if (!m.any().item<bool>()) throw EmptyMaskError();
  return pred.masked_select(m) - gt.masked_select(m);
}

}  // namespace

torch::Tensor validity_mask(const torch::Tensor& gt, double max_disparity) {
  return (gt > 0) & (gt < max_disparity);
}

torch::Tensor logl1_loss(const torch::Tensor& pred, const torch::Tensor& gt, const torch::Tensor& mask,
                         double epsilon) {
  if (!(epsilon > 0.0)) throw ConfigError("logl1_loss: epsilon must be > 0");
  return torch::log(masked_errors(pred, gt, mask).abs() + epsilon).mean();
}

torch::Tensor baseline_loss(const torch::Tensor& pred, const torch::Tensor& gt, const torch::Tensor& mask,
                            LossKind kind) {
  auto e = masked_errors(pred, gt, mask);
  switch (kind) {
    case LossKind::kL1:
      return e.abs().mean();
    case LossKind::kL2:
      return e.square().mean();
    case LossKind::kSmoothL1: {
      auto a = e.abs();
      return torch::where(a < 1.0, 0.5 * e.square(), a - 0.5).mean();
    }
    case LossKind::kLogL1:
      break;
  }
  throw ConfigError("baseline_loss: unsupported kind '" + to_string(kind) + "'");
}

torch::Tensor disparity_loss(const torch::Tensor& pred, const torch::Tensor& gt, const torch::Tensor& mask,
                             const LossConfig& cfg) {
  if (cfg.kind == LossKind::kLogL1) return logl1_loss(pred, gt, mask, cfg.epsilon);
  return baseline_loss(pred, gt, mask, cfg.kind);
}

torch::Tensor multi_output_loss(const HeadOutputs& outs, const torch::Tensor& gt, const torch::Tensor& mask,
                                const LossConfig& cfg) {
  cfg.validate();
  const std::array<const torch::Tensor*, 3> preds{&outs.out0.data, &outs.out1.data, &outs.out2.data};
  torch::Tensor total;
  for (std::size_t k = 0; k < preds.size(); ++k) {
    if (cfg.output_weights[k] == 0.0) continue;
    auto term = cfg.output_weights[k] * disparity_loss(*preds[k], gt, mask, cfg);
    total = total.defined() ? total + term : term;
  }
  return total;
}

}  // namespace leanstereo
