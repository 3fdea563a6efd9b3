#include "leanstereo/train.hpp"

#include <ATen/Parallel.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "leanstereo/error.hpp"
#include "leanstereo/losses.hpp"

namespace leanstereo {

namespace fs = std::filesystem;

std::string select_device_name(const std::string& flag, const std::string& configured) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv(kDeviceEnvVar); env != nullptr && *env != '\0') return env;
  return configured.empty() ? "cpu" : configured;
}

torch::Device resolve_device(const std::string& name) {
  std::optional<torch::Device> dev;
  try {
    dev.emplace(name);
  } catch (const std::exception&) {
    throw ConfigError("unknown device '" + name + "'");
  }
  if (dev->is_cuda() && !torch::cuda::is_available()) {
    throw ConfigError("device '" + name + "' requested but CUDA is not available");
  }
  if (!dev->is_cpu() && !dev->is_cuda()) throw ConfigError("unsupported device '" + name + "'");
  return *dev;
}

void synchronize_device(const torch::Device& device) {
  if (device.is_cuda()) torch::cuda::synchronize(device.index() < 0 ? -1 : device.index());
}

void make_deterministic(std::uint64_t seed) {
  at::set_num_threads(1);
  at::globalContext().setDeterministicAlgorithms(true, false);
  torch::manual_seed(seed);
}

double learning_rate_at(const TrainConfig& cfg, std::int64_t iteration) {
  double lr = cfg.lr;
  for (auto step : cfg.resolved_lr_steps()) {
    if (iteration >= step) lr *= cfg.lr_decay;
  }
  return lr;
}

std::unique_ptr<torch::optim::Optimizer> make_optimizer(const TrainConfig& cfg,
                                                        const std::vector<torch::Tensor>& params) {
  switch (cfg.optimizer) {
    case OptimizerKind::kAdam:
      return std::make_unique<torch::optim::Adam>(
          params, torch::optim::AdamOptions(cfg.lr).betas({cfg.beta1, cfg.beta2}).weight_decay(cfg.weight_decay));
    case OptimizerKind::kAdamW:
      return std::make_unique<torch::optim::AdamW>(
          params, torch::optim::AdamWOptions(cfg.lr).betas({cfg.beta1, cfg.beta2}).weight_decay(cfg.weight_decay));
    case OptimizerKind::kSgd:
      return std::make_unique<torch::optim::SGD>(
          params, torch::optim::SGDOptions(cfg.lr).momentum(cfg.momentum).weight_decay(cfg.weight_decay));
  }
  throw ConfigError("unknown optimizer");
}

namespace {

void set_lr(torch::optim::Optimizer& opt, double lr) {
  for (auto& group : opt.param_groups()) group.options().set_lr(lr);
}

std::string format(const char* pattern, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), pattern, args...);
  return buf;
}

// splitmix64 finaliser: decorrelates seeds derived from (seed, counter).
std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace

Batch collate(const std::vector<PreparedPair>& pairs, double max_disparity, const torch::Device& device) {
  std::vector<torch::Tensor> l, r, g, m;
  for (const auto& p : pairs) {
    l.push_back(p.left);
    r.push_back(p.right);
    g.push_back(p.gt);
    m.push_back(p.valid.to(torch::kBool) & validity_mask(p.gt, max_disparity));
  }
  return {torch::stack(l).to(device), torch::stack(r).to(device), torch::stack(g).to(device),
          torch::stack(m).to(device)};
}

torch::Tensor predict_disparity(LeanStereoNet& net, const StereoSample& sample, const torch::Device& device) {
  std::mt19937_64 unused;
  StereoSample images = sample;
  if (!images.gt.defined()) {
    images.gt = torch::zeros({sample.height(), sample.width()});
    images.valid = torch::zeros({sample.height(), sample.width()}, torch::kBool);
  }
  auto p = preprocess(images, DatasetSpec{}, false, unused);
  torch::NoGradGuard no_grad;
  const bool was_training = net->is_training();
  net->eval();
  ImageBatch left(p.left.unsqueeze(0).to(device), p.orig_height, p.orig_width);
  ImageBatch right(p.right.unsqueeze(0).to(device), p.orig_height, p.orig_width);
  auto disp = net->infer(left, right).data[0].to(torch::kCPU);
  net->train(was_training);
  return unpad(disp, p).contiguous();
}

EvaluationResult evaluate_predictions(const StereoDataset& dataset, double max_disparity, const Predictor& predict,
                                      std::size_t limit) {
  EvaluationResult out;
  MetricsAccumulator acc;
  const auto n = limit == 0 ? dataset.size() : std::min(limit, dataset.size());
  for (std::size_t i = 0; i < n; ++i) {
    auto s = dataset.get(i);
    auto mask = s.valid.to(torch::kBool) & validity_mask(s.gt, max_disparity);
    if (!mask.any().item<bool>()) continue;  // e.g. test splits without ground truth
    auto r = compute_metrics(predict(s), s.gt, mask);
    acc.add(r);
    out.per_sample.emplace_back(s.name, r);
  }
  out.overall = acc.result();
  return out;
}

EvaluationResult evaluate_model(LeanStereoNet& net, const StereoDataset& dataset, double max_disparity,
                                const torch::Device& device, std::size_t limit) {
  return evaluate_predictions(
      dataset, max_disparity, [&](const StereoSample& s) { return predict_disparity(net, s, device); }, limit);
}

std::string curve_csv_header() { return "iteration,lr,loss,val_epe\n"; }

std::string curve_csv_row(const CurvePoint& p) {
  auto row = format("%lld,%.9g,%.9g,", static_cast<long long>(p.iteration), p.lr, p.loss);
  if (p.val_epe) row += format("%.9g", *p.val_epe);
  return row + "\n";
}

std::string model_signature(const RunConfig& cfg) {
  std::istringstream in(to_config_text(cfg));
  std::string line, out;
  while (std::getline(in, line)) {
    if (line.rfind("backbone.", 0) == 0 || line.rfind("cost_volume.", 0) == 0 || line.rfind("head.", 0) == 0) {
      out += line + "\n";
    }
  }
  return out;
}

void save_checkpoint(const fs::path& path, LeanStereoNet& net, torch::optim::Optimizer* optimizer,
                     std::int64_t iteration, const RunConfig& cfg) {
  torch::serialize::OutputArchive archive;
  torch::serialize::OutputArchive model;
  net->save(model);
  archive.write("model", model);
  if (optimizer != nullptr) {
    torch::serialize::OutputArchive opt;
    optimizer->save(opt);
    archive.write("optimizer", opt);
  }
  archive.write("iteration", torch::tensor(iteration, torch::kInt64));
  archive.write("model_config", c10::IValue(model_signature(cfg)));
  // Write-then-rename so an interrupted save never clobbers the old file.
  const auto tmp = fs::path(path.string() + ".tmp");
  archive.save_to(tmp.string());
  fs::rename(tmp, path);
}

std::int64_t load_checkpoint(const fs::path& path, LeanStereoNet& net, torch::optim::Optimizer* optimizer,
                             const RunConfig& cfg) {
  if (!fs::is_regular_file(path)) throw DataError("checkpoint not found: " + path.string());
  torch::serialize::InputArchive archive;
  try {
    archive.load_from(path.string());
  } catch (const c10::Error& e) {
    throw DataError("unreadable checkpoint " + path.string());
  }
  c10::IValue signature;
  if (!archive.try_read("model_config", signature) || !signature.isString()) {
    throw DataError("checkpoint " + path.string() + " has no model config");
  }
  if (signature.toStringRef() != model_signature(cfg)) {
    throw ConfigError("checkpoint " + path.string() + " was trained with a different model config");
  }
  torch::serialize::InputArchive model;
  archive.read("model", model);
  net->load(model);
  if (optimizer != nullptr) {
    torch::serialize::InputArchive opt;
    if (archive.try_read("optimizer", opt)) optimizer->load(opt);
  }
  torch::Tensor it;
  archive.read("iteration", it);
  return it.item<std::int64_t>();
}

Trainer::Trainer(RunConfig cfg, torch::Device device, fs::path out_dir)
    : cfg_(std::move(cfg)), device_(device), out_dir_(std::move(out_dir)) {
  cfg_.validate();
  torch::manual_seed(cfg_.seed);
  net_ = LeanStereoNet(cfg_.model);
  net_->to(device_);
  optimizer_ = make_optimizer(cfg_.train, net_->parameters());
  if (!out_dir_.empty()) {
    fs::create_directories(out_dir_);
    std::ofstream(out_dir_ / "config.txt") << to_config_text(cfg_);
  }
}

void Trainer::resume(const fs::path& path) {
  iteration_ = load_checkpoint(path, net_, optimizer_.get(), cfg_);
  net_->to(device_);
}

std::vector<std::size_t> Trainer::next_batch_indices(std::size_t n) {
  // Sample position p = it * B + j walks through one shuffled permutation per
  // epoch; everything is a function of (seed, iteration) so resumed runs see
  // the same batches.
  std::vector<std::size_t> out;
  const auto b = static_cast<std::uint64_t>(cfg_.train.batch_size);
  for (std::uint64_t j = 0; j < b; ++j) {
    const auto p = static_cast<std::uint64_t>(iteration_) * b + j;
    const auto epoch = p / n;
    if (order_.size() != n || cursor_ != epoch + 1) {
      order_.resize(n);
      for (std::size_t i = 0; i < n; ++i) order_[i] = i;
      std::mt19937_64 g(mix(cfg_.seed ^ mix(epoch)));
      for (std::size_t i = n - 1; i > 0; --i) std::swap(order_[i], order_[g() % (i + 1)]);
      cursor_ = epoch + 1;
    }
    out.push_back(order_[p % n]);
  }
  return out;
}

TrainSummary Trainer::train(const StereoDataset& data, const StereoDataset* val) {
  TrainSummary summary;
  const auto& tc = cfg_.train;
  const double maxd = static_cast<double>(cfg_.model.cost_volume.max_disparity);
  std::ofstream csv;
  if (!out_dir_.empty()) {
    const auto path = out_dir_ / "loss_curve.csv";
    const bool append = iteration_ > 0 && fs::exists(path);
    csv.open(path, append ? std::ios::app : std::ios::trunc);
    if (!append) csv << curve_csv_header();
    summary.last_checkpoint = out_dir_ / "last.pt";
    summary.best_checkpoint = out_dir_ / "best.pt";
  }
  std::optional<double> best;
  double window = 0.0;
  std::int64_t window_n = 0;

  net_->train();
  while (iteration_ < tc.iterations) {
    const double lr = learning_rate_at(tc, iteration_);
    set_lr(*optimizer_, lr);
    std::mt19937_64 crop_rng(mix(cfg_.seed + 0x5bd1e995ull * static_cast<std::uint64_t>(iteration_ + 1)));
    std::vector<PreparedPair> pairs;
    for (auto i : next_batch_indices(data.size())) pairs.push_back(preprocess(data.get(i), data.spec(), true, crop_rng));
    auto batch = collate(pairs, maxd, device_);

    auto outs = net_->forward_train(ImageBatch(batch.left), ImageBatch(batch.right));
    auto loss = multi_output_loss(outs, batch.gt, batch.mask, cfg_.loss);
    optimizer_->zero_grad();
    loss.backward();
    optimizer_->step();
    ++iteration_;

    CurvePoint point{iteration_, lr, loss.item<double>(), std::nullopt};
    window += point.loss;
    ++window_n;
    const bool last = iteration_ == tc.iterations;
    if (val != nullptr && tc.val_every > 0 && (iteration_ % tc.val_every == 0 || last)) {
      point.val_epe = evaluate_model(net_, *val, maxd, device_).overall.epe;
      net_->train();
    }
    if (csv.is_open()) csv << curve_csv_row(point) << std::flush;
    summary.curve.push_back(point);

    const bool log_point = tc.log_every > 0 && (iteration_ % tc.log_every == 0 || last);
    if (log_point && log_) {
      auto msg = format("iter %lld  lr %.3g  loss %.4f", static_cast<long long>(iteration_), lr, window / window_n);
      if (point.val_epe) msg += format("  val_epe %.4f", *point.val_epe);
      log_(msg);
    }
    // Best model: lowest validation EPE, or lowest windowed training loss
    // when no validation set is configured.
    std::optional<double> score;
    if (point.val_epe) score = point.val_epe;
    else if (val == nullptr && log_point) score = window / window_n;
    if (log_point) {
      window = 0.0;
      window_n = 0;
    }
    if (score && (!best || *score < *best)) {
      best = score;
      if (!out_dir_.empty()) save_checkpoint(summary.best_checkpoint, net_, optimizer_.get(), iteration_, cfg_);
    }
    if (!out_dir_.empty() && (log_point || last)) {
      save_checkpoint(summary.last_checkpoint, net_, optimizer_.get(), iteration_, cfg_);
    }
  }
  if (val != nullptr && tc.val_every > 0) summary.best_val_epe = best;
  return summary;
}

}  // namespace leanstereo
