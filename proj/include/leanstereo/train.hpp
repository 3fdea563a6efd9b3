#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "leanstereo/config.hpp"
#include "leanstereo/data.hpp"
#include "leanstereo/metrics.hpp"
#include "leanstereo/model.hpp"

namespace leanstereo {

// Environment variable that overrides the configured device.
inline constexpr const char* kDeviceEnvVar = "LEANSTEREO_DEVICE";

// Device precedence: explicit flag, then $LEANSTEREO_DEVICE, then config.
std::string select_device_name(const std::string& flag, const std::string& configured);
// "cpu", "cuda" or "cuda:N". Throws ConfigError if the device is unknown
// or not available in this build.
torch::Device resolve_device(const std::string& name);
// Blocks until queued work on the device has finished.
void synchronize_device(const torch::Device& device);

// Single-threaded CPU execution with deterministic kernels.
void make_deterministic(std::uint64_t seed);

// Learning rate at `iteration` (0-based): lr * decay^(number of steps <= it).
double learning_rate_at(const TrainConfig& cfg, std::int64_t iteration);

std::unique_ptr<torch::optim::Optimizer> make_optimizer(const TrainConfig& cfg,
                                                        const std::vector<torch::Tensor>& params);

// Batched training input built from several PreparedPairs of equal size.
struct Batch {
  torch::Tensor left, right, gt, mask;
};
Batch collate(const std::vector<PreparedPair>& pairs, double max_disparity, const torch::Device& device);

// Pads, runs inference (Out2 only), unpads and pools metrics over samples.
struct EvaluationResult {
  MetricsReport overall;
  std::vector<std::pair<std::string, MetricsReport>> per_sample;
};
using Predictor = std::function<torch::Tensor(const StereoSample&)>;
// Samples without any valid ground truth are skipped. Throws EmptyMaskError
// if no sample has ground truth.
EvaluationResult evaluate_predictions(const StereoDataset& dataset, double max_disparity, const Predictor& predict,
                                      std::size_t limit = 0);
EvaluationResult evaluate_model(LeanStereoNet& net, const StereoDataset& dataset, double max_disparity,
                                 const torch::Device& device, std::size_t limit = 0);
// Inference on one sample; returns the unpadded [H, W] disparity on CPU.
torch::Tensor predict_disparity(LeanStereoNet& net, const StereoSample& sample, const torch::Device& device);

struct CurvePoint {
  std::int64_t iteration = 0;  // 1-based count of completed steps
  double lr = 0.0;
  double loss = 0.0;
  std::optional<double> val_epe;
};

std::string curve_csv_header();
std::string curve_csv_row(const CurvePoint& p);

struct TrainSummary {
  std::vector<CurvePoint> curve;
  std::optional<double> best_val_epe;
  std::filesystem::path last_checkpoint;
  std::filesystem::path best_checkpoint;
};

// Checkpoint: model weights, optimizer state, completed iteration count and
// the resolved model config (checked on resume).
void save_checkpoint(const std::filesystem::path& path, LeanStereoNet& net, torch::optim::Optimizer* optimizer,
                     std::int64_t iteration, const RunConfig& cfg);
// Returns the stored iteration. Throws DataError if the file is unreadable
// and ConfigError if its model config differs from the one given.
std::int64_t load_checkpoint(const std::filesystem::path& path, LeanStereoNet& net, torch::optim::Optimizer* optimizer,
                             const RunConfig& cfg);
// Model section of the config text; equal strings mean compatible weights.
std::string model_signature(const RunConfig& cfg);

class Trainer {
 public:
  using Logger = std::function<void(const std::string&)>;

  // Output files go to out_dir (created): loss_curve.csv, last.pt, best.pt,
  // config.txt. Empty out_dir keeps everything in memory.
  Trainer(RunConfig cfg, torch::Device device, std::filesystem::path out_dir = {});

  // Loads `path` and continues from its iteration count.
  void resume(const std::filesystem::path& path);

  // Runs until cfg.train.iterations steps are complete. Validation uses
  // `val` every cfg.train.val_every steps when given.
  TrainSummary train(const StereoDataset& data, const StereoDataset* val = nullptr);

  void set_logger(Logger logger) { log_ = std::move(logger); }
  LeanStereoNet& model() { return net_; }
  std::int64_t iteration() const { return iteration_; }

 private:
  std::vector<std::size_t> next_batch_indices(std::size_t dataset_size);

  RunConfig cfg_;
  torch::Device device_;
  std::filesystem::path out_dir_;
  LeanStereoNet net_{nullptr};
  std::unique_ptr<torch::optim::Optimizer> optimizer_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::int64_t iteration_ = 0;
  Logger log_;
};

}  // namespace leanstereo
