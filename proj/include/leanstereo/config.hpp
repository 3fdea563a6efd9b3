#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace leanstereo {

struct BackboneConfig {
  std::vector<std::int64_t> shallow_channels{64, 64, 128};  // levels 1..3
  std::vector<std::int64_t> deep_channels{16, 32, 64, 128};  // stem, levels 3..5
  std::int64_t ge_expansion = 6;
  std::int64_t out_channels = 128;

  static constexpr int kShallowLevel = 3;
  static constexpr int kDeepLevel = 5;
  static constexpr int kOutputLevel = 3;

  void validate() const;
};

struct CostVolumeConfig {
  std::int64_t max_disparity = 192;
  std::int64_t num_groups = 32;
  std::int64_t concat_channels = 12;
  std::int64_t num_subgroups = 3;
  std::int64_t attention_width = 16;
  // Full-resolution pixels per disparity bin; 8 matches the level-3 features.
  std::int64_t disp_stride = 8;
  bool attention = true;

  std::int64_t bins() const { return max_disparity / disp_stride; }
  // Contiguous channel split of the correlation volume, e.g. 32 -> {11, 11, 10}.
  std::vector<std::int64_t> subgroup_sizes() const;
  void validate(std::int64_t feature_channels) const;
};

struct HeadConfig {
  std::int64_t base_width = 32;
  bool separable = false;  // depthwise-separable hourglass convolutions

  void validate() const;
};

struct ModelConfig {
  BackboneConfig backbone;
  CostVolumeConfig cost_volume;
  HeadConfig head;

  void validate() const;
};

enum class LossKind { kLogL1, kSmoothL1, kL1, kL2 };

std::string to_string(LossKind kind);
LossKind parse_loss_kind(std::string_view name);

struct LossConfig {
  LossKind kind = LossKind::kLogL1;
  double epsilon = 1.0;
  std::array<double, 3> output_weights{0.5, 0.7, 1.0};

  void validate() const;
};

enum class OptimizerKind { kAdam, kAdamW, kSgd };

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(std::string_view name);

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.0;
  double momentum = 0.9;  // sgd only
  // Iterations at which the learning rate is multiplied by lr_decay.
  // Empty means "derive from iterations" (2N/3, 7N/9, 8N/9).
  std::vector<std::int64_t> lr_steps;
  double lr_decay = 0.5;
  std::int64_t batch_size = 8;
  std::int64_t iterations = 900000;
  std::int64_t log_every = 50;
  std::int64_t val_every = 0;  // 0 disables periodic validation

  std::vector<std::int64_t> resolved_lr_steps() const;
  void validate() const;
};

enum class DatasetKind { kSceneFlow, kKitti, kSynthetic };
enum class Split { kTrain, kVal, kTest };

std::string to_string(DatasetKind kind);
std::string to_string(Split split);
DatasetKind parse_dataset_kind(std::string_view name);
Split parse_split(std::string_view name);

struct DatasetSpec {
  std::string root;
  Split split = Split::kTrain;
  DatasetKind kind = DatasetKind::kSynthetic;
  std::int64_t crop_height = 256;
  std::int64_t crop_width = 512;

  void validate() const;
};

struct SynthConfig {
  std::int64_t count = 20;
  std::int64_t height = 64;
  std::int64_t width = 128;
  std::int64_t num_shapes = 3;
  std::int64_t min_disparity = 0;
  std::int64_t max_disparity = 32;
};

struct RunConfig {
  ModelConfig model;
  LossConfig loss;
  TrainConfig train;
  DatasetSpec data;
  DatasetSpec val_data;  // val_data.root empty -> validate on data
  SynthConfig synth;
  std::uint64_t seed = 1;
  std::string device = "cpu";
  std::string checkpoint;  // load path for evaluate/infer/benchmark, resume for train
  std::string out;         // output directory or file
  std::int64_t benchmark_runs = 3;
  std::int64_t benchmark_warmup = 20;
  std::int64_t benchmark_timed = 400;
  std::int64_t profile_height = 544;
  std::int64_t profile_width = 960;

  void validate() const;
};

// Flat `key=value` configuration with dotted namespaces ("loss.kind=logl1").
// Lines starting with '#' and blank lines are ignored.
using ConfigMap = std::map<std::string, std::string>;

ConfigMap parse_config_text(std::string_view text);
ConfigMap load_config_file(const std::string& path);

// Applies `values` on top of `cfg`. A `preset` key is applied first, so the
// remaining keys override it. Unknown keys raise ConfigError.
void apply_config(RunConfig& cfg, const ConfigMap& values);

// Every key of the run, one per line, in a form apply_config reproduces.
std::string to_config_text(const RunConfig& cfg);

// Named starting points: "full" (defaults), "desk" (reduced widths and
// 128x256 crops of 256x512 synthetic frames for CPU-scale runs),
// "kitti_finetune".
RunConfig preset(std::string_view name);

}  // namespace leanstereo
