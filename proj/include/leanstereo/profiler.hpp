#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "leanstereo/config.hpp"

namespace leanstereo {

enum class LayerKind { kConv2d, kConv3d, kTranspose3d, kDepthwise, kPointwise, kLinear, kNorm, kActivation, kPool, kUpsample };

std::string to_string(LayerKind kind);

// One node of the analytic graph. Spatial vectors hold (H, W) for 2D layers
// and (D, H, W) for 3D layers; channel-free kinds (norm, activation, pool,
// upsample) use `in` for their channel count.
struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::kConv2d;
  std::int64_t in = 0;
  std::int64_t out = 0;
  std::vector<std::int64_t> kernel;
  std::vector<std::int64_t> stride;
  std::vector<std::int64_t> padding;
  std::vector<std::int64_t> output_padding;  // transpose only
  std::int64_t groups = 1;
  bool bias = false;
  std::vector<std::int64_t> in_dims;
  std::vector<std::int64_t> out_dims;
  std::int64_t batch = 1;
  // Applications per forward pass (the shared backbone runs on both views).
  std::int64_t instances = 1;
  // Present in the module but skipped at inference (auxiliary heads).
  bool train_only = false;

  // Throws ContractError if dims are missing or disagree with the stride
  // arithmetic of the layer.
  void validate() const;
};

// Which grid a transposed convolution's MACs are charged on. kInput counts
// every real multiply: each input voxel meets Cout * prod(kernel) weights per
// input channel. kOutput charges the output grid like an ordinary conv and
// over-counts strided layers by prod(stride).
enum class TransposeGrid { kInput, kOutput };

std::int64_t layer_parameters(const LayerSpec& l);
std::int64_t layer_macs(const LayerSpec& l, TransposeGrid grid = TransposeGrid::kInput);

// Every layer of LeanStereoNet for a batch x 3 x height x width input.
// Height and width must be multiples of 32.
std::vector<LayerSpec> build_layer_graph(const ModelConfig& cfg, std::int64_t height, std::int64_t width,
                                         std::int64_t batch = 1);

// Parameters over all layers, counted once regardless of `instances`.
std::int64_t analytic_parameters(const std::vector<LayerSpec>& graph);

struct LayerCost {
  std::string name;
  LayerKind kind;
  std::int64_t params = 0;
  std::int64_t macs = 0;  // 0 for train-only layers
};

struct ProfileReport {
  std::vector<LayerCost> layers;
  std::int64_t total_params = 0;
  std::int64_t total_macs = 0;  // inference path
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::int64_t batch = 1;
  TransposeGrid grid = TransposeGrid::kInput;

  double params_millions() const { return static_cast<double>(total_params) * 1e-6; }
  double gmacs() const { return static_cast<double>(total_macs) * 1e-9; }
};

// MACs on the inference path. Validates each layer first.
std::int64_t count_macs(const std::vector<LayerSpec>& graph, TransposeGrid grid = TransposeGrid::kInput);

ProfileReport profile_model(const ModelConfig& cfg, std::int64_t height, std::int64_t width, std::int64_t batch = 1,
                            TransposeGrid grid = TransposeGrid::kInput);

// Per-layer table followed by totals; `per_layer` false prints totals only.
std::string format_profile(const ProfileReport& r, bool per_layer = true);
std::string format_profile_key_values(const ProfileReport& r);

// ---- Timing -------------------------------------------------------------------

struct BenchmarkProtocol {
  std::int64_t warmup = 20;
  std::int64_t timed = 400;
  std::int64_t runs = 3;  // k
};

struct RunTiming {
  double mean_ms = 0.0;
  double std_ms = 0.0;
  std::int64_t timed_passes = 0;
};

struct BenchmarkResult {
  std::vector<RunTiming> runs;
  double overall_ms = 0.0;  // mean of the run means
};

// Each run: `warmup` untimed passes, then `timed` passes each measured with
// a wall clock around forward(i) followed by synchronize(). Inputs must be
// prepared beforehand; forward receives the pass index.
BenchmarkResult benchmark_inference(const std::function<void(std::int64_t)>& forward,
                                    const std::function<void()>& synchronize, const BenchmarkProtocol& protocol);

std::string format_benchmark(const BenchmarkResult& r);

}  // namespace leanstereo
