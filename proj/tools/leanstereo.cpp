// leanstereo: train / evaluate / infer / profile / benchmark / synth.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "leanstereo/config.hpp"
#include "leanstereo/data.hpp"
#include "leanstereo/error.hpp"
#include "leanstereo/losses.hpp"
#include "leanstereo/metrics.hpp"
#include "leanstereo/model.hpp"
#include "leanstereo/profiler.hpp"
#include "leanstereo/train.hpp"

namespace fs = std::filesystem;
using namespace leanstereo;

namespace {

enum ExitCode { kOk = 0, kUsage = 2, kData = 3, kRuntime = 4 };

struct CommonOptions {
  std::string config;
  std::vector<std::string> overrides;  // key=value
  std::string checkpoint;
  std::string dataset;
  std::string out;
  std::int64_t seed = -1;
  std::string device;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "key=value config file");
  cmd->add_option("--set", o.overrides, "override a config key (key=value), repeatable");
  cmd->add_option("--checkpoint", o.checkpoint, "checkpoint to load (train: resume)");
  cmd->add_option("--dataset", o.dataset, "dataset root (overrides data.root)");
  cmd->add_option("--out", o.out, "output directory or file");
  cmd->add_option("--seed", o.seed, "random seed");
  cmd->add_option("--device", o.device, std::string("cpu or cuda[:N]; default $") + kDeviceEnvVar + " or config");
}

// Config file, then --set overrides, then the dedicated flags.
RunConfig resolve_config(const CommonOptions& o) {
  RunConfig cfg;
  if (!o.config.empty()) apply_config(cfg, load_config_file(o.config));
  ConfigMap extra;
  for (const auto& kv : o.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    extra[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  if (!extra.empty()) apply_config(cfg, extra);
  if (!o.checkpoint.empty()) cfg.checkpoint = o.checkpoint;
  if (!o.dataset.empty()) cfg.data.root = o.dataset;
  if (!o.out.empty()) cfg.out = o.out;
  if (o.seed >= 0) cfg.seed = static_cast<std::uint64_t>(o.seed);
  cfg.device = select_device_name(o.device, cfg.device);
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

LeanStereoNet load_model(const RunConfig& cfg, const torch::Device& device) {
  LeanStereoNet net(cfg.model);
  if (cfg.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  load_checkpoint(cfg.checkpoint, net, nullptr, cfg);
  net->to(device);
  net->eval();
  return net;
}

int cmd_train(const CommonOptions& o) {
  auto cfg = resolve_config(o);
  const auto device = resolve_device(cfg.device);
  make_deterministic(cfg.seed);
  const fs::path out = cfg.out.empty() ? fs::path("runs/train") : fs::path(cfg.out);
  StereoDataset data(cfg.data, cfg.synth, cfg.seed);
  std::unique_ptr<StereoDataset> val;
  if (cfg.train.val_every > 0) {
    auto spec = cfg.val_data;
    if (spec.root.empty()) spec = cfg.data, spec.split = Split::kVal;
    // A generated synthetic set has no split; validate on the same samples.
    if (spec.kind == DatasetKind::kSynthetic && spec.root.empty()) spec.split = Split::kTrain;
    val = std::make_unique<StereoDataset>(spec, cfg.synth, cfg.seed);
  }
  Trainer trainer(cfg, device, out);
  trainer.set_logger([](const std::string& line) { std::cout << line << std::endl; });
  if (!cfg.checkpoint.empty()) {
    trainer.resume(cfg.checkpoint);
    std::cout << "resumed at iteration " << trainer.iteration() << "\n";
  }
  auto summary = trainer.train(data, val.get());
  std::cout << "last checkpoint: " << summary.last_checkpoint.string() << "\n";
  if (summary.best_val_epe) std::cout << "best val EPE: " << *summary.best_val_epe << "\n";
  return kOk;
}

int cmd_evaluate(const CommonOptions& o) {
  auto cfg = resolve_config(o);
  const auto device = resolve_device(cfg.device);
  make_deterministic(cfg.seed);
  auto net = load_model(cfg, device);
  auto spec = cfg.data;
  if (spec.root.empty() && spec.kind != DatasetKind::kSynthetic) throw ConfigError("--dataset is required");
  StereoDataset data(spec, cfg.synth, cfg.seed);
  auto result = evaluate_model(net, data, static_cast<double>(cfg.model.cost_volume.max_disparity), device);
  std::cout << format_table(result.overall, to_string(spec.kind));
  if (!cfg.out.empty()) {
    std::string text = format_key_values(result.overall);
    for (const auto& [name, r] : result.per_sample) {
      text += "sample=" + name + " " + format_key_values(r);
      text.back() = '\n';
    }
    write_text(cfg.out, text);
  }
  return kOk;
}

StereoSample load_pair(const std::string& left, const std::string& right, const std::string& gt) {
  StereoSample s;
  s.left = read_rgb_png(left);
  s.right = read_rgb_png(right);
  if (s.left.sizes() != s.right.sizes()) throw DataError("left and right images differ in size");
  s.name = fs::path(left).stem().string();
  if (gt.empty()) {
    s.gt = torch::zeros({s.height(), s.width()});
    s.valid = torch::zeros({s.height(), s.width()}, torch::kBool);
  } else if (fs::path(gt).extension() == ".pfm") {
    s.gt = read_pfm_disparity(gt);
    s.valid = torch::isfinite(s.gt) & (s.gt > 0);
  } else {
    auto k = read_kitti_disparity(gt);
    s.gt = k.disparity;
    s.valid = k.valid;
  }
  if (s.gt.size(0) != s.height() || s.gt.size(1) != s.width()) throw DataError("ground truth size mismatch");
  return s;
}

int cmd_infer(const CommonOptions& o, const std::string& left, const std::string& right, const std::string& gt) {
  auto cfg = resolve_config(o);
  const auto device = resolve_device(cfg.device);
  make_deterministic(cfg.seed);
  auto net = load_model(cfg, device);
  auto sample = load_pair(left, right, gt);
  auto pred = predict_disparity(net, sample, device);
  const fs::path out = cfg.out.empty() ? fs::path(".") : fs::path(cfg.out);
  fs::create_directories(out);
  const double maxd = static_cast<double>(cfg.model.cost_volume.max_disparity);
  write_pfm(out / "disparity.pfm", pred);
  write_rgb_png(out / "disparity.png", colorize_disparity(pred, maxd));
  std::cout << "wrote " << (out / "disparity.pfm").string() << "\n";
  if (!gt.empty()) {
    auto mask = sample.valid & validity_mask(sample.gt, maxd);
    write_rgb_png(out / "error.png", colorize_error(pred, sample.gt, mask));
    if (mask.any().item<bool>()) std::cout << format_table(compute_metrics(pred, sample.gt, mask), sample.name);
  }
  return kOk;
}

int cmd_profile(const CommonOptions& o, const std::string& grid, bool per_layer) {
  auto cfg = resolve_config(o);
  if (grid != "input" && grid != "output") throw ConfigError("--transpose-grid must be input or output");
  auto report = profile_model(cfg.model, cfg.profile_height, cfg.profile_width, 1,
                              grid == "input" ? TransposeGrid::kInput : TransposeGrid::kOutput);
  LeanStereoNet net(cfg.model);
  const auto live = count_parameters(*net);
  if (live != report.total_params) {
    throw std::runtime_error("analytic parameter count " + std::to_string(report.total_params) +
                             " differs from live count " + std::to_string(live));
  }
  std::cout << format_profile(report, per_layer);
  if (!cfg.out.empty()) write_text(cfg.out, format_profile_key_values(report));
  return kOk;
}

int cmd_benchmark(const CommonOptions& o, std::int64_t height, std::int64_t width) {
  auto cfg = resolve_config(o);
  const auto device = resolve_device(cfg.device);
  make_deterministic(cfg.seed);
  LeanStereoNet net(cfg.model);
  if (!cfg.checkpoint.empty()) load_checkpoint(cfg.checkpoint, net, nullptr, cfg);
  net->to(device);
  net->eval();
  // Inputs are built up front so timing excludes data loading.
  auto left = ImageBatch(torch::randn({1, 3, height, width}).to(device));
  auto right = ImageBatch(torch::randn({1, 3, height, width}).to(device));
  torch::NoGradGuard no_grad;
  BenchmarkProtocol protocol{cfg.benchmark_warmup, cfg.benchmark_timed, cfg.benchmark_runs};
  auto result = benchmark_inference([&](std::int64_t) { net->infer(left, right); },
                                    [&] { synchronize_device(device); }, protocol);
  std::cout << "device " << device.str() << ", input " << height << "x" << width << "\n" << format_benchmark(result);
  return kOk;
}

int cmd_synth(const CommonOptions& o, std::int64_t count) {
  auto cfg = resolve_config(o);
  if (count > 0) cfg.synth.count = count;
  if (cfg.out.empty()) throw ConfigError("--out is required");
  write_synthetic_dataset(cfg.out, cfg.synth, cfg.seed);
  write_text(fs::path(cfg.out) / "config.txt", to_config_text(cfg));
  std::cout << "wrote " << cfg.synth.count << " samples to " << cfg.out << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LeanStereo stereo matching network"};
  app.require_subcommand(1);
  CommonOptions o;

  auto* train = app.add_subcommand("train", "train a model; writes checkpoints and loss_curve.csv");
  add_common(train, o);
  auto* evaluate = app.add_subcommand("evaluate", "EPE / D1 / k-px metrics of a checkpoint on a dataset");
  add_common(evaluate, o);
  auto* infer = app.add_subcommand("infer", "predict disparity for one pair");
  add_common(infer, o);
  std::string left, right, gt;
  infer->add_option("--left", left, "left image (PNG)")->required()->check(CLI::ExistingFile);
  infer->add_option("--right", right, "right image (PNG)")->required()->check(CLI::ExistingFile);
  infer->add_option("--gt", gt, "ground truth (PFM or 16-bit PNG)")->check(CLI::ExistingFile);
  auto* profile = app.add_subcommand("profile", "analytic parameter and MAC counts");
  add_common(profile, o);
  std::string grid = "input";
  bool totals_only = false;
  profile->add_option("--transpose-grid", grid, "grid transposed convs are charged on: input|output");
  profile->add_flag("--totals", totals_only, "print totals only");
  auto* bench = app.add_subcommand("benchmark", "inference timing (warm-up, timed passes, k runs)");
  add_common(bench, o);
  std::int64_t bench_h = 512, bench_w = 960;
  bench->add_option("--height", bench_h, "input height");
  bench->add_option("--width", bench_w, "input width");
  auto* synth = app.add_subcommand("synth", "write a synthetic dataset directory");
  add_common(synth, o);
  std::int64_t count = 0;
  synth->add_option("--count", count, "number of samples (overrides synth.count)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*train) return cmd_train(o);
    if (*evaluate) return cmd_evaluate(o);
    if (*infer) return cmd_infer(o, left, right, gt);
    if (*profile) return cmd_profile(o, grid, !totals_only);
    if (*bench) return cmd_benchmark(o, bench_h, bench_w);
    if (*synth) return cmd_synth(o, count);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}
