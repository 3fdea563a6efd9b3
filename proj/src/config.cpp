#include "leanstereo/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "leanstereo/error.hpp"

namespace leanstereo {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::int64_t to_int(const std::string& key, const std::string& v) {
  std::int64_t out = 0;
  const auto* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("key '" + key + "': expected integer, got '" + v + "'");
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': expected number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  throw ConfigError("key '" + key + "': expected on/off, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<std::int64_t> to_int_list(const std::string& key, const std::string& v) {
  std::vector<std::int64_t> out;
  for (const auto& item : split_list(v)) out.push_back(to_int(key, item));
  return out;
}

template <typename T>
std::string join(const std::vector<T>& xs) {
  std::ostringstream os;
  for (std::size_t i = 0; i < xs.size(); ++i) os << (i ? "," : "") << xs[i];
  return os.str();
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

const char* on_off(bool b) { return b ? "on" : "off"; }

struct KeyHandler {
  std::function<void(RunConfig&, const std::string& key, const std::string& value)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define LS_INT(expr)                                                                         \
  KeyHandler {                                                                               \
    [](RunConfig& c, const std::string& k, const std::string& v) { c.expr = to_int(k, v); }, \
        [](const RunConfig& c) { return std::to_string(c.expr); }                            \
  }
#define LS_DOUBLE(expr)                                                                         \
  KeyHandler {                                                                                  \
    [](RunConfig& c, const std::string& k, const std::string& v) { c.expr = to_double(k, v); }, \
        [](const RunConfig& c) { return fmt_double(c.expr); }                                   \
  }
#define LS_BOOL(expr)                                                                         \
  KeyHandler {                                                                                \
    [](RunConfig& c, const std::string& k, const std::string& v) { c.expr = to_bool(k, v); }, \
        [](const RunConfig& c) { return std::string(on_off(c.expr)); }                        \
  }
#define LS_STRING(expr)                                                               \
  KeyHandler {                                                                        \
    [](RunConfig& c, const std::string&, const std::string& v) { c.expr = v; },       \
        [](const RunConfig& c) { return c.expr; }                                     \
  }
#define LS_INT_LIST(expr)                                                                         \
  KeyHandler {                                                                                    \
    [](RunConfig& c, const std::string& k, const std::string& v) { c.expr = to_int_list(k, v); }, \
        [](const RunConfig& c) { return join(c.expr); }                                           \
  }

// Ordered so that to_config_text output is stable and grouped.
const std::vector<std::pair<std::string, KeyHandler>>& key_table() {
  static const std::vector<std::pair<std::string, KeyHandler>> table = {
      {"backbone.shallow_channels", LS_INT_LIST(model.backbone.shallow_channels)},
      {"backbone.deep_channels", LS_INT_LIST(model.backbone.deep_channels)},
      {"backbone.ge_expansion", LS_INT(model.backbone.ge_expansion)},
      {"backbone.out_channels", LS_INT(model.backbone.out_channels)},
      {"cost_volume.max_disparity", LS_INT(model.cost_volume.max_disparity)},
      {"cost_volume.num_groups", LS_INT(model.cost_volume.num_groups)},
      {"cost_volume.concat_channels", LS_INT(model.cost_volume.concat_channels)},
      {"cost_volume.num_subgroups", LS_INT(model.cost_volume.num_subgroups)},
      {"cost_volume.attention_width", LS_INT(model.cost_volume.attention_width)},
      {"cost_volume.disp_stride", LS_INT(model.cost_volume.disp_stride)},
      {"cost_volume.attention", LS_BOOL(model.cost_volume.attention)},
      {"head.base_width", LS_INT(model.head.base_width)},
      {"head.separable", LS_BOOL(model.head.separable)},
      {"loss.kind",
       KeyHandler{[](RunConfig& c, const std::string&, const std::string& v) { c.loss.kind = parse_loss_kind(v); },
                  [](const RunConfig& c) { return to_string(c.loss.kind); }}},
      {"loss.epsilon", LS_DOUBLE(loss.epsilon)},
      {"loss.output_weights",
       KeyHandler{[](RunConfig& c, const std::string& k, const std::string& v) {
                    const auto items = split_list(v);
                    if (items.size() != 3) throw ConfigError("key '" + k + "': expected three weights");
                    for (std::size_t i = 0; i < 3; ++i) c.loss.output_weights[i] = to_double(k, items[i]);
                  },
                  [](const RunConfig& c) {
                    const auto& w = c.loss.output_weights;
                    return fmt_double(w[0]) + "," + fmt_double(w[1]) + "," + fmt_double(w[2]);
                  }}},
      {"train.optimizer",
       KeyHandler{
           [](RunConfig& c, const std::string&, const std::string& v) { c.train.optimizer = parse_optimizer_kind(v); },
           [](const RunConfig& c) { return to_string(c.train.optimizer); }}},
      {"train.lr", LS_DOUBLE(train.lr)},
      {"train.beta1", LS_DOUBLE(train.beta1)},
      {"train.beta2", LS_DOUBLE(train.beta2)},
      {"train.weight_decay", LS_DOUBLE(train.weight_decay)},
      {"train.momentum", LS_DOUBLE(train.momentum)},
      {"train.lr_steps", LS_INT_LIST(train.lr_steps)},
      {"train.lr_decay", LS_DOUBLE(train.lr_decay)},
      {"train.batch_size", LS_INT(train.batch_size)},
      {"train.iterations", LS_INT(train.iterations)},
      {"train.log_every", LS_INT(train.log_every)},
      {"train.val_every", LS_INT(train.val_every)},
      {"data.root", LS_STRING(data.root)},
      {"data.split",
       KeyHandler{[](RunConfig& c, const std::string&, const std::string& v) { c.data.split = parse_split(v); },
                  [](const RunConfig& c) { return to_string(c.data.split); }}},
      {"data.kind",
       KeyHandler{[](RunConfig& c, const std::string&, const std::string& v) { c.data.kind = parse_dataset_kind(v); },
                  [](const RunConfig& c) { return to_string(c.data.kind); }}},
      {"data.crop_height", LS_INT(data.crop_height)},
      {"data.crop_width", LS_INT(data.crop_width)},
      {"val.root", LS_STRING(val_data.root)},
      {"val.split",
       KeyHandler{[](RunConfig& c, const std::string&, const std::string& v) { c.val_data.split = parse_split(v); },
                  [](const RunConfig& c) { return to_string(c.val_data.split); }}},
      {"val.kind",
       KeyHandler{[](RunConfig& c, const std::string&, const std::string& v) { c.val_data.kind = parse_dataset_kind(v); },
                  [](const RunConfig& c) { return to_string(c.val_data.kind); }}},
      {"synth.count", LS_INT(synth.count)},
      {"synth.height", LS_INT(synth.height)},
      {"synth.width", LS_INT(synth.width)},
      {"synth.num_shapes", LS_INT(synth.num_shapes)},
      {"synth.min_disparity", LS_INT(synth.min_disparity)},
      {"synth.max_disparity", LS_INT(synth.max_disparity)},
      {"seed",
       KeyHandler{[](RunConfig& c, const std::string& k, const std::string& v) {
                    const auto s = to_int(k, v);
                    if (s < 0) throw ConfigError("seed must be non-negative");
                    c.seed = static_cast<std::uint64_t>(s);
                  },
                  [](const RunConfig& c) { return std::to_string(c.seed); }}},
      {"device", LS_STRING(device)},
      {"checkpoint", LS_STRING(checkpoint)},
      {"out", LS_STRING(out)},
      {"benchmark.runs", LS_INT(benchmark_runs)},
      {"benchmark.warmup", LS_INT(benchmark_warmup)},
      {"benchmark.timed", LS_INT(benchmark_timed)},
      {"profile.height", LS_INT(profile_height)},
      {"profile.width", LS_INT(profile_width)},
  };
  return table;
}

#undef LS_INT
#undef LS_DOUBLE
#undef LS_BOOL
#undef LS_STRING
#undef LS_INT_LIST

}  // namespace

void BackboneConfig::validate() const {
  if (shallow_channels.size() != 3) throw ConfigError("backbone.shallow_channels needs 3 widths");
  if (deep_channels.size() != 4) throw ConfigError("backbone.deep_channels needs 4 widths");
  for (auto c : shallow_channels)
    if (c <= 0) throw ConfigError("backbone.shallow_channels must be positive");
  for (auto c : deep_channels)
    if (c <= 0) throw ConfigError("backbone.deep_channels must be positive");
  if (deep_channels[0] % 2 != 0) throw ConfigError("backbone stem width must be even");
  if (ge_expansion <= 0) throw ConfigError("backbone.ge_expansion must be positive");
  if (out_channels <= 0) throw ConfigError("backbone.out_channels must be positive");
  if (shallow_channels[2] != out_channels)
    throw ConfigError("backbone: last shallow width must equal out_channels (branches are gated elementwise)");
}

std::vector<std::int64_t> CostVolumeConfig::subgroup_sizes() const {
  std::vector<std::int64_t> sizes;
  const std::int64_t base = num_groups / num_subgroups;
  const std::int64_t extra = num_groups % num_subgroups;
  for (std::int64_t i = 0; i < num_subgroups; ++i) sizes.push_back(base + (i < extra ? 1 : 0));
  return sizes;
}

void CostVolumeConfig::validate(std::int64_t feature_channels) const {
  if (max_disparity <= 0) throw ConfigError("cost_volume.max_disparity must be positive");
  if (disp_stride <= 0) throw ConfigError("cost_volume.disp_stride must be positive");
  if (max_disparity % disp_stride != 0)
    throw ConfigError("cost_volume.max_disparity must be divisible by disp_stride");
  if (max_disparity % (1 << BackboneConfig::kOutputLevel) != 0)
    throw ConfigError("cost_volume.max_disparity must be divisible by 2^level");
  if (bins() % 4 != 0) throw ConfigError("disparity bin count must be divisible by 4 for the hourglass");
  if (num_groups <= 0 || feature_channels % num_groups != 0)
    throw ConfigError("cost_volume.num_groups must divide the feature channel count");
  if (num_subgroups <= 0 || num_subgroups > num_groups)
    throw ConfigError("cost_volume.num_subgroups must be in [1, num_groups]");
  if (concat_channels <= 0) throw ConfigError("cost_volume.concat_channels must be positive");
  if (attention_width <= 0) throw ConfigError("cost_volume.attention_width must be positive");
}

void HeadConfig::validate() const {
  if (base_width <= 0) throw ConfigError("head.base_width must be positive");
}

void ModelConfig::validate() const {
  backbone.validate();
  cost_volume.validate(backbone.out_channels);
  head.validate();
}

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::kLogL1:
      return "logl1";
    case LossKind::kSmoothL1:
      return "smooth_l1";
    case LossKind::kL1:
      return "l1";
    case LossKind::kL2:
      return "l2";
  }
  return "?";
}

LossKind parse_loss_kind(std::string_view name) {
  if (name == "logl1") return LossKind::kLogL1;
  if (name == "smooth_l1") return LossKind::kSmoothL1;
  if (name == "l1") return LossKind::kL1;
  if (name == "l2") return LossKind::kL2;
  throw ConfigError("unknown loss kind '" + std::string(name) + "'");
}

void LossConfig::validate() const {
  if (!(epsilon > 0.0)) throw ConfigError("loss.epsilon must be > 0");
  bool any = false;
  for (double w : output_weights) {
    if (w < 0.0) throw ConfigError("loss.output_weights must be >= 0");
    any = any || w > 0.0;
  }
  if (!any) throw ConfigError("loss.output_weights must not all be zero");
}

std::string to_string(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::kAdam:
      return "adam";
    case OptimizerKind::kAdamW:
      return "adamw";
    case OptimizerKind::kSgd:
      return "sgd";
  }
  return "?";
}

OptimizerKind parse_optimizer_kind(std::string_view name) {
  if (name == "adam") return OptimizerKind::kAdam;
  if (name == "adamw") return OptimizerKind::kAdamW;
  if (name == "sgd") return OptimizerKind::kSgd;
  throw ConfigError("unknown optimizer '" + std::string(name) + "'");
}

std::vector<std::int64_t> TrainConfig::resolved_lr_steps() const {
  if (!lr_steps.empty()) return lr_steps;
  // 600K/700K/800K of 900K, scaled to the configured length.
  return {iterations * 2 / 3, iterations * 7 / 9, iterations * 8 / 9};
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("train.lr must be > 0");
  if (batch_size <= 0) throw ConfigError("train.batch_size must be positive");
  if (iterations <= 0) throw ConfigError("train.iterations must be positive");
  if (!(lr_decay > 0.0)) throw ConfigError("train.lr_decay must be > 0");
  // Derived steps may coincide on very short runs; explicit ones may not.
  for (std::size_t i = 1; i < lr_steps.size(); ++i) {
    if (lr_steps[i] <= lr_steps[i - 1]) throw ConfigError("train.lr_steps must be strictly increasing");
  }
}

std::string to_string(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::kSceneFlow:
      return "sceneflow";
    case DatasetKind::kKitti:
      return "kitti";
    case DatasetKind::kSynthetic:
      return "synthetic";
  }
  return "?";
}

std::string to_string(Split split) {
  switch (split) {
    case Split::kTrain:
      return "train";
    case Split::kVal:
      return "val";
    case Split::kTest:
      return "test";
  }
  return "?";
}

DatasetKind parse_dataset_kind(std::string_view name) {
  if (name == "sceneflow") return DatasetKind::kSceneFlow;
  if (name == "kitti") return DatasetKind::kKitti;
  if (name == "synthetic") return DatasetKind::kSynthetic;
  throw ConfigError("unknown dataset kind '" + std::string(name) + "'");
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw ConfigError("unknown split '" + std::string(name) + "'");
}

void DatasetSpec::validate() const {
  if (crop_height <= 0 || crop_width <= 0) throw ConfigError("crop dims must be positive");
  if (crop_height % 32 != 0 || crop_width % 32 != 0) throw ConfigError("crop dims must be divisible by 32");
}

void RunConfig::validate() const {
  model.validate();
  loss.validate();
  train.validate();
  data.validate();
  if (benchmark_runs < 1) throw ConfigError("benchmark.runs must be >= 1");
  if (benchmark_warmup < 0 || benchmark_timed < 1) throw ConfigError("benchmark image counts out of range");
  if (profile_height % 32 != 0 || profile_width % 32 != 0)
    throw ConfigError("profile resolution must be divisible by 32");
  if (synth.count < 1) throw ConfigError("synth.count must be >= 1");
}

ConfigMap parse_config_text(std::string_view text) {
  ConfigMap out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    const auto line = trim(text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos));
    ++line_no;
    pos = (nl == std::string_view::npos) ? text.size() + 1 : nl + 1;
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
    }
    auto key = trim(std::string_view(line).substr(0, eq));
    auto value = trim(std::string_view(line).substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    out[key] = value;
  }
  return out;
}

ConfigMap load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

RunConfig preset(std::string_view name) {
  RunConfig cfg;
  if (name == "full") return cfg;
  if (name == "desk") {
    cfg.model.backbone.shallow_channels = {32, 32, 64};
    cfg.model.backbone.deep_channels = {16, 16, 32, 64};
    cfg.model.backbone.out_channels = 64;
    cfg.model.cost_volume.max_disparity = 64;
    cfg.model.cost_volume.num_groups = 16;
    cfg.model.cost_volume.concat_channels = 8;
    cfg.model.cost_volume.attention_width = 8;
    cfg.model.head.base_width = 16;
    cfg.train.batch_size = 2;
    cfg.train.iterations = 2000;
    cfg.train.log_every = 50;
    // Training crops of larger frames: at 1/8 resolution a 64x128 frame
    // leaves too few feature cells per object to resolve its edges.
    cfg.data.crop_height = 128;
    cfg.data.crop_width = 256;
    cfg.synth = SynthConfig{};
    cfg.synth.height = 256;
    cfg.synth.width = 512;
    return cfg;
  }
  if (name == "kitti_finetune") {
    cfg.train.batch_size = 16;
    cfg.train.iterations = 11000;
    cfg.train.lr_steps = {7000};
    cfg.train.lr_decay = 0.1;
    cfg.data.kind = DatasetKind::kKitti;
    return cfg;
  }
  throw ConfigError("unknown preset '" + std::string(name) + "'");
}

void apply_config(RunConfig& cfg, const ConfigMap& values) {
  if (auto it = values.find("preset"); it != values.end()) cfg = preset(it->second);
  const auto& table = key_table();
  for (const auto& [key, value] : values) {
    if (key == "preset") continue;
    auto it = std::find_if(table.begin(), table.end(), [&](const auto& e) { return e.first == key; });
    if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second.set(cfg, key, value);
  }
}

std::string to_config_text(const RunConfig& cfg) {
  std::ostringstream os;
  for (const auto& [key, handler] : key_table()) os << key << "=" << handler.get(cfg) << "\n";
  return os.str();
}

}  // namespace leanstereo
