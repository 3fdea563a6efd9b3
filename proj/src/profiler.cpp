#include "leanstereo/profiler.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "leanstereo/error.hpp"
#include "leanstereo/types.hpp"

namespace leanstereo {

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv2d: return "conv2d";
    case LayerKind::kConv3d: return "conv3d";
    case LayerKind::kTranspose3d: return "transpose3d";
    case LayerKind::kDepthwise: return "depthwise";
    case LayerKind::kPointwise: return "pointwise";
    case LayerKind::kLinear: return "linear";
    case LayerKind::kNorm: return "norm";
    case LayerKind::kActivation: return "activation";
    case LayerKind::kPool: return "pool";
    case LayerKind::kUpsample: return "upsample";
  }
  return "?";
}

namespace {

using Dims = std::vector<std::int64_t>;

std::int64_t product(const Dims& v) {
  return std::accumulate(v.begin(), v.end(), std::int64_t{1}, std::multiplies<>());
}

bool is_conv(LayerKind k) {
  return k == LayerKind::kConv2d || k == LayerKind::kConv3d || k == LayerKind::kDepthwise ||
         k == LayerKind::kPointwise || k == LayerKind::kTranspose3d;
}

std::string format(const char* pattern, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), pattern, args...);
  return buf;
}

}  // namespace

void LayerSpec::validate() const {
  if (in_dims.empty() || out_dims.empty()) throw ContractError("layer " + name + ": unresolved shape");
  if (!is_conv(kind)) return;
  const auto n = in_dims.size();
  if (out_dims.size() != n || kernel.size() != n || stride.size() != n || padding.size() != n) {
    throw ContractError("layer " + name + ": rank mismatch");
  }
  if (groups <= 0 || in % groups != 0 || out % groups != 0) {
    throw ContractError("layer " + name + ": groups do not divide channels");
  }
  for (std::size_t i = 0; i < n; ++i) {
    std::int64_t expect = 0;
    if (kind == LayerKind::kTranspose3d) {
      const auto op = output_padding.size() == n ? output_padding[i] : 0;
      expect = (in_dims[i] - 1) * stride[i] - 2 * padding[i] + kernel[i] + op;
    } else {
      expect = (in_dims[i] + 2 * padding[i] - kernel[i]) / stride[i] + 1;
    }
    if (expect != out_dims[i]) {
      throw ContractError("layer " + name + ": output dim " + std::to_string(out_dims[i]) +
                          " inconsistent with stride arithmetic (expected " + std::to_string(expect) + ")");
    }
  }
}

std::int64_t layer_parameters(const LayerSpec& l) {
  if (is_conv(l.kind)) return (l.in / l.groups) * l.out * product(l.kernel) + (l.bias ? l.out : 0);
  if (l.kind == LayerKind::kLinear) return l.in * l.out + (l.bias ? l.out : 0);
  if (l.kind == LayerKind::kNorm) return 2 * l.in;
  return 0;
}

std::int64_t layer_macs(const LayerSpec& l, TransposeGrid grid) {
  const auto per_pass = [&]() -> std::int64_t {
    if (l.kind == LayerKind::kTranspose3d) {
      const auto& g = grid == TransposeGrid::kInput ? l.in_dims : l.out_dims;
      return (l.in / l.groups) * l.out * product(l.kernel) * product(g);
    }
    if (is_conv(l.kind)) return (l.in / l.groups) * l.out * product(l.kernel) * product(l.out_dims);
    if (l.kind == LayerKind::kLinear) return l.in * l.out;
    return 0;
  }();
  return per_pass * l.batch * l.instances;
}

namespace {

// Records layers while threading spatial shapes through the network.
class GraphBuilder {
 public:
  explicit GraphBuilder(std::int64_t batch) : batch_(batch) {}

  std::int64_t instances = 1;
  bool train_only = false;

  Dims conv(const std::string& name, std::int64_t in, std::int64_t out, const Dims& dims, std::int64_t k = 3,
            std::int64_t s = 1, std::int64_t groups = 1, bool bias = false) {
    LayerSpec l = base(name, in, out, dims);
    const auto rank = dims.size();
    l.kind = rank == 2 ? LayerKind::kConv2d : LayerKind::kConv3d;
    if (groups > 1 && groups == in && out == in) l.kind = LayerKind::kDepthwise;
    if (k == 1 && groups == 1) l.kind = LayerKind::kPointwise;
    l.kernel.assign(rank, k);
    l.stride.assign(rank, s);
    l.padding.assign(rank, k / 2);
    l.groups = groups;
    l.bias = bias;
    for (auto d : dims) l.out_dims.push_back((d + 2 * (k / 2) - k) / s + 1);
    return push(std::move(l));
  }

  // Conv + norm (+ activation), the ConvBn2d/ConvBn3d blocks.
  Dims conv_bn(const std::string& name, std::int64_t in, std::int64_t out, const Dims& dims, std::int64_t k = 3,
               std::int64_t s = 1, std::int64_t groups = 1, bool relu = true) {
    auto d = conv(name + ".conv", in, out, dims, k, s, groups);
    norm(name + ".bn", out, d);
    if (relu) activation(name + ".relu", out, d);
    return d;
  }

  Dims separable_bn(const std::string& name, std::int64_t in, std::int64_t out, const Dims& dims, std::int64_t s) {
    auto d = conv_bn(name + ".depthwise", in, in, dims, 3, s, in);
    return conv_bn(name + ".pointwise", in, out, d, 1);
  }

  Dims deconv_bn(const std::string& name, std::int64_t in, std::int64_t out, const Dims& dims) {
    LayerSpec l = base(name + ".deconv", in, out, dims);
    l.kind = LayerKind::kTranspose3d;
    l.kernel.assign(dims.size(), 3);
    l.stride.assign(dims.size(), 2);
    l.padding.assign(dims.size(), 1);
    l.output_padding.assign(dims.size(), 1);
    for (auto d : dims) l.out_dims.push_back(2 * d);
    auto d = push(std::move(l));
    norm(name + ".bn", out, d);
    return d;
  }

  void norm(const std::string& name, std::int64_t c, const Dims& dims) { simple(name, LayerKind::kNorm, c, dims, dims); }
  void activation(const std::string& name, std::int64_t c, const Dims& dims) {
    simple(name, LayerKind::kActivation, c, dims, dims);
  }
  Dims pool(const std::string& name, std::int64_t c, const Dims& in, const Dims& out) {
    simple(name, LayerKind::kPool, c, in, out);
    return out;
  }
  Dims upsample(const std::string& name, std::int64_t c, const Dims& in, const Dims& out) {
    simple(name, LayerKind::kUpsample, c, in, out);
    return out;
  }

  std::vector<LayerSpec> take() { return std::move(layers_); }

 private:
  LayerSpec base(const std::string& name, std::int64_t in, std::int64_t out, const Dims& dims) const {
    LayerSpec l;
    l.name = name;
    l.in = in;
    l.out = out;
    l.in_dims = dims;
    l.batch = batch_;
    l.instances = instances;
    l.train_only = train_only;
    return l;
  }
  void simple(const std::string& name, LayerKind kind, std::int64_t c, const Dims& in, const Dims& out) {
    LayerSpec l = base(name, c, c, in);
    l.kind = kind;
    l.out_dims = out;
    push(std::move(l));
  }
  Dims push(LayerSpec l) {
    layers_.push_back(std::move(l));
    return layers_.back().out_dims;
  }

  std::int64_t batch_;
  std::vector<LayerSpec> layers_;
};

Dims half(const Dims& d) {
  Dims o;
  for (auto v : d) o.push_back((v - 1) / 2 + 1);  // k3 s2 p1
  return o;
}

Dims stem(GraphBuilder& g, std::int64_t w, const Dims& in) {
  auto y = g.conv_bn("deep.stem.entry", 3, w, in, 3, 2);
  auto conv_path = g.conv_bn("deep.stem.down", w / 2, w, g.conv_bn("deep.stem.squeeze", w, w / 2, y, 1), 3, 2);
  g.pool("deep.stem.maxpool", w, y, half(y));
  return g.conv_bn("deep.stem.fuse", 2 * w, w, conv_path);
}

Dims ge_layer1(GraphBuilder& g, const std::string& name, std::int64_t c, std::int64_t e, const Dims& d) {
  auto y = g.conv_bn(name + ".gather", c, c, d);
  y = g.conv_bn(name + ".expand", c, c * e, y, 3, 1, c);
  y = g.conv_bn(name + ".project", c * e, c, y, 1, 1, 1, false);
  g.activation(name + ".relu", c, y);
  return y;
}

Dims ge_layer2(GraphBuilder& g, const std::string& name, std::int64_t in, std::int64_t out, std::int64_t e,
               const Dims& d) {
  const auto mid = in * e;
  auto y = g.conv_bn(name + ".gather", in, in, d);
  y = g.conv_bn(name + ".expand_down", in, mid, y, 3, 2, in, false);
  y = g.conv_bn(name + ".expand", mid, mid, y, 3, 1, mid);
  y = g.conv_bn(name + ".project", mid, out, y, 1, 1, 1, false);
  auto s = g.conv_bn(name + ".shortcut_dw", in, in, d, 3, 2, in, false);
  g.conv_bn(name + ".shortcut_pw", in, out, s, 1, 1, 1, false);
  g.activation(name + ".relu", out, y);
  return y;
}

Dims backbone(GraphBuilder& g, const BackboneConfig& cfg, const Dims& image) {
  const auto& s = cfg.shallow_channels;
  auto x = g.conv_bn("shallow.0", 3, s[0], image, 3, 2);
  x = g.conv_bn("shallow.1", s[0], s[0], x);
  x = g.conv_bn("shallow.2", s[0], s[1], x, 3, 2);
  x = g.conv_bn("shallow.3", s[1], s[1], x);
  x = g.conv_bn("shallow.4", s[1], s[1], x);
  x = g.conv_bn("shallow.5", s[1], s[2], x, 3, 2);
  x = g.conv_bn("shallow.6", s[2], s[2], x);
  const auto shallow = g.conv_bn("shallow.7", s[2], s[2], x);

  const auto& w = cfg.deep_channels;
  const auto e = cfg.ge_expansion;
  auto y = stem(g, w[0], image);
  y = ge_layer2(g, "deep.stage3.ge2", w[0], w[1], e, y);
  y = ge_layer1(g, "deep.stage3.ge1", w[1], e, y);
  y = ge_layer2(g, "deep.stage4.ge2", w[1], w[2], e, y);
  y = ge_layer1(g, "deep.stage4.ge1", w[2], e, y);
  y = ge_layer2(g, "deep.stage5.ge2", w[2], w[3], e, y);
  for (int i = 0; i < 3; ++i) y = ge_layer1(g, "deep.stage5.ge1_" + std::to_string(i), w[3], e, y);
  auto pooled = g.pool("deep.context.gap", w[3], y, {1, 1});
  g.conv("deep.context.conv", w[3], w[3], pooled, 1, 1, 1, true);
  g.activation("deep.context.relu", w[3], pooled);
  const auto c = cfg.out_channels;
  const auto deep = g.conv_bn("deep.fuse", w[3], c, y);

  auto up = g.conv_bn("aggregation.deep_up_conv", c, c, deep, 3, 1, 1, false);
  g.upsample("aggregation.deep_up", c, up, shallow);
  g.activation("aggregation.detail_gate", c, shallow);
  auto down = g.conv_bn("aggregation.shallow_down_conv", c, c, shallow, 3, 2, 1, false);
  g.pool("aggregation.shallow_down_pool", c, down, half(down));
  g.activation("aggregation.semantic_gate", c, deep);
  g.upsample("aggregation.semantic_up", c, deep, shallow);
  return g.conv_bn("aggregation.fuse", c, c, shallow);
}

Dims hourglass(GraphBuilder& g, const std::string& name, std::int64_t w, bool separable, const Dims& x) {
  auto block = [&](const std::string& n, std::int64_t in, std::int64_t out, const Dims& d, std::int64_t s) {
    return separable ? g.separable_bn(name + "." + n, in, out, d, s) : g.conv_bn(name + "." + n, in, out, d, 3, s);
  };
  auto h = block("conv2", 2 * w, 2 * w, block("down1", w, 2 * w, x, 2), 1);
  auto q = block("conv4", 4 * w, 4 * w, block("down3", 2 * w, 4 * w, h, 2), 1);
  auto up = g.deconv_bn(name + ".up5", 4 * w, 2 * w, q);
  g.conv_bn(name + ".skip2", 2 * w, 2 * w, h, 1, 1, 1, false);
  g.activation(name + ".relu5", 2 * w, up);
  auto out = g.deconv_bn(name + ".up6", 2 * w, w, up);
  g.conv_bn(name + ".skip1", w, w, x, 1, 1, 1, false);
  g.activation(name + ".relu6", w, out);
  return out;
}

}  // namespace

std::vector<LayerSpec> build_layer_graph(const ModelConfig& cfg, std::int64_t height, std::int64_t width,
                                         std::int64_t batch) {
  cfg.validate();
  if (height <= 0 || width <= 0 || height % kInputAlignment != 0 || width % kInputAlignment != 0) {
    throw ConfigError("profile resolution must be a positive multiple of 32, got " + std::to_string(height) + "x" +
                      std::to_string(width));
  }
  GraphBuilder g(batch);
  const Dims image{height, width};

  g.instances = 2;  // left and right views share the weights
  const auto feat = backbone(g, cfg.backbone, image);
  const auto& cv = cfg.cost_volume;
  g.conv("cost_volume.compress", cfg.backbone.out_channels, cv.concat_channels, feat, 1);
  g.instances = 1;

  const Dims vol{cv.bins(), feat[0], feat[1]};
  if (cv.attention) {
    const auto aw = cv.attention_width;
    const auto split = cv.subgroup_sizes();
    for (std::size_t i = 0; i < split.size(); ++i) {
      const auto n = "attention.block" + std::to_string(i);
      g.conv_bn(n + ".1", aw, aw, g.conv_bn(n + ".0", split[i], aw, vol));
    }
    g.conv("attention.project", aw, 1, g.conv_bn("attention.merge", aw, aw, vol));
    g.activation("attention.sigmoid", 1, vol);
  }

  const auto w = cfg.head.base_width;
  auto v = g.conv_bn("pre.0", 2 * cv.concat_channels, w, vol);
  v = g.conv_bn("pre.1", w, w, v);
  v = g.conv_bn("pre.2", w, w, v);
  v = g.conv_bn("pre.3", w, w, v, 3, 1, 1, false);
  const Dims full{cv.max_disparity, height, width};
  for (int i = 0; i < 3; ++i) {
    if (i > 0) v = hourglass(g, "hourglass" + std::to_string(i), w, cfg.head.separable, v);
    // Only the last head runs at inference.
    g.train_only = i < 2;
    const auto n = "head" + std::to_string(i);
    auto logits = g.conv(n + ".project", w, 1, g.conv_bn(n + ".conv", w, w, v));
    g.upsample(n + ".upsample", 1, logits, full);
    g.activation(n + ".softmax", 1, full);
    g.train_only = false;
  }
  return g.take();
}

std::int64_t analytic_parameters(const std::vector<LayerSpec>& graph) {
  std::int64_t n = 0;
  for (const auto& l : graph) n += layer_parameters(l);
  return n;
}

std::int64_t count_macs(const std::vector<LayerSpec>& graph, TransposeGrid grid) {
  std::int64_t total = 0;
  for (const auto& l : graph) {
    l.validate();
    if (!l.train_only) total += layer_macs(l, grid);
  }
  return total;
}

ProfileReport profile_model(const ModelConfig& cfg, std::int64_t height, std::int64_t width, std::int64_t batch,
                            TransposeGrid grid) {
  const auto graph = build_layer_graph(cfg, height, width, batch);
  ProfileReport r;
  r.height = height;
  r.width = width;
  r.batch = batch;
  r.grid = grid;
  for (const auto& l : graph) {
    l.validate();
    LayerCost c{l.name, l.kind, layer_parameters(l), l.train_only ? 0 : layer_macs(l, grid)};
    r.total_params += c.params;
    r.total_macs += c.macs;
    r.layers.push_back(std::move(c));
  }
  return r;
}

std::string format_profile(const ProfileReport& r, bool per_layer) {
  std::string out;
  if (per_layer) {
    out += format("%-40s %-12s %12s %16s\n", "layer", "kind", "params", "MACs");
    for (const auto& l : r.layers) {
      if (l.params == 0 && l.macs == 0) continue;
      out += format("%-40s %-12s %12lld %16lld\n", l.name.c_str(), to_string(l.kind).c_str(),
                    static_cast<long long>(l.params), static_cast<long long>(l.macs));
    }
  }
  out += format("input %lldx%lldx%lld, transposed convs on the %s grid\n", static_cast<long long>(r.batch),
                static_cast<long long>(r.height), static_cast<long long>(r.width),
                r.grid == TransposeGrid::kInput ? "input" : "output");
  out += format("Params(M) %.4f  MACs(G) %.4f\n", r.params_millions(), r.gmacs());
  return out;
}

std::string format_profile_key_values(const ProfileReport& r) {
  return format("height=%lld\nwidth=%lld\nbatch=%lld\ntranspose_grid=%s\nparams=%lld\nmacs=%lld\nparams_m=%.6f\n"
                "gmacs=%.6f\n",
                static_cast<long long>(r.height), static_cast<long long>(r.width), static_cast<long long>(r.batch),
                r.grid == TransposeGrid::kInput ? "input" : "output", static_cast<long long>(r.total_params),
                static_cast<long long>(r.total_macs), r.params_millions(), r.gmacs());
}

BenchmarkResult benchmark_inference(const std::function<void(std::int64_t)>& forward,
                                    const std::function<void()>& synchronize, const BenchmarkProtocol& protocol) {
  if (protocol.runs < 1 || protocol.timed < 1 || protocol.warmup < 0) {
    throw ConfigError("benchmark: need runs >= 1, timed >= 1, warmup >= 0");
  }
  using Clock = std::chrono::steady_clock;
  BenchmarkResult result;
  for (std::int64_t run = 0; run < protocol.runs; ++run) {
    for (std::int64_t i = 0; i < protocol.warmup; ++i) {
      forward(i);
      synchronize();
    }
    std::vector<double> ms;
    ms.reserve(static_cast<std::size_t>(protocol.timed));
    for (std::int64_t i = 0; i < protocol.timed; ++i) {
      const auto t0 = Clock::now();
      forward(i);
      synchronize();
      ms.push_back(std::chrono::duration<double, std::milli>(Clock::now() - t0).count());
    }
    const double mean = std::accumulate(ms.begin(), ms.end(), 0.0) / static_cast<double>(ms.size());
    double var = 0.0;
    for (double m : ms) var += (m - mean) * (m - mean);
    result.runs.push_back({mean, std::sqrt(var / static_cast<double>(ms.size())), protocol.timed});
  }
  double sum = 0.0;
  for (const auto& r : result.runs) sum += r.mean_ms;
  result.overall_ms = sum / static_cast<double>(result.runs.size());
  return result;
}

std::string format_benchmark(const BenchmarkResult& r) {
  std::string out;
  for (std::size_t i = 0; i < r.runs.size(); ++i) {
    out += format("run %zu: %.3f ms +- %.3f ms over %lld passes\n", i + 1, r.runs[i].mean_ms, r.runs[i].std_ms,
                  static_cast<long long>(r.runs[i].timed_passes));
  }
  out += format("mean of %zu runs: %.3f ms\n", r.runs.size(), r.overall_ms);
  return out;
}

}  // namespace leanstereo
