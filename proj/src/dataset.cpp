#include <algorithm>
#include <regex>

#include "leanstereo/data.hpp"
#include "leanstereo/error.hpp"

namespace leanstereo {

namespace fs = std::filesystem;
namespace F = torch::nn::functional;

torch::Tensor standardize(const torch::Tensor& image) {
  auto mean = torch::tensor({kChannelMean[0], kChannelMean[1], kChannelMean[2]}, torch::kFloat32).view({3, 1, 1});
  auto std = torch::tensor({kChannelStd[0], kChannelStd[1], kChannelStd[2]}, torch::kFloat32).view({3, 1, 1});
  return (image.to(torch::kFloat32) - mean) / std;
}

std::int64_t padded_size(std::int64_t n) { return (n + kInputAlignment - 1) / kInputAlignment * kInputAlignment; }

PreparedPair crop_sample(const StereoSample& s, std::int64_t top, std::int64_t left, std::int64_t height,
                         std::int64_t width) {
  if (top < 0 || left < 0 || top + height > s.height() || left + width > s.width()) {
    throw DataError("crop window " + std::to_string(height) + "x" + std::to_string(width) + " does not fit " +
                    std::to_string(s.height()) + "x" + std::to_string(s.width()) + " sample " + s.name);
  }
  auto win = [&](const torch::Tensor& t) { return t.narrow(-2, top, height).narrow(-1, left, width).contiguous(); };
  PreparedPair p;
  p.left = standardize(win(s.left));
  p.right = standardize(win(s.right));
  p.gt = win(s.gt);
  p.valid = win(s.valid);
  p.orig_height = height;
  p.orig_width = width;
  return p;
}

PreparedPair preprocess(const StereoSample& sample, const DatasetSpec& spec, bool training, std::mt19937_64& rng) {
  if (training) {
    const auto h = spec.crop_height, w = spec.crop_width;
    if (sample.height() < h || sample.width() < w) {
      throw DataError("sample " + sample.name + " (" + std::to_string(sample.height()) + "x" +
                      std::to_string(sample.width()) + ") is smaller than the crop");
    }
    // Raw engine output keeps the crop sequence identical across platforms.
    const auto top = static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(sample.height() - h + 1));
    const auto left = static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(sample.width() - w + 1));
    return crop_sample(sample, top, left, h, w);
  }
  PreparedPair p;
  p.orig_height = sample.height();
  p.orig_width = sample.width();
  p.pad_top = padded_size(p.orig_height) - p.orig_height;
  p.pad_left = padded_size(p.orig_width) - p.orig_width;
  const auto pad = F::PadFuncOptions({p.pad_left, 0, p.pad_top, 0});
  p.left = F::pad(standardize(sample.left), pad);
  p.right = F::pad(standardize(sample.right), pad);
  p.gt = F::pad(sample.gt.to(torch::kFloat32), pad);
  p.valid = F::pad(sample.valid.to(torch::kUInt8), pad).to(torch::kBool);
  return p;
}

torch::Tensor unpad(const torch::Tensor& padded, const PreparedPair& p) {
  return padded.narrow(-2, p.pad_top, p.orig_height).narrow(-1, p.pad_left, p.orig_width);
}

namespace {

std::vector<fs::path> sorted_files(const fs::path& dir, const std::string& ext) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ext) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

fs::path replace_component(const fs::path& p, const std::string& from, const std::string& to) {
  fs::path out;
  bool done = false;
  // Replace the last matching component; SceneFlow nests left/right deepest.
  std::vector<fs::path> parts(p.begin(), p.end());
  for (auto it = parts.rbegin(); it != parts.rend() && !done; ++it) {
    if (*it == from) {
      *it = to;
      done = true;
    }
  }
  for (const auto& c : parts) out /= c;
  return out;
}

}  // namespace

StereoDataset::StereoDataset(const DatasetSpec& spec, const SynthConfig& synth, std::uint64_t seed)
    : spec_(spec), synth_(synth), seed_(seed) {
  spec_.validate();
  const fs::path root = spec_.root;
  if (spec_.kind == DatasetKind::kSynthetic && spec_.root.empty()) {
    if (synth_.count <= 0) throw DataError("synthetic dataset: count must be > 0");
    generated_ = static_cast<std::size_t>(synth_.count);
    return;
  }
  if (!fs::is_directory(root)) throw DataError("dataset root not found: " + root.string());

  switch (spec_.kind) {
    case DatasetKind::kSynthetic:
      for (const auto& l : sorted_files(root / "left", ".png")) {
        const auto stem = l.stem().string();
        entries_.push_back({l, root / "right" / l.filename(), root / "disp" / (stem + ".pfm"), stem});
      }
      break;
    case DatasetKind::kSceneFlow: {
      const std::string part = spec_.split == Split::kTrain ? "TRAIN" : "TEST";
      for (const char* pass : {"frames_cleanpass", "frames_finalpass"}) {
        const auto base = root / pass / part;
        if (!fs::is_directory(base)) continue;
        std::vector<fs::path> lefts;
        for (const auto& e : fs::recursive_directory_iterator(base)) {
          if (e.is_regular_file() && e.path().extension() == ".png" && e.path().parent_path().filename() == "left") {
            lefts.push_back(e.path());
          }
        }
        std::sort(lefts.begin(), lefts.end());
        for (const auto& l : lefts) {
          auto rel = fs::relative(l, root / pass);
          auto disp = (root / "disparity" / rel).replace_extension(".pfm");
          entries_.push_back({l, replace_component(l, "left", "right"), disp, rel.string()});
        }
        break;  // one pass is enough; cleanpass preferred
      }
      break;
    }
    case DatasetKind::kKitti: {
      const bool test = spec_.split == Split::kTest;
      const auto base = root / (test ? "testing" : "training");
      static const std::regex frame(R"((\d+)_10\.png)");
      for (const auto& l : sorted_files(base / "image_2", ".png")) {
        std::smatch m;
        const auto fname = l.filename().string();
        if (!std::regex_match(fname, m, frame)) continue;
        const auto index = std::stoll(m[1].str());
        if (!test && ((index % 5 == 0) != (spec_.split == Split::kVal))) continue;
        entries_.push_back(
            {l, base / "image_3" / fname, test ? fs::path() : base / "disp_occ_0" / fname, l.stem().string()});
      }
      break;
    }
  }
  if (entries_.empty()) {
    throw DataError("no " + to_string(spec_.kind) + " samples for split " + to_string(spec_.split) + " under " +
                    root.string());
  }
}

StereoSample StereoDataset::get(std::size_t index) const {
  if (index >= size()) throw DataError("dataset index out of range");
  if (entries_.empty()) {
    std::lock_guard lock(cache_->mu);
    auto& slots = cache_->samples;
    if (slots.size() != generated_) slots.resize(generated_);
    if (!slots[index]) slots[index] = generate_synthetic_pair(seed_ + index, synth_);
    return *slots[index];
  }

  const auto& e = entries_[index];
  StereoSample s;
  s.name = e.name;
  s.left = read_rgb_png(e.left);
  s.right = read_rgb_png(e.right);
  if (s.left.sizes() != s.right.sizes()) throw DataError("left/right size mismatch for " + e.name);
  if (e.disp.empty()) {
    s.gt = torch::zeros({s.height(), s.width()});
    s.valid = torch::zeros({s.height(), s.width()}, torch::kBool);
  } else if (e.disp.extension() == ".pfm") {
    s.gt = read_pfm_disparity(e.disp);
    s.valid = torch::isfinite(s.gt) & (s.gt > 0);
    s.gt = torch::where(s.valid, s.gt, torch::zeros_like(s.gt));
  } else {
    auto k = read_kitti_disparity(e.disp);
    s.gt = k.disparity;
    s.valid = k.valid;
  }
  if (s.gt.size(0) != s.height() || s.gt.size(1) != s.width()) {
    throw DataError("ground truth size mismatch for " + e.name);
  }
  return s;
}

}  // namespace leanstereo
