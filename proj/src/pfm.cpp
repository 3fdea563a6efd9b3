#include <bit>
#include <cctype>
#include <cstring>
#include <fstream>
#include <sstream>

#include "leanstereo/data.hpp"
#include "leanstereo/error.hpp"

namespace leanstereo {

namespace {

constexpr bool kHostLittle = std::endian::native == std::endian::little;

struct Cursor {
  const std::string& s;
  std::size_t pos = 0;

  void skip_space() {
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
  }
  std::string token() {
    skip_space();
    const auto start = pos;
    while (pos < s.size() && !std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    if (start == pos) throw ParseError("PFM: unexpected end of header", pos);
    return s.substr(start, pos - start);
  }
};

std::int64_t parse_dim(const std::string& tok, std::size_t offset) {
  std::int64_t v = 0;
  if (tok.empty() || tok.size() > 9) throw ParseError("PFM: bad dimension '" + tok + "'", offset);
  for (char c : tok) {
    if (!std::isdigit(static_cast<unsigned char>(c))) throw ParseError("PFM: bad dimension '" + tok + "'", offset);
    v = v * 10 + (c - '0');
  }
  if (v == 0) throw ParseError("PFM: zero dimension", offset);
  return v;
}

std::uint32_t byteswap32(std::uint32_t v) {
  return (v >> 24) | ((v >> 8) & 0xff00u) | ((v << 8) & 0xff0000u) | (v << 24);
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

PfmImage parse_pfm(const std::string& bytes) {
  Cursor cur{bytes};
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != 'f' && bytes[1] != 'F')) {
    throw ParseError("PFM: expected 'Pf' or 'PF' magic", 0);
  }
  const std::int64_t channels = bytes[1] == 'F' ? 3 : 1;
  cur.pos = 2;
  if (cur.pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[cur.pos]))) {
    throw ParseError("PFM: expected whitespace after magic", cur.pos);
  }
  cur.skip_space();
  auto at = cur.pos;
  const auto width = parse_dim(cur.token(), at);
  cur.skip_space();
  at = cur.pos;
  const auto height = parse_dim(cur.token(), at);
  cur.skip_space();
  at = cur.pos;
  const auto scale_tok = cur.token();
  float scale = 0.0f;
  try {
    std::size_t used = 0;
    scale = std::stof(scale_tok, &used);
    if (used != scale_tok.size()) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw ParseError("PFM: bad scale '" + scale_tok + "'", at);
  }
  if (scale == 0.0f) throw ParseError("PFM: scale must be nonzero", at);
  // Exactly one whitespace byte separates the header from the payload.
  if (cur.pos >= bytes.size()) throw ParseError("PFM: missing payload", cur.pos);
  ++cur.pos;

  const auto count = static_cast<std::size_t>(width * height * channels);
  const std::size_t payload = cur.pos;
  if (bytes.size() - payload < count * 4) {
    throw ParseError("PFM: truncated payload, expected " + std::to_string(count * 4) + " bytes",
                     bytes.size());
  }
  const bool file_little = scale < 0.0f;
  std::vector<float> pix(count);
  std::memcpy(pix.data(), bytes.data() + payload, count * 4);
  if (file_little != kHostLittle) {
    for (auto& f : pix) f = std::bit_cast<float>(byteswap32(std::bit_cast<std::uint32_t>(f)));
  }
  // Stored bottom row first, channels interleaved.
  auto t = torch::from_blob(pix.data(), {height, width, channels}, torch::kFloat32).clone();
  t = t.flip({0}).permute({2, 0, 1}).contiguous();
  return {t, scale};
}

PfmImage read_pfm(const std::filesystem::path& path) { return parse_pfm(slurp(path)); }

torch::Tensor read_pfm_disparity(const std::filesystem::path& path) {
  auto img = read_pfm(path);
  if (img.data.size(0) != 1) throw DataError(path.string() + ": disparity PFM must be single-channel ('Pf')");
  return img.data[0];
}

std::string encode_pfm(const torch::Tensor& image) {
  auto t = image.detach().to(torch::kCPU, torch::kFloat32);
  if (t.dim() == 2) t = t.unsqueeze(0);
  if (t.dim() != 3 || (t.size(0) != 1 && t.size(0) != 3)) {
    throw ContractError("write_pfm: expected [H, W], [1, H, W] or [3, H, W]");
  }
  const auto c = t.size(0), h = t.size(1), w = t.size(2);
  auto rows = t.permute({1, 2, 0}).flip({0}).contiguous();
  std::string out = (c == 3 ? "PF\n" : "Pf\n") + std::to_string(w) + " " + std::to_string(h) + "\n-1\n";
  const auto header = out.size();
  out.resize(header + static_cast<std::size_t>(rows.numel()) * 4);
  const float* src = rows.data_ptr<float>();
  for (std::int64_t i = 0; i < rows.numel(); ++i) {
    auto bits = std::bit_cast<std::uint32_t>(src[i]);
    if (!kHostLittle) bits = byteswap32(bits);
    std::memcpy(out.data() + header + static_cast<std::size_t>(i) * 4, &bits, 4);
  }
  return out;
}

void write_pfm(const std::filesystem::path& path, const torch::Tensor& image) {
  const auto bytes = encode_pfm(image);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed: " + path.string());
}

}  // namespace leanstereo
