#include "normseg/vol3.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "normseg/errors.hpp"

namespace normseg {

namespace {

constexpr char kMagic[4] = {'V', 'O', 'L', '3'};
constexpr std::uint8_t kVersion = 1;
constexpr std::uint8_t kTypeVolume = 0;
constexpr std::uint8_t kTypeMask = 1;
constexpr std::size_t kHeaderBytes = 4 + 1 + 1 + 12 + 12;
constexpr std::uint64_t kMaxVoxels = std::uint64_t{1} << 31;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

std::uint32_t get_u32(std::string_view in, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

float get_f32(std::string_view in, std::size_t pos) { return std::bit_cast<float>(get_u32(in, pos)); }

void put_header(std::string& out, std::uint8_t type, const Dims& dims, const Spacing& sp) {
  out.append(kMagic, 4);
  out.push_back(static_cast<char>(kVersion));
  out.push_back(static_cast<char>(type));
  put_u32(out, dims.d);
  put_u32(out, dims.h);
  put_u32(out, dims.w);
  put_f32(out, sp.z);
  put_f32(out, sp.y);
  put_f32(out, sp.x);
}

std::size_t row_bytes(const Dims& dims) { return (static_cast<std::size_t>(dims.w) + 7) / 8; }

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading", path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed", path.string());
  return bytes;
}

void spill(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing", path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed", path.string());
}

}  // namespace

std::string to_string(const Dims& dims) {
  std::ostringstream os;
  os << dims.d << "x" << dims.h << "x" << dims.w;
  return os.str();
}

Volume3::Volume3(Dims dims, Spacing spacing, std::vector<float> data, bool windowed)
    : dims_(dims), spacing_(spacing), data_(std::move(data)), windowed_(false) {
  if (data_.size() != dims_.size())
    throw ShapeError("volume data length " + std::to_string(data_.size()) + " != " + to_string(dims_));
  if (!(spacing_.z > 0 && spacing_.y > 0 && spacing_.x > 0))
    throw ParameterError("spacing components must be strictly positive");
  if (windowed) mark_windowed();
}

Volume3 Volume3::filled(Dims dims, float value, Spacing spacing, bool windowed) {
  return Volume3(dims, spacing, std::vector<float>(dims.size(), value), windowed);
}

void Volume3::mark_windowed() {
  for (float v : data_) {
    if (!(v >= 0.0f && v <= 1.0f)) throw ParameterError("windowed volume holds a value outside [0,1]");
  }
  windowed_ = true;
}

Mask3::Mask3(Dims dims, bool value) : dims_(dims), bits_(dims.size(), value ? 1 : 0) {}

Mask3::Mask3(Dims dims, std::vector<std::uint8_t> bits) : dims_(dims), bits_(std::move(bits)) {
  if (bits_.size() != dims_.size())
    throw ShapeError("mask data length " + std::to_string(bits_.size()) + " != " + to_string(dims_));
  for (auto& b : bits_) b = b ? 1 : 0;
}

std::size_t Mask3::count() const noexcept {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

void require_same_dims(const Dims& a, const Dims& b, const char* what) {
  if (!(a == b)) throw ShapeError(std::string(what) + ": dims " + to_string(a) + " vs " + to_string(b));
}

namespace {
template <typename Op>
Mask3 combine(const Mask3& a, const Mask3& b, const char* what, Op op) {
  require_same_dims(a.dims(), b.dims(), what);
  std::vector<std::uint8_t> out(a.size());
  auto ab = a.bits();
  auto bb = b.bits();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = op(ab[i] != 0, bb[i] != 0) ? 1 : 0;
  return Mask3(a.dims(), std::move(out));
}
}  // namespace

Mask3 mask_and(const Mask3& a, const Mask3& b) {
  return combine(a, b, "mask_and", [](bool x, bool y) { return x && y; });
}
Mask3 mask_or(const Mask3& a, const Mask3& b) {
  return combine(a, b, "mask_or", [](bool x, bool y) { return x || y; });
}
Mask3 mask_minus(const Mask3& a, const Mask3& b) {
  return combine(a, b, "mask_minus", [](bool x, bool y) { return x && !y; });
}
Mask3 mask_not(const Mask3& a) {
  std::vector<std::uint8_t> out(a.size());
  auto ab = a.bits();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ab[i] ? 0 : 1;
  return Mask3(a.dims(), std::move(out));
}
bool mask_subset(const Mask3& a, const Mask3& b) {
  require_same_dims(a.dims(), b.dims(), "mask_subset");
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] && !b[i]) return false;
  return true;
}

double hu_to_unit(double hu, double lo, double hi) {
  if (!(lo < hi)) throw ParameterError("invalid window: lo must be < hi");
  return std::clamp((hu - lo) / (hi - lo), 0.0, 1.0);
}

Volume3 hu_window(const Volume3& raw, double lo, double hi) {
  if (!(lo < hi)) throw ParameterError("invalid window: lo must be < hi");
  if (raw.windowed()) throw ParameterError("hu_window: volume is already windowed");
  std::vector<float> out(raw.values().size());
  const double span = hi - lo;
  auto in = raw.values();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<float>(std::clamp((static_cast<double>(in[i]) - lo) / span, 0.0, 1.0));
  return Volume3(raw.dims(), raw.spacing(), std::move(out), true);
}

Volume3 apply_mask(const Volume3& v, const Mask3& m) {
  require_same_dims(v.dims(), m.dims(), "apply_mask");
  std::vector<float> out(v.values().begin(), v.values().end());
  for (std::size_t i = 0; i < out.size(); ++i)
    if (!m[i]) out[i] = 0.0f;
  return Volume3(v.dims(), v.spacing(), std::move(out), v.windowed());
}

Mask3 bright_mask(const Volume3& v, double tau) {
  std::vector<std::uint8_t> out(v.values().size());
  auto in = v.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(in[i]) >= tau ? 1 : 0;
  return Mask3(v.dims(), std::move(out));
}

std::string encode_volume(const Volume3& v) {
  std::string out;
  out.reserve(kHeaderBytes + 4 * v.values().size());
  put_header(out, kTypeVolume, v.dims(), v.spacing());
  for (float x : v.values()) put_f32(out, x);
  return out;
}

std::string encode_mask(const Mask3& m) {
  const Dims& dims = m.dims();
  const std::size_t rb = row_bytes(dims);
  std::string out;
  out.reserve(kHeaderBytes + rb * dims.d * dims.h);
  put_header(out, kTypeMask, dims, Spacing{});
  // LSB-first within each byte; every (z,y) row starts on a byte boundary.
  for (std::size_t row = 0; row < static_cast<std::size_t>(dims.d) * dims.h; ++row) {
    for (std::size_t b = 0; b < rb; ++b) {
      unsigned byte = 0;
      for (std::size_t bit = 0; bit < 8; ++bit) {
        const std::size_t x = b * 8 + bit;
        if (x < dims.w && m[row * dims.w + x]) byte |= 1u << bit;
      }
      out.push_back(static_cast<char>(byte));
    }
  }
  return out;
}

std::variant<Volume3, Mask3> decode_vol3(std::string_view bytes) {
  if (bytes.size() < 4 || !std::equal(kMagic, kMagic + 4, bytes.begin()))
    throw ParseError(ParseErrorKind::kBadMagic, "not a VOL3 file (bad magic)");
  if (bytes.size() < kHeaderBytes) throw ParseError(ParseErrorKind::kTruncated, "VOL3 header truncated");
  const auto version = static_cast<std::uint8_t>(bytes[4]);
  if (version != kVersion)
    throw ParseError(ParseErrorKind::kBadVersion, "unsupported VOL3 version " + std::to_string(version));
  const auto type = static_cast<std::uint8_t>(bytes[5]);
  if (type != kTypeVolume && type != kTypeMask)
    throw ParseError(ParseErrorKind::kBadType, "unknown VOL3 dtype " + std::to_string(type));
  const Dims dims{get_u32(bytes, 6), get_u32(bytes, 10), get_u32(bytes, 14)};
  const Spacing sp{get_f32(bytes, 18), get_f32(bytes, 22), get_f32(bytes, 26)};
  if (dims.d == 0 || dims.h == 0 || dims.w == 0)
    throw ParseError(ParseErrorKind::kBadDims, "VOL3 header has a zero dimension");
  const std::uint64_t voxels = std::uint64_t{dims.d} * dims.h * dims.w;
  if (dims.d > kMaxVoxels || dims.h > kMaxVoxels || dims.w > kMaxVoxels || voxels > kMaxVoxels ||
      voxels / dims.d / dims.h != dims.w)
    throw ParseError(ParseErrorKind::kDimsOverflow, "VOL3 dims " + to_string(dims) + " exceed the voxel limit");
  const std::string_view payload = bytes.substr(kHeaderBytes);

  if (type == kTypeVolume) {
    if (payload.size() != voxels * 4)
      throw ParseError(ParseErrorKind::kTruncated, "VOL3 volume payload has wrong length");
    std::vector<float> data(voxels);
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = get_f32(payload, 4 * i);
    if (!(sp.z > 0 && sp.y > 0 && sp.x > 0))
      throw ParseError(ParseErrorKind::kBadDims, "VOL3 spacing must be strictly positive");
    const bool in_unit = std::all_of(data.begin(), data.end(), [](float x) { return x >= 0.0f && x <= 1.0f; });
    return Volume3(dims, sp, std::move(data), in_unit);
  }

  const std::size_t rb = row_bytes(dims);
  const std::size_t rows = static_cast<std::size_t>(dims.d) * dims.h;
  if (payload.size() != rows * rb) throw ParseError(ParseErrorKind::kTruncated, "VOL3 mask payload has wrong length");
  std::vector<std::uint8_t> bits(voxels);
  for (std::size_t row = 0; row < rows; ++row)
    for (std::size_t x = 0; x < dims.w; ++x) {
      const auto byte = static_cast<unsigned char>(payload[row * rb + x / 8]);
      bits[row * dims.w + x] = (byte >> (x % 8)) & 1u;
    }
  return Mask3(dims, std::move(bits));
}

void write_volume(const std::filesystem::path& path, const Volume3& v) { spill(path, encode_volume(v)); }
void write_mask(const std::filesystem::path& path, const Mask3& m) { spill(path, encode_mask(m)); }

std::variant<Volume3, Mask3> read_vol3(const std::filesystem::path& path) { return decode_vol3(slurp(path)); }

Volume3 read_volume(const std::filesystem::path& path) {
  auto parsed = read_vol3(path);
  if (auto* v = std::get_if<Volume3>(&parsed)) return std::move(*v);
  throw ParseError(ParseErrorKind::kBadType, "expected a VOL3 volume, found a mask: " + path.string());
}

Mask3 read_mask(const std::filesystem::path& path) {
  auto parsed = read_vol3(path);
  if (auto* m = std::get_if<Mask3>(&parsed)) return std::move(*m);
  throw ParseError(ParseErrorKind::kBadType, "expected a VOL3 mask, found a volume: " + path.string());
}

}  // namespace normseg
