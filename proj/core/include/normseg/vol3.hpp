#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace normseg {

/// Voxel counts along (z, y, x). Storage is row-major with x fastest.
struct Dims {
  std::uint32_t d = 0;
  std::uint32_t h = 0;
  std::uint32_t w = 0;

  constexpr std::size_t size() const noexcept {
    return static_cast<std::size_t>(d) * h * w;
  }
  constexpr std::size_t index(std::size_t z, std::size_t y, std::size_t x) const noexcept {
    return (z * h + y) * w + x;
  }
  constexpr bool contains(long z, long y, long x) const noexcept {
    return z >= 0 && y >= 0 && x >= 0 && z < static_cast<long>(d) &&
           y < static_cast<long>(h) && x < static_cast<long>(w);
  }
  friend constexpr bool operator==(const Dims&, const Dims&) = default;
};

std::string to_string(const Dims& dims);

/// Millimetres per voxel along (z, y, x).
struct Spacing {
  float z = 1.0f;
  float y = 1.0f;
  float x = 1.0f;
  friend constexpr bool operator==(const Spacing&, const Spacing&) = default;
};

/// Dense scalar grid. A windowed volume holds values in [0,1]; raw volumes carry HU.
class Volume3 {
 public:
  Volume3() = default;
  Volume3(Dims dims, Spacing spacing, std::vector<float> data, bool windowed);

  static Volume3 filled(Dims dims, float value, Spacing spacing = {}, bool windowed = true);

  const Dims& dims() const noexcept { return dims_; }
  const Spacing& spacing() const noexcept { return spacing_; }
  bool windowed() const noexcept { return windowed_; }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<const float> values() const noexcept { return data_; }
  std::span<float> values() noexcept { return data_; }

  float operator[](std::size_t i) const { return data_[i]; }
  float& operator[](std::size_t i) { return data_[i]; }
  float at(std::size_t z, std::size_t y, std::size_t x) const { return data_[dims_.index(z, y, x)]; }
  float& at(std::size_t z, std::size_t y, std::size_t x) { return data_[dims_.index(z, y, x)]; }

  /// Re-checks the [0,1] range and sets the marker; throws ParameterError when violated.
  void mark_windowed();

  friend bool operator==(const Volume3&, const Volume3&) = default;

 private:
  Dims dims_{};
  Spacing spacing_{};
  std::vector<float> data_;
  bool windowed_ = false;
};

/// Dense binary grid, one byte per voxel in memory.
class Mask3 {
 public:
  Mask3() = default;
  explicit Mask3(Dims dims, bool value = false);
  Mask3(Dims dims, std::vector<std::uint8_t> bits);

  const Dims& dims() const noexcept { return dims_; }
  std::size_t size() const noexcept { return bits_.size(); }

  bool operator[](std::size_t i) const { return bits_[i] != 0; }
  bool at(std::size_t z, std::size_t y, std::size_t x) const { return bits_[dims_.index(z, y, x)] != 0; }
  void set(std::size_t i, bool v = true) { bits_[i] = v ? 1 : 0; }
  void set(std::size_t z, std::size_t y, std::size_t x, bool v = true) { set(dims_.index(z, y, x), v); }

  std::span<const std::uint8_t> bits() const noexcept { return bits_; }

  std::size_t count() const noexcept;
  bool empty_set() const noexcept { return count() == 0; }

  friend bool operator==(const Mask3&, const Mask3&) = default;

 private:
  Dims dims_{};
  std::vector<std::uint8_t> bits_;
};

void require_same_dims(const Dims& a, const Dims& b, const char* what);

Mask3 mask_and(const Mask3& a, const Mask3& b);
Mask3 mask_or(const Mask3& a, const Mask3& b);
Mask3 mask_minus(const Mask3& a, const Mask3& b);
Mask3 mask_not(const Mask3& a);
/// True when every set voxel of `a` is set in `b`.
bool mask_subset(const Mask3& a, const Mask3& b);

/// Affine clip of raw HU to [0,1] over [lo, hi].
Volume3 hu_window(const Volume3& raw, double lo = -800.0, double hi = 100.0);
double hu_to_unit(double hu, double lo = -800.0, double hi = 100.0);

/// Voxel-wise product with a binary mask.
Volume3 apply_mask(const Volume3& v, const Mask3& m);

/// Inclusive threshold: set iff v(x) >= tau.
Mask3 bright_mask(const Volume3& v, double tau);

// VOL3 file I/O.
std::string encode_volume(const Volume3& v);
std::string encode_mask(const Mask3& m);
std::variant<Volume3, Mask3> decode_vol3(std::string_view bytes);

void write_volume(const std::filesystem::path& path, const Volume3& v);
void write_mask(const std::filesystem::path& path, const Mask3& m);
std::variant<Volume3, Mask3> read_vol3(const std::filesystem::path& path);
Volume3 read_volume(const std::filesystem::path& path);
Mask3 read_mask(const std::filesystem::path& path);

}  // namespace normseg
