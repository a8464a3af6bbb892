#include "normseg/morphkit.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <numbers>

#include <Eigen/Geometry>

#include "normseg/errors.hpp"

namespace normseg::morph {

namespace {

struct Line {
  std::size_t start;
  std::size_t stride;
  std::size_t length;
};

// Visits every 1-D line of the grid along `axis` (0 = z, 1 = y, 2 = x).
template <typename Fn>
void for_each_line(const Dims& dims, int axis, Fn&& fn) {
  const std::size_t d = dims.d, h = dims.h, w = dims.w;
  if (axis == 0) {
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) fn(Line{y * w + x, h * w, d});
  } else if (axis == 1) {
    for (std::size_t z = 0; z < d; ++z)
      for (std::size_t x = 0; x < w; ++x) fn(Line{z * h * w + x, w, h});
  } else {
    for (std::size_t z = 0; z < d; ++z)
      for (std::size_t y = 0; y < h; ++y) fn(Line{(z * h + y) * w, 1, w});
  }
}

std::size_t axis_length(const Dims& dims, int axis) { return axis == 0 ? dims.d : axis == 1 ? dims.h : dims.w; }

// Correlates every line along `axis` with `taps` (odd length), reflecting at the borders.
template <typename T>
void convolve_axis(std::vector<T>& data, const Dims& dims, int axis, const std::vector<T>& taps) {
  const long n = static_cast<long>(axis_length(dims, axis));
  const long r = static_cast<long>(taps.size() / 2);
  std::vector<long> table(static_cast<std::size_t>(n * (2 * r + 1)));
  for (long i = 0; i < n; ++i)
    for (long k = -r; k <= r; ++k) table[i * (2 * r + 1) + (k + r)] = reflect_index(i + k, n);
  std::vector<T> in(static_cast<std::size_t>(n));
  for_each_line(dims, axis, [&](const Line& line) {
    for (std::size_t i = 0; i < line.length; ++i) in[i] = data[line.start + i * line.stride];
    for (long i = 0; i < n; ++i) {
      T acc{};
      const long* idx = &table[i * (2 * r + 1)];
      for (long k = 0; k < 2 * r + 1; ++k) acc += taps[k] * in[idx[k]];
      data[line.start + i * line.stride] = acc;
    }
  });
}

// Running max/min over a window of half-width r with outside voxels fixed to 0.
void extremum_axis(std::vector<std::uint8_t>& data, const Dims& dims, int axis, int r, bool take_max) {
  const long n = static_cast<long>(axis_length(dims, axis));
  std::vector<std::uint8_t> in(static_cast<std::size_t>(n));
  for_each_line(dims, axis, [&](const Line& line) {
    for (std::size_t i = 0; i < line.length; ++i) in[i] = data[line.start + i * line.stride];
    for (long i = 0; i < n; ++i) {
      std::uint8_t v = take_max ? 0 : 1;
      for (long k = i - r; k <= i + r; ++k) {
        const std::uint8_t s = (k < 0 || k >= n) ? 0 : in[k];
        v = take_max ? std::max(v, s) : std::min(v, s);
      }
      data[line.start + i * line.stride] = v;
    }
  });
}

void require_odd(int k, const char* what) {
  if (k < 1 || k % 2 == 0) throw ParameterError(std::string(what) + ": kernel size must be odd and >= 1");
}

}  // namespace

long reflect_index(long i, long n) noexcept {
  if (n == 1) return 0;
  const long period = 2 * n;
  long m = i % period;
  if (m < 0) m += period;
  return m < n ? m : period - 1 - m;
}

Kernel1D gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) throw ParameterError("gaussian sigma must be > 0");
  Kernel1D k;
  k.radius = static_cast<int>(std::ceil(3.0 * sigma));
  k.taps.resize(2 * k.radius + 1);
  double sum = 0.0;
  for (int i = -k.radius; i <= k.radius; ++i) {
    const double t = std::exp(-0.5 * (i * i) / (sigma * sigma));
    k.taps[i + k.radius] = t;
    sum += t;
  }
  for (double& t : k.taps) t /= sum;
  return k;
}

Volume3 gaussian_filter(const Volume3& v, double sigma) {
  const Kernel1D kernel = gaussian_kernel(sigma);
  std::vector<double> buf(v.values().begin(), v.values().end());
  for (int axis = 0; axis < 3; ++axis) convolve_axis(buf, v.dims(), axis, kernel.taps);
  std::vector<float> out(buf.size());
  // Clamp to the input range: a convex combination cannot leave it, rounding can.
  const auto [lo, hi] = std::minmax_element(v.values().begin(), v.values().end());
  for (std::size_t i = 0; i < buf.size(); ++i)
    out[i] = std::clamp(static_cast<float>(buf[i]), *lo, *hi);
  return Volume3(v.dims(), v.spacing(), std::move(out), v.windowed());
}

Volume3 mean_filter(const Volume3& v, int k, BoxMode mode) {
  require_odd(k, "mean_filter");
  std::vector<double> buf(v.values().begin(), v.values().end());
  if (k > 1) {
    const std::vector<double> taps(k, 1.0 / k);
    for (int axis = (mode == BoxMode::kCube3D ? 0 : 1); axis < 3; ++axis) convolve_axis(buf, v.dims(), axis, taps);
  }
  std::vector<float> out(buf.size());
  const auto [lo, hi] = std::minmax_element(v.values().begin(), v.values().end());
  for (std::size_t i = 0; i < buf.size(); ++i)
    out[i] = std::clamp(static_cast<float>(buf[i]), *lo, *hi);
  return Volume3(v.dims(), v.spacing(), std::move(out), v.windowed());
}

std::vector<std::int32_t> box_count(const Mask3& m, int k, BoxMode mode) {
  require_odd(k, "box_count");
  std::vector<std::int32_t> buf(m.bits().begin(), m.bits().end());
  const std::vector<std::int32_t> taps(k, 1);
  for (int axis = (mode == BoxMode::kCube3D ? 0 : 1); axis < 3; ++axis) convolve_axis(buf, m.dims(), axis, taps);
  return buf;
}

Mask3 dilate(const Mask3& m, StructElem se, int iterations) {
  if (se.radius < 1) throw ParameterError("structuring element radius must be >= 1");
  if (iterations < 0) throw ParameterError("dilation iterations must be >= 0");
  std::vector<std::uint8_t> buf(m.bits().begin(), m.bits().end());
  for (int it = 0; it < iterations; ++it)
    for (int axis = 0; axis < 3; ++axis) extremum_axis(buf, m.dims(), axis, se.radius, true);
  return Mask3(m.dims(), std::move(buf));
}

Mask3 erode(const Mask3& m, StructElem se, int iterations) {
  if (se.radius < 1) throw ParameterError("structuring element radius must be >= 1");
  if (iterations < 0) throw ParameterError("erosion iterations must be >= 0");
  std::vector<std::uint8_t> buf(m.bits().begin(), m.bits().end());
  for (int it = 0; it < iterations; ++it)
    for (int axis = 0; axis < 3; ++axis) extremum_axis(buf, m.dims(), axis, se.radius, false);
  return Mask3(m.dims(), std::move(buf));
}

std::vector<Component> connected_components(const Mask3& m, Connectivity conn) {
  const Dims& dims = m.dims();
  std::vector<std::array<int, 3>> offsets;
  for (int dz = -1; dz <= 1; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int manhattan = std::abs(dz) + std::abs(dy) + std::abs(dx);
        if (manhattan == 0) continue;
        if (conn == Connectivity::k6 && manhattan != 1) continue;
        offsets.push_back({dz, dy, dx});
      }

  std::vector<std::uint8_t> seen(m.size(), 0);
  std::vector<Component> out;
  std::deque<std::size_t> queue;
  const std::size_t hw = static_cast<std::size_t>(dims.h) * dims.w;
  for (std::size_t seed = 0; seed < m.size(); ++seed) {
    if (!m[seed] || seen[seed]) continue;
    Component comp;
    seen[seed] = 1;
    queue.push_back(seed);
    while (!queue.empty()) {
      const std::size_t i = queue.front();
      queue.pop_front();
      comp.push_back(i);
      const long z = static_cast<long>(i / hw), y = static_cast<long>((i / dims.w) % dims.h),
                 x = static_cast<long>(i % dims.w);
      for (const auto& o : offsets) {
        const long nz = z + o[0], ny = y + o[1], nx = x + o[2];
        if (!dims.contains(nz, ny, nx)) continue;
        const std::size_t j = dims.index(nz, ny, nx);
        if (m[j] && !seen[j]) {
          seen[j] = 1;
          queue.push_back(j);
        }
      }
    }
    std::sort(comp.begin(), comp.end());
    out.push_back(std::move(comp));
  }
  return out;
}

Mask3 component_mask(const Dims& dims, const Component& c) {
  Mask3 m(dims);
  for (std::size_t i : c) m.set(i);
  return m;
}

Rotation random_rotation(Rng& rng) {
  const double u1 = rng.uniform(), u2 = rng.uniform(), u3 = rng.uniform();
  const double a = std::sqrt(1.0 - u1), b = std::sqrt(u1);
  const double t2 = 2.0 * std::numbers::pi * u2, t3 = 2.0 * std::numbers::pi * u3;
  const Eigen::Quaterniond q(b * std::cos(t3), a * std::sin(t2), a * std::cos(t2), b * std::sin(t3));
  return q.normalized().toRotationMatrix();
}

Mask3 voxelize_ellipsoid(const Vec3& semi_axes, const Rotation& rotation, const Vec3& centre, const Dims& dims) {
  const double a = semi_axes.x(), b = semi_axes.y(), c = semi_axes.z();
  if (!(a > 0 && b > 0 && c > 0)) throw ParameterError("ellipsoid semi-axes must be > 0");
  if (!(centre.x() >= 0 && centre.y() >= 0 && centre.z() >= 0 && centre.x() <= dims.w - 1.0 &&
        centre.y() <= dims.h - 1.0 && centre.z() <= dims.d - 1.0))
    throw ParameterError("ellipsoid centre lies outside the grid");
  Mask3 out(dims);
  const double reach = std::max({a, b, c});
  const auto lo = [&](double v) { return std::max(0L, static_cast<long>(std::floor(v - reach))); };
  const auto hi = [](double v, double reach_, std::uint32_t n) {
    return std::min(static_cast<long>(n) - 1, static_cast<long>(std::ceil(v + reach_)));
  };
  // Compare q_x^2 (bc)^2 + q_y^2 (ac)^2 + q_z^2 (ab)^2 <= (abc)^2 so lattice points on the surface stay exact.
  const double bc2 = b * b * c * c, ac2 = a * a * c * c, ab2 = a * a * b * b, abc2 = a * a * b * b * c * c;
  const Rotation inv = rotation.transpose();
  for (long z = lo(centre.z()); z <= hi(centre.z(), reach, dims.d); ++z)
    for (long y = lo(centre.y()); y <= hi(centre.y(), reach, dims.h); ++y)
      for (long x = lo(centre.x()); x <= hi(centre.x(), reach, dims.w); ++x) {
        const Vec3 q = inv * (Vec3(x, y, z) - centre);
        if (q.x() * q.x() * bc2 + q.y() * q.y() * ac2 + q.z() * q.z() * ab2 <= abc2) out.set(z, y, x);
      }
  return out;
}

Mask3 rotate_mask(const Mask3& m, const Rotation& rotation) {
  const Dims& dims = m.dims();
  const Vec3 centre((dims.w - 1) / 2.0, (dims.h - 1) / 2.0, (dims.d - 1) / 2.0);
  const Rotation inv = rotation.transpose();
  Mask3 out(dims);
  for (std::size_t z = 0; z < dims.d; ++z)
    for (std::size_t y = 0; y < dims.h; ++y)
      for (std::size_t x = 0; x < dims.w; ++x) {
        const Vec3 src = inv * (Vec3(x, y, z) - centre) + centre;
        const long sx = std::lround(src.x()), sy = std::lround(src.y()), sz = std::lround(src.z());
        if (dims.contains(sz, sy, sx) && m.at(sz, sy, sx)) out.set(z, y, x);
      }
  return out;
}

Mask3 elastic_deform(const Mask3& m, int grid_spacing, double magnitude, std::uint64_t seed) {
  if (grid_spacing < 2) throw ParameterError("elastic grid spacing must be >= 2");
  if (!(magnitude >= 0.0)) throw ParameterError("elastic magnitude must be >= 0");
  const Dims& dims = m.dims();
  if (magnitude == 0.0) return m;
  const auto nodes = [&](std::uint32_t n) {
    return static_cast<std::size_t>((n + grid_spacing - 2) / grid_spacing) + 2;
  };
  const std::size_t gz = nodes(dims.d), gy = nodes(dims.h), gx = nodes(dims.w);
  Rng rng(seed);
  std::vector<Vec3> field(gz * gy * gx);
  for (auto& v : field) {
    const double dx = rng.uniform(-magnitude, magnitude);
    const double dy = rng.uniform(-magnitude, magnitude);
    const double dz = rng.uniform(-magnitude, magnitude);
    v = Vec3(dx, dy, dz);
  }
  const auto node = [&](std::size_t z, std::size_t y, std::size_t x) -> const Vec3& {
    return field[(z * gy + y) * gx + x];
  };
  Mask3 out(dims);
  const double s = grid_spacing;
  for (std::size_t z = 0; z < dims.d; ++z) {
    const std::size_t iz = static_cast<std::size_t>(z / s);
    const double fz = z / s - iz;
    for (std::size_t y = 0; y < dims.h; ++y) {
      const std::size_t iy = static_cast<std::size_t>(y / s);
      const double fy = y / s - iy;
      for (std::size_t x = 0; x < dims.w; ++x) {
        const std::size_t ix = static_cast<std::size_t>(x / s);
        const double fx = x / s - ix;
        Vec3 disp = Vec3::Zero();
        for (int c = 0; c < 8; ++c) {
          const int cz = (c >> 2) & 1, cy = (c >> 1) & 1, cx = c & 1;
          const double wgt = (cz ? fz : 1 - fz) * (cy ? fy : 1 - fy) * (cx ? fx : 1 - fx);
          disp += wgt * node(iz + cz, iy + cy, ix + cx);
        }
        const long sx = std::lround(x + disp.x()), sy = std::lround(y + disp.y()), sz = std::lround(z + disp.z());
        if (dims.contains(sz, sy, sx) && m.at(sz, sy, sx)) out.set(z, y, x);
      }
    }
  }
  return out;
}

}  // namespace normseg::morph
