#pragma once

// Random fixtures and dense brute-force oracles shared by the unit and
// acceptance tests. Oracles are written independently of the library code.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <vector>

#include "normseg/morphkit.hpp"
#include "normseg/normnet.hpp"
#include "normseg/rng.hpp"
#include "normseg/vol3.hpp"

namespace normseg::testkit {

inline Dims random_dims(Rng& rng, long lo = 1, long hi = 12) {
  return {static_cast<std::uint32_t>(rng.uniform_int(lo, hi)), static_cast<std::uint32_t>(rng.uniform_int(lo, hi)),
          static_cast<std::uint32_t>(rng.uniform_int(lo, hi))};
}

inline Volume3 random_volume(const Dims& d, Rng& rng) {
  std::vector<float> v(d.size());
  for (auto& x : v) x = static_cast<float>(rng.uniform());
  return Volume3(d, {}, std::move(v), true);
}

inline Mask3 random_mask(const Dims& d, double density, Rng& rng) {
  Mask3 m(d);
  for (std::size_t i = 0; i < m.size(); ++i)
    if (rng.bernoulli(density)) m.set(i);
  return m;
}

/// Mirror about the half-sample boundary until inside [0, n).
inline long mirror(long i, long n) {
  while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - 1 - i;
  return i;
}

inline Volume3 gaussian_oracle(const Volume3& v, double sigma) {
  const long r = static_cast<long>(std::ceil(3.0 * sigma));
  std::vector<double> w(2 * r + 1);
  for (long k = -r; k <= r; ++k) w[k + r] = std::exp(-0.5 * k * k / (sigma * sigma));
  const double mass = std::accumulate(w.begin(), w.end(), 0.0);
  for (auto& x : w) x /= mass;
  const Dims& d = v.dims();
  std::vector<float> out(d.size());
  for (long z = 0; z < d.d; ++z)
    for (long y = 0; y < d.h; ++y)
      for (long x = 0; x < d.w; ++x) {
        double acc = 0.0;
        for (long a = -r; a <= r; ++a)
          for (long b = -r; b <= r; ++b)
            for (long c = -r; c <= r; ++c)
              acc += w[a + r] * w[b + r] * w[c + r] * v.at(mirror(z + a, d.d), mirror(y + b, d.h), mirror(x + c, d.w));
        out[d.index(z, y, x)] = static_cast<float>(acc);
      }
  return Volume3(d, v.spacing(), std::move(out), v.windowed());
}

inline std::vector<double> box_sum_oracle(const Dims& d, int k, bool per_slice,
                                          const std::function<double(long, long, long)>& value) {
  const long r = k / 2;
  const long rz = per_slice ? 0 : r;
  std::vector<double> out(d.size());
  for (long z = 0; z < d.d; ++z)
    for (long y = 0; y < d.h; ++y)
      for (long x = 0; x < d.w; ++x) {
        double acc = 0.0;
        for (long a = -rz; a <= rz; ++a)
          for (long b = -r; b <= r; ++b)
            for (long c = -r; c <= r; ++c) acc += value(mirror(z + a, d.d), mirror(y + b, d.h), mirror(x + c, d.w));
        out[d.index(z, y, x)] = acc;
      }
  return out;
}

inline Volume3 mean_oracle(const Volume3& v, int k, bool per_slice = false) {
  const auto sums = box_sum_oracle(v.dims(), k, per_slice, [&](long z, long y, long x) { return v.at(z, y, x); });
  const double cells = per_slice ? double(k) * k : double(k) * k * k;
  std::vector<float> out(sums.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(sums[i] / cells);
  return Volume3(v.dims(), v.spacing(), std::move(out), v.windowed());
}

inline Mask3 smooth_threshold_oracle(const Mask3& m, int k, double t) {
  const auto sums =
      box_sum_oracle(m.dims(), k, false, [&](long z, long y, long x) { return m.at(z, y, x) ? 1.0 : 0.0; });
  const double cells = double(k) * k * k;
  Mask3 out(m.dims());
  for (std::size_t i = 0; i < out.size(); ++i)
    if (sums[i] / cells > t) out.set(i);
  return out;
}

inline Mask3 dilate_oracle(Mask3 m, int radius, int iterations) {
  const Dims& d = m.dims();
  for (int it = 0; it < iterations; ++it) {
    Mask3 next(d);
    for (long z = 0; z < d.d; ++z)
      for (long y = 0; y < d.h; ++y)
        for (long x = 0; x < d.w; ++x) {
          bool hit = false;
          for (long a = -radius; a <= radius && !hit; ++a)
            for (long b = -radius; b <= radius && !hit; ++b)
              for (long c = -radius; c <= radius && !hit; ++c)
                hit = d.contains(z + a, y + b, x + c) && m.at(z + a, y + b, x + c);
          if (hit) next.set(z, y, x);
        }
    m = std::move(next);
  }
  return m;
}

/// Union-find labelling; components as sorted index lists ordered by first element.
inline std::vector<std::vector<std::size_t>> components_oracle(const Mask3& m, bool full26) {
  const Dims& d = m.dims();
  std::vector<std::size_t> parent(m.size());
  std::iota(parent.begin(), parent.end(), 0);
  const std::function<std::size_t(std::size_t)> find = [&](std::size_t i) {
    while (parent[i] != i) i = parent[i] = parent[parent[i]];
    return i;
  };
  for (long z = 0; z < d.d; ++z)
    for (long y = 0; y < d.h; ++y)
      for (long x = 0; x < d.w; ++x) {
        if (!m.at(z, y, x)) continue;
        for (long a = -1; a <= 1; ++a)
          for (long b = -1; b <= 1; ++b)
            for (long c = -1; c <= 1; ++c) {
              const int manhattan = std::abs(a) + std::abs(b) + std::abs(c);
              if (manhattan == 0 || (!full26 && manhattan > 1)) continue;
              if (!d.contains(z + a, y + b, x + c) || !m.at(z + a, y + b, x + c)) continue;
              parent[find(d.index(z, y, x))] = find(d.index(z + a, y + b, x + c));
            }
      }
  std::vector<std::vector<std::size_t>> groups(m.size());
  for (std::size_t i = 0; i < m.size(); ++i)
    if (m[i]) groups[find(i)].push_back(i);
  std::vector<std::vector<std::size_t>> out;
  for (auto& g : groups)
    if (!g.empty()) out.push_back(std::move(g));
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.front() < b.front(); });
  return out;
}

inline double max_abs_diff(const Volume3& a, const Volume3& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

/// Channel-major activations for the reference network.
struct RefTensor {
  int c = 0;
  Dims d{};
  std::vector<double> v;
  RefTensor(int channels, Dims dims) : c(channels), d(dims), v(static_cast<std::size_t>(channels) * dims.size()) {}
  double& at(int ch, long z, long y, long x) { return v[ch * d.size() + d.index(z, y, x)]; }
  double at(int ch, long z, long y, long x) const { return v[ch * d.size() + d.index(z, y, x)]; }
};

/// Direct 27-tap convolution with a zero border; weights indexed [tap][out][in].
template <typename T>
RefTensor ref_conv(const RefTensor& x, const std::vector<T>& w, const std::vector<T>& b, int cout) {
  RefTensor y(cout, x.d);
  for (int o = 0; o < cout; ++o)
    for (long z = 0; z < x.d.d; ++z)
      for (long yy = 0; yy < x.d.h; ++yy)
        for (long xx = 0; xx < x.d.w; ++xx) {
          double acc = b[o];
          for (int dz = -1; dz <= 1; ++dz)
            for (int dy = -1; dy <= 1; ++dy)
              for (int dx = -1; dx <= 1; ++dx) {
                if (!x.d.contains(z + dz, yy + dy, xx + dx)) continue;
                const int tap = (dz + 1) * 9 + (dy + 1) * 3 + (dx + 1);
                for (int i = 0; i < x.c; ++i)
                  acc += double(w[(static_cast<std::size_t>(tap) * cout + o) * x.c + i]) * x.at(i, z + dz, yy + dy, xx + dx);
              }
          y.at(o, z, yy, xx) = acc > 0 ? acc : std::exp(acc) - 1.0;
        }
  return y;
}

/// Independent encoder-decoder forward pass returning logits.
template <typename T>
std::vector<double> reference_logits(const net::TinyNet<T>& n, const Volume3& input) {
  const auto& cfg = n.config();
  const auto& P = n.params();
  const int L = cfg.levels, K = cfg.convs_per_level;
  int j = 0;
  RefTensor x(1, input.dims());
  for (std::size_t i = 0; i < input.size(); ++i) x.v[i] = input[i];
  std::vector<RefTensor> skips;
  for (int l = 0; l < L; ++l) {
    for (int k = 0; k < K; ++k, ++j) x = ref_conv(x, P[2 * j].value, P[2 * j + 1].value, n.convs()[j].out);
    if (l + 1 < L) {
      skips.push_back(x);
      RefTensor p(x.c, Dims{x.d.d / 2, x.d.h / 2, x.d.w / 2});
      for (int ch = 0; ch < x.c; ++ch)
        for (long z = 0; z < p.d.d; ++z)
          for (long y = 0; y < p.d.h; ++y)
            for (long xx = 0; xx < p.d.w; ++xx) {
              double m = -1e300;
              for (int a = 0; a < 8; ++a) m = std::max(m, x.at(ch, 2 * z + a / 4, 2 * y + (a / 2) % 2, 2 * xx + a % 2));
              p.at(ch, z, y, xx) = m;
            }
      x = p;
    }
  }
  for (int l = L - 2; l >= 0; --l) {
    const RefTensor& s = skips[l];
    RefTensor cat(x.c + s.c, s.d);
    for (int ch = 0; ch < x.c; ++ch)
      for (long z = 0; z < s.d.d; ++z)
        for (long y = 0; y < s.d.h; ++y)
          for (long xx = 0; xx < s.d.w; ++xx) cat.at(ch, z, y, xx) = x.at(ch, z / 2, y / 2, xx / 2);
    for (int ch = 0; ch < s.c; ++ch)
      for (std::size_t i = 0; i < s.d.size(); ++i) cat.v[(x.c + ch) * s.d.size() + i] = s.v[ch * s.d.size() + i];
    x = cat;
    for (int k = 0; k < K; ++k, ++j) x = ref_conv(x, P[2 * j].value, P[2 * j + 1].value, n.convs()[j].out);
  }
  std::vector<double> out(x.d.size(), double(P[2 * j + 1].value[0]));
  for (int ch = 0; ch < x.c; ++ch)
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += double(P[2 * j].value[ch]) * x.v[ch * x.d.size() + i];
  return out;
}

struct GradCheck {
  std::size_t checked = 0;
  double max_rel = 0.0;
};

/// Central-difference check of `backward` on a sample of coordinates of every parameter tensor.
inline GradCheck finite_difference_check(const net::TinyNet<double>& n, const net::Tensor<double>& input,
                                         const std::vector<std::uint8_t>& gt, std::size_t per_param, Rng& rng,
                                         double h = 1e-5) {
  const net::LossWeights w;
  auto grads = n.zero_gradients();
  net::backward<double>(n, input, gt, w, grads);
  const auto loss_at = [&](const net::TinyNet<double>& m) {
    const auto prob = net::forward(m, input);
    return net::segmentation_loss<double>(prob.data, gt, w, {}).total;
  };
  GradCheck out;
  net::TinyNet<double> probe = n;
  for (std::size_t p = 0; p < n.params().size(); ++p) {
    const std::size_t size = n.params()[p].value.size();
    for (std::size_t t = 0; t < std::min(per_param, size); ++t) {
      const std::size_t k = size <= per_param ? t : static_cast<std::size_t>(rng.uniform_int(0, long(size) - 1));
      const double orig = probe.params()[p].value[k];
      probe.params()[p].value[k] = orig + h;
      const double up = loss_at(probe);
      probe.params()[p].value[k] = orig - h;
      const double down = loss_at(probe);
      probe.params()[p].value[k] = orig;
      const double numeric = (up - down) / (2 * h);
      const double analytic = grads[p][k];
      const double rel = std::abs(numeric - analytic) / std::max(1e-6, std::abs(numeric) + std::abs(analytic));
      out.max_rel = std::max(out.max_rel, rel);
      ++out.checked;
    }
  }
  return out;
}

/// Dense post-processing reference: candidates, two box-threshold passes, growth inside G.
inline Mask3 segment_oracle(const Volume3& h, const Mask3& lung, const Mask3& healthy, double tau, int kd, double td,
                            int kf, double tf, int radius, int iterations) {
  Mask3 d(lung.dims()), f(lung.dims());
  for (std::size_t i = 0; i < lung.size(); ++i) {
    if (!lung[i] || healthy[i]) continue;
    f.set(i);
    if (h[i] >= tau) d.set(i);
  }
  const Mask3 e = smooth_threshold_oracle(d, kd, td);
  Mask3 g = smooth_threshold_oracle(f, kf, tf);
  const Mask3 grown = dilate_oracle(e, radius, iterations);
  Mask3 out(lung.dims());
  for (std::size_t i = 0; i < out.size(); ++i)
    if (grown[i] && g[i] && lung[i]) out.set(i);
  return out;
}

/// Fraction of positive/negative pairs ordered correctly, ties counted half.
inline std::optional<double> auc_pairs(const std::vector<double>& s, const std::vector<std::uint8_t>& pos) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (pos[i])
      for (std::size_t j = 0; j < s.size(); ++j)
        if (!pos[j]) {
          pairs += 1.0;
          wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
        }
  if (pairs == 0.0) return std::nullopt;
  return wins / pairs;
}

}  // namespace normseg::testkit
