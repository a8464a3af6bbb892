#include "normseg/normnet.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>

#include <Eigen/Core>
#include <zlib.h>

#include "normseg/errors.hpp"
#include "normseg/rng.hpp"

namespace normseg::net {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstMat = Eigen::Map<const RowMat<T>>;
template <typename T>
using Mat = Eigen::Map<RowMat<T>>;

constexpr int kTaps = 27;

// Geometry of a grid embedded in a one-voxel zero border. Output voxels are
// computed over the contiguous padded index range [q0, q1], which spans every
// interior voxel; each kernel tap then reads a contiguous shifted range.
struct PadGeom {
  Dims dims;
  std::size_t sh, sd, npad, q0, q1, len;
  explicit PadGeom(const Dims& d) : dims(d) {
    sh = d.w + 2;
    sd = (d.h + 2) * sh;
    npad = (d.d + 2) * sd;
    q0 = sd + sh + 1;
    q1 = d.d * sd + d.h * sh + d.w;
    len = q1 - q0 + 1;
  }
  std::size_t padded(std::size_t z, std::size_t y, std::size_t x) const { return (z + 1) * sd + (y + 1) * sh + x + 1; }
  long delta(int k) const {
    const long dz = k / 9 - 1, dy = (k / 3) % 3 - 1, dx = k % 3 - 1;
    return dz * static_cast<long>(sd) + dy * static_cast<long>(sh) + dx;
  }
};

template <typename T, typename Fn>
void for_interior(const PadGeom& g, Fn&& fn) {
  std::size_t i = 0;
  for (std::size_t z = 0; z < g.dims.d; ++z)
    for (std::size_t y = 0; y < g.dims.h; ++y) {
      const std::size_t row = g.padded(z, y, 0);
      for (std::size_t x = 0; x < g.dims.w; ++x, ++i) fn(i, row + x);
    }
}

template <typename T>
std::vector<T> pad(const Tensor<T>& x, const PadGeom& g) {
  std::vector<T> p(static_cast<std::size_t>(x.channels) * g.npad, T{});
  for (int c = 0; c < x.channels; ++c) {
    const T* src = x.channel(c);
    T* dst = p.data() + c * g.npad;
    for_interior<T>(g, [&](std::size_t i, std::size_t q) { dst[q] = src[i]; });
  }
  return p;
}

template <typename T>
Tensor<T> conv3_forward(const Tensor<T>& x, const std::vector<T>& w, const std::vector<T>& b, int cout) {
  const PadGeom g(x.dims);
  const int cin = x.channels;
  const std::vector<T> p = pad(x, g);
  RowMat<T> out = RowMat<T>::Zero(cout, static_cast<Eigen::Index>(g.len));
  for (int k = 0; k < kTaps; ++k) {
    const ConstMat<T> wk(w.data() + static_cast<std::size_t>(k) * cout * cin, cout, cin);
    const ConstStridedMap<T> pk(p.data() + g.q0 + g.delta(k), cin, static_cast<Eigen::Index>(g.len),
                                Eigen::OuterStride<>(static_cast<Eigen::Index>(g.npad)));
    out.noalias() += wk * pk;
  }
  Tensor<T> y(cout, x.dims);
  for (int c = 0; c < cout; ++c) {
    T* dst = y.channel(c);
    const T* row = out.data() + static_cast<std::size_t>(c) * g.len;
    for_interior<T>(g, [&](std::size_t i, std::size_t q) { dst[i] = row[q - g.q0] + b[c]; });
  }
  return y;
}

// Accumulates dW, db and returns dx.
template <typename T>
Tensor<T> conv3_backward(const Tensor<T>& x, const std::vector<T>& w, const Tensor<T>& dy, std::vector<T>& dw,
                         std::vector<T>& db, T scale) {
  const PadGeom g(x.dims);
  const int cin = x.channels, cout = dy.channels;
  const std::vector<T> p = pad(x, g);
  Tensor<T> scaled = dy;
  for (auto& v : scaled.data) v *= scale;
  const std::vector<T> dyp = pad(scaled, g);
  for (int c = 0; c < cout; ++c) {
    T s{};
    const T* src = scaled.channel(c);
    for (std::size_t i = 0; i < scaled.voxels(); ++i) s += src[i];
    db[c] += s;
  }
  const ConstStridedMap<T> dyk(dyp.data() + g.q0, cout, static_cast<Eigen::Index>(g.len),
                               Eigen::OuterStride<>(static_cast<Eigen::Index>(g.npad)));
  std::vector<T> dp(static_cast<std::size_t>(cin) * g.npad, T{});
  for (int k = 0; k < kTaps; ++k) {
    const std::size_t off = static_cast<std::size_t>(k) * cout * cin;
    const ConstMat<T> wk(w.data() + off, cout, cin);
    Mat<T> dwk(dw.data() + off, cout, cin);
    const ConstStridedMap<T> pk(p.data() + g.q0 + g.delta(k), cin, static_cast<Eigen::Index>(g.len),
                                Eigen::OuterStride<>(static_cast<Eigen::Index>(g.npad)));
    dwk.noalias() += dyk * pk.transpose();
    StridedMap<T> dpk(dp.data() + g.q0 + g.delta(k), cin, static_cast<Eigen::Index>(g.len),
                      Eigen::OuterStride<>(static_cast<Eigen::Index>(g.npad)));
    dpk.noalias() += wk.transpose() * dyk;
  }
  Tensor<T> dx(cin, x.dims);
  for (int c = 0; c < cin; ++c) {
    T* dst = dx.channel(c);
    const T* src = dp.data() + c * g.npad;
    for_interior<T>(g, [&](std::size_t i, std::size_t q) { dst[i] = src[q]; });
  }
  return dx;
}

template <typename T>
Tensor<T> head_forward(const Tensor<T>& x, const std::vector<T>& w, const std::vector<T>& b) {
  Tensor<T> z(1, x.dims);
  const ConstMat<T> xm(x.data.data(), x.channels, static_cast<Eigen::Index>(x.voxels()));
  const Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> wm(w.data(), x.channels);
  Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> zm(z.data.data(), static_cast<Eigen::Index>(x.voxels()));
  zm.noalias() = wm * xm;
  zm.array() += b[0];
  return z;
}

template <typename T>
Tensor<T> head_backward(const Tensor<T>& x, const std::vector<T>& w, const Tensor<T>& dz, std::vector<T>& dw,
                        std::vector<T>& db, T scale) {
  const auto n = static_cast<Eigen::Index>(x.voxels());
  const ConstMat<T> xm(x.data.data(), x.channels, n);
  const Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> dzm(dz.data.data(), n);
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> dwm(dw.data(), x.channels);
  dwm.noalias() += scale * (xm * dzm);
  db[0] += scale * dzm.sum();
  Tensor<T> dx(x.channels, x.dims);
  Mat<T> dxm(dx.data.data(), x.channels, n);
  const Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> wm(w.data(), x.channels);
  dxm.noalias() = scale * (wm * dzm.transpose());
  return dx;
}

template <typename T>
void elu_inplace(Tensor<T>& x) {
  for (auto& v : x.data) v = v > T{} ? v : std::expm1(v);
}

// dL/dpre from dL/dout using the post-activation value.
template <typename T>
void elu_backward(const Tensor<T>& out, Tensor<T>& grad) {
  for (std::size_t i = 0; i < grad.data.size(); ++i) {
    const T y = out.data[i];
    grad.data[i] *= y > T{} ? T{1} : y + T{1};
  }
}

template <typename T>
Tensor<T> maxpool(const Tensor<T>& x, std::vector<std::uint32_t>& argmax) {
  const Dims od{x.dims.d / 2, x.dims.h / 2, x.dims.w / 2};
  Tensor<T> y(x.channels, od);
  argmax.assign(static_cast<std::size_t>(x.channels) * od.size(), 0);
  for (int c = 0; c < x.channels; ++c) {
    const T* src = x.channel(c);
    T* dst = y.channel(c);
    std::uint32_t* am = argmax.data() + static_cast<std::size_t>(c) * od.size();
    std::size_t o = 0;
    for (std::size_t z = 0; z < od.d; ++z)
      for (std::size_t yy = 0; yy < od.h; ++yy)
        for (std::size_t xx = 0; xx < od.w; ++xx, ++o) {
          std::size_t best = x.dims.index(2 * z, 2 * yy, 2 * xx);
          for (int k = 1; k < 8; ++k) {
            const std::size_t i = x.dims.index(2 * z + (k >> 2), 2 * yy + ((k >> 1) & 1), 2 * xx + (k & 1));
            if (src[i] > src[best]) best = i;
          }
          dst[o] = src[best];
          am[o] = static_cast<std::uint32_t>(best);
        }
  }
  return y;
}

template <typename T>
Tensor<T> maxpool_backward(const Tensor<T>& dy, const std::vector<std::uint32_t>& argmax, const Dims& in_dims) {
  Tensor<T> dx(dy.channels, in_dims);
  for (int c = 0; c < dy.channels; ++c) {
    const T* src = dy.channel(c);
    T* dst = dx.channel(c);
    const std::uint32_t* am = argmax.data() + static_cast<std::size_t>(c) * dy.voxels();
    for (std::size_t o = 0; o < dy.voxels(); ++o) dst[am[o]] += src[o];
  }
  return dx;
}

template <typename T>
Tensor<T> upsample(const Tensor<T>& x) {
  const Dims od{x.dims.d * 2, x.dims.h * 2, x.dims.w * 2};
  Tensor<T> y(x.channels, od);
  for (int c = 0; c < x.channels; ++c) {
    const T* src = x.channel(c);
    T* dst = y.channel(c);
    std::size_t o = 0;
    for (std::size_t z = 0; z < od.d; ++z)
      for (std::size_t yy = 0; yy < od.h; ++yy)
        for (std::size_t xx = 0; xx < od.w; ++xx, ++o) dst[o] = src[x.dims.index(z / 2, yy / 2, xx / 2)];
  }
  return y;
}

template <typename T>
Tensor<T> upsample_backward(const Tensor<T>& dy, const Dims& in_dims) {
  Tensor<T> dx(dy.channels, in_dims);
  for (int c = 0; c < dy.channels; ++c) {
    const T* src = dy.channel(c);
    T* dst = dx.channel(c);
    std::size_t o = 0;
    for (std::size_t z = 0; z < dy.dims.d; ++z)
      for (std::size_t yy = 0; yy < dy.dims.h; ++yy)
        for (std::size_t xx = 0; xx < dy.dims.w; ++xx, ++o) dst[in_dims.index(z / 2, yy / 2, xx / 2)] += src[o];
  }
  return dx;
}

template <typename T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> out(a.channels + b.channels, a.dims);
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(a.data.size()));
  return out;
}

template <typename T>
void add_into(Tensor<T>& acc, const Tensor<T>& x) {
  for (std::size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += x.data[i];
}

// Conv indices: encoder level l, conv k -> l*K + k; decoder level l (run from
// levels-2 down to 0), conv k -> levels*K + (levels-2-l)*K + k; head last.
struct Layout {
  int levels, k;
  int enc(int l, int c) const { return l * k + c; }
  int dec(int l, int c) const { return levels * k + (levels - 2 - l) * k + c; }
  int head() const { return levels * k + (levels - 1) * k; }
};

template <typename T>
struct Trace {
  std::vector<Tensor<T>> conv_in;   // input of every conv (incl. head)
  std::vector<Tensor<T>> conv_out;  // post-activation output of every 3^3 conv
  std::vector<std::vector<std::uint32_t>> argmax;
  std::vector<Dims> pool_in_dims;
  Tensor<T> prob;
};

template <typename T>
Tensor<T> run_forward(const TinyNet<T>& net, const Tensor<T>& input, Trace<T>* trace, bool logits_only) {
  const NetConfig& cfg = net.config();
  const std::uint32_t g = cfg.granularity();
  if (input.channels != 1 || input.dims.d % g || input.dims.h % g || input.dims.w % g || input.dims.size() == 0)
    throw ShapeError("forward: input dims " + to_string(input.dims) + " must be non-zero multiples of " +
                     std::to_string(g));
  const Layout lay{cfg.levels, cfg.convs_per_level};
  const auto& P = net.params();
  const auto& shapes = net.convs();
  if (trace) {
    trace->conv_in.assign(shapes.size(), {});
    trace->conv_out.assign(shapes.size(), {});
    trace->argmax.assign(cfg.levels, {});
    trace->pool_in_dims.assign(cfg.levels, {});
  }
  const auto conv = [&](int j, const Tensor<T>& x) {
    Tensor<T> y = conv3_forward(x, P[2 * j].value, P[2 * j + 1].value, shapes[j].out);
    elu_inplace(y);
    if (trace) {
      trace->conv_in[j] = x;
      trace->conv_out[j] = y;
    }
    return y;
  };

  Tensor<T> x = input;
  std::vector<Tensor<T>> skips(cfg.levels);
  for (int l = 0; l < cfg.levels; ++l) {
    for (int c = 0; c < cfg.convs_per_level; ++c) x = conv(lay.enc(l, c), x);
    if (l < cfg.levels - 1) {
      skips[l] = x;
      std::vector<std::uint32_t> am;
      Tensor<T> pooled = maxpool(x, am);
      if (trace) {
        trace->argmax[l] = std::move(am);
        trace->pool_in_dims[l] = x.dims;
      }
      x = std::move(pooled);
    }
  }
  for (int l = cfg.levels - 2; l >= 0; --l) {
    x = concat(upsample(x), skips[l]);
    for (int c = 0; c < cfg.convs_per_level; ++c) x = conv(lay.dec(l, c), x);
  }
  const int h = lay.head();
  if (trace) trace->conv_in[h] = x;
  Tensor<T> z = head_forward(x, P[2 * h].value, P[2 * h + 1].value);
  if (logits_only) return z;
  for (auto& v : z.data) v = T{1} / (T{1} + std::exp(-v));
  if (trace) trace->prob = z;
  return z;
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}
void put_u64(std::string& out, std::uint64_t v) {
  put_u32(out, static_cast<std::uint32_t>(v));
  put_u32(out, static_cast<std::uint32_t>(v >> 32));
}
void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    const std::uint64_t lo = u32();
    return lo | (static_cast<std::uint64_t>(u32()) << 32);
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > in_.size()) throw ParseError(ParseErrorKind::kTruncated, "TNET model file truncated");
  }
  std::string_view in_;
  std::size_t pos_ = 0;
};

}  // namespace

void NetConfig::validate() const {
  if (levels < 1 || levels > 6) throw ConfigError("net levels must lie in [1,6]");
  if (base_channels < 1 || convs_per_level < 1) throw ConfigError("net widths must be >= 1");
  const std::uint32_t g = granularity();
  const auto aligned = [g](const Dims& d) { return d.d % g == 0 && d.h % g == 0 && d.w % g == 0 && d.size() > 0; };
  if (!aligned(patch)) throw ConfigError("patch dims must be non-zero multiples of 2^(levels-1)");
  if (!aligned(inference_tile())) throw ConfigError("tile dims must be non-zero multiples of 2^(levels-1)");
  if (!(lr >= 0.0)) throw ConfigError("learning rate must be >= 0");
  if (batch_size < 1 || iterations < 0) throw ConfigError("invalid batch size or iteration count");
  if (ensemble_size < 1 || vote_quorum < 1 || vote_quorum > ensemble_size)
    throw ConfigError("vote quorum must lie in [1, ensemble_size]");
  if (!(prob_threshold >= 0.0 && prob_threshold <= 1.0)) throw ConfigError("prob_threshold must lie in [0,1]");
}

template <typename T>
TinyNet<T>::TinyNet(const NetConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const Layout lay{cfg.levels, cfg.convs_per_level};
  const auto width = [&](int l) { return cfg.base_channels << l; };
  convs_.assign(lay.head() + 1, ConvShape{0, 0, kTaps});
  for (int l = 0; l < cfg.levels; ++l)
    for (int c = 0; c < cfg.convs_per_level; ++c)
      convs_[lay.enc(l, c)] = {c == 0 ? (l == 0 ? 1 : width(l - 1)) : width(l), width(l), kTaps};
  for (int l = cfg.levels - 2; l >= 0; --l)
    for (int c = 0; c < cfg.convs_per_level; ++c)
      convs_[lay.dec(l, c)] = {c == 0 ? width(l + 1) + width(l) : width(l), width(l), kTaps};
  convs_[lay.head()] = {width(0), 1, 1};

  for (std::size_t j = 0; j < convs_.size(); ++j) {
    const auto& s = convs_[j];
    const std::size_t n = static_cast<std::size_t>(s.taps) * s.in * s.out;
    const std::string stem = j + 1 == convs_.size() ? "head" : "conv" + std::to_string(j);
    params_.push_back({stem + ".weight", std::vector<T>(n), std::vector<T>(n), std::vector<T>(n)});
    params_.push_back({stem + ".bias", std::vector<T>(s.out), std::vector<T>(s.out), std::vector<T>(s.out)});
  }
}

template <typename T>
TinyNet<T> TinyNet<T>::initialized(const NetConfig& cfg, std::uint64_t seed) {
  TinyNet net(cfg);
  Rng rng(seed);
  for (std::size_t j = 0; j < net.convs_.size(); ++j) {
    const auto& s = net.convs_[j];
    const double fan_in = static_cast<double>(s.taps) * s.in;
    const double stddev = std::sqrt((j + 1 == net.convs_.size() ? 1.0 : 2.0) / fan_in);
    for (auto& w : net.params_[2 * j].value) w = static_cast<T>(rng.normal(0.0, stddev));
  }
  return net;
}

template <typename T>
std::size_t TinyNet<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename T>
Gradients<T> TinyNet<T>::zero_gradients() const {
  Gradients<T> g;
  for (const auto& p : params_) g.emplace_back(p.value.size(), T{});
  return g;
}

template <typename T>
template <typename U>
TinyNet<U> TinyNet<T>::cast() const {
  TinyNet<U> out(cfg_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& dst = out.params()[i];
    for (std::size_t k = 0; k < params_[i].value.size(); ++k) {
      dst.value[k] = static_cast<U>(params_[i].value[k]);
      dst.m[k] = static_cast<U>(params_[i].m[k]);
      dst.v[k] = static_cast<U>(params_[i].v[k]);
    }
  }
  out.set_step(step_);
  return out;
}

template <typename T>
Tensor<T> to_tensor(const Volume3& v) {
  Tensor<T> t(1, v.dims());
  for (std::size_t i = 0; i < t.data.size(); ++i) t.data[i] = static_cast<T>(v[i]);
  return t;
}

template <typename T>
Tensor<T> forward(const TinyNet<T>& net, const Tensor<T>& input) {
  return run_forward<T>(net, input, nullptr, false);
}

template <typename T>
Tensor<T> forward_logits(const TinyNet<T>& net, const Tensor<T>& input) {
  return run_forward<T>(net, input, nullptr, true);
}

template <typename T>
LossValue segmentation_loss(std::span<const T> pred, std::span<const std::uint8_t> gt, const LossWeights& w,
                            std::span<T> grad) {
  if (pred.size() != gt.size()) throw ShapeError("segmentation_loss: prediction and target sizes differ");
  const std::size_t n = pred.size();
  double sp = 0.0, sg = 0.0, spg = 0.0, ce = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = pred[i], g = gt[i] ? 1.0 : 0.0;
    sp += p;
    sg += g;
    spg += p * g;
    const double pc = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
    ce -= g * std::log(pc) + (1.0 - g) * std::log(1.0 - pc);
  }
  const double denom = sp + sg + kDiceEpsilon;
  const double numer = 2.0 * spg + kDiceEpsilon;
  LossValue out;
  out.dice = 1.0 - numer / denom;
  out.ce = n ? ce / static_cast<double>(n) : 0.0;
  out.total = w.dice * out.dice + w.ce * out.ce;
  if (!grad.empty()) {
    if (grad.size() != n) throw ShapeError("segmentation_loss: gradient buffer has the wrong size");
    const double inv_n = n ? 1.0 / static_cast<double>(n) : 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double p = pred[i], g = gt[i] ? 1.0 : 0.0;
      const double d_dice = -(2.0 * g * denom - numer) / (denom * denom);
      double d_ce = 0.0;
      if (p > kProbClamp && p < 1.0 - kProbClamp) d_ce = -inv_n * (g / p - (1.0 - g) / (1.0 - p));
      grad[i] = static_cast<T>(w.dice * d_dice + w.ce * d_ce);
    }
  }
  return out;
}

template <typename T>
LossValue backward(const TinyNet<T>& net, const Tensor<T>& input, std::span<const std::uint8_t> gt,
                   const LossWeights& w, Gradients<T>& grads, double scale) {
  const NetConfig& cfg = net.config();
  Trace<T> tr;
  run_forward<T>(net, input, &tr, false);
  Tensor<T> dz(1, input.dims);
  const LossValue loss = segmentation_loss<T>(tr.prob.data, gt, w, dz.data);
  for (std::size_t i = 0; i < dz.data.size(); ++i) {
    const T p = tr.prob.data[i];
    dz.data[i] *= p * (T{1} - p);
  }
  const Layout lay{cfg.levels, cfg.convs_per_level};
  const auto& P = net.params();
  const T s = static_cast<T>(scale);

  const int h = lay.head();
  Tensor<T> dx = head_backward(tr.conv_in[h], P[2 * h].value, dz, grads[2 * h], grads[2 * h + 1], s);
  // The head gradient already carries `scale`; deeper layers use unit scale.
  const auto conv_back = [&](int j, Tensor<T> dy) {
    elu_backward(tr.conv_out[j], dy);
    return conv3_backward(tr.conv_in[j], P[2 * j].value, dy, grads[2 * j], grads[2 * j + 1], T{1});
  };

  std::vector<Tensor<T>> dskip(cfg.levels);
  for (int l = 0; l <= cfg.levels - 2; ++l) {
    for (int c = cfg.convs_per_level - 1; c >= 0; --c) dx = conv_back(lay.dec(l, c), std::move(dx));
    const int up_channels = cfg.base_channels << (l + 1);
    const Dims coarse{dx.dims.d / 2, dx.dims.h / 2, dx.dims.w / 2};
    Tensor<T> dup(up_channels, dx.dims), ds(dx.channels - up_channels, dx.dims);
    std::copy(dx.data.begin(), dx.data.begin() + static_cast<std::ptrdiff_t>(dup.data.size()), dup.data.begin());
    std::copy(dx.data.begin() + static_cast<std::ptrdiff_t>(dup.data.size()), dx.data.end(), ds.data.begin());
    dskip[l] = std::move(ds);
    dx = upsample_backward(dup, coarse);
  }
  for (int l = cfg.levels - 1; l >= 0; --l) {
    if (l < cfg.levels - 1) {
      Tensor<T> g = maxpool_backward(dx, tr.argmax[l], tr.pool_in_dims[l]);
      add_into(g, dskip[l]);
      dx = std::move(g);
    }
    for (int c = cfg.convs_per_level - 1; c >= 0; --c) dx = conv_back(lay.enc(l, c), std::move(dx));
  }
  return loss;
}

template <typename T>
void adam_step(TinyNet<T>& net, const Gradients<T>& grads, const AdamSettings& s) {
  if (grads.size() != net.params().size()) throw ShapeError("adam_step: gradient list does not match parameters");
  net.set_step(net.step() + 1);
  const double t = static_cast<double>(net.step());
  const double c1 = 1.0 - std::pow(s.beta1, t), c2 = 1.0 - std::pow(s.beta2, t);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    auto& p = net.params()[i];
    if (grads[i].size() != p.value.size()) throw ShapeError("adam_step: gradient shape mismatch in " + p.name);
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double g = grads[i][k];
      const double m = s.beta1 * p.m[k] + (1.0 - s.beta1) * g;
      const double v = s.beta2 * p.v[k] + (1.0 - s.beta2) * g * g;
      p.m[k] = static_cast<T>(m);
      p.v[k] = static_cast<T>(v);
      p.value[k] = static_cast<T>(p.value[k] - s.lr * (m / c1) / (std::sqrt(v / c2) + s.eps));
    }
  }
}

PatchSample extract_patch(const forge::TrainPair& pair, const Dims& dims, long cz, long cy, long cx) {
  PatchSample s{Tensor<float>(1, dims), std::vector<std::uint8_t>(dims.size(), 0)};
  const Dims& vd = pair.input.dims();
  const long z0 = cz - dims.d / 2, y0 = cy - dims.h / 2, x0 = cx - dims.w / 2;
  std::size_t o = 0;
  for (long z = 0; z < static_cast<long>(dims.d); ++z)
    for (long y = 0; y < static_cast<long>(dims.h); ++y)
      for (long x = 0; x < static_cast<long>(dims.w); ++x, ++o) {
        if (!vd.contains(z0 + z, y0 + y, x0 + x)) continue;
        const std::size_t i = vd.index(z0 + z, y0 + y, x0 + x);
        s.input.data[o] = pair.input[i];
        s.gt[o] = pair.gt[i] ? 1 : 0;
      }
  return s;
}

std::vector<PatchSample> sample_batch(const std::vector<forge::TrainPair>& pairs, const Dims& dims, int count,
                                      Rng& rng) {
  std::vector<PatchSample> batch;
  for (int b = 0; b < count; ++b) {
    const auto& pair = pairs[static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(pairs.size()) - 1))];
    const Dims& vd = pair.lung.dims();
    const std::size_t n_lung = pair.lung.count();
    std::size_t centre = vd.index(vd.d / 2, vd.h / 2, vd.w / 2);
    if (n_lung > 0) {
      auto pick = static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(n_lung) - 1));
      for (std::size_t i = 0; i < pair.lung.size(); ++i)
        if (pair.lung[i] && pick-- == 0) {
          centre = i;
          break;
        }
    }
    const long hw = static_cast<long>(vd.h) * vd.w;
    batch.push_back(extract_patch(pair, dims, static_cast<long>(centre) / hw,
                                  (static_cast<long>(centre) / vd.w) % vd.h, static_cast<long>(centre) % vd.w));
  }
  return batch;
}

double batch_loss(const TinyNet<float>& net, const std::vector<PatchSample>& batch, const LossWeights& w) {
  double total = 0.0;
  for (const auto& s : batch) {
    const Tensor<float> p = forward(net, s.input);
    total += segmentation_loss<float>(p.data, s.gt, w, {}).total;
  }
  return batch.empty() ? 0.0 : total / static_cast<double>(batch.size());
}

TinyNet<float> train(const std::vector<forge::TrainPair>& pairs, const NetConfig& cfg, std::uint64_t seed,
                     const TrainLogger& log) {
  cfg.validate();
  if (pairs.empty()) throw ConfigError("train: no training pairs");
  TinyNet<float> net = TinyNet<float>::initialized(cfg, derive_seed(seed, {0}));
  Rng rng(derive_seed(seed, {1}));
  const LossWeights w{cfg.dice_weight, cfg.ce_weight};
  const AdamSettings adam{cfg.lr};
  const double inv_batch = 1.0 / cfg.batch_size;
  for (int it = 0; it < cfg.iterations; ++it) {
    const auto batch = sample_batch(pairs, cfg.patch, cfg.batch_size, rng);
    Gradients<float> grads = net.zero_gradients();
    double total = 0.0;
    for (const auto& s : batch) total += backward(net, s.input, s.gt, w, grads, inv_batch).total;
    adam_step(net, grads, adam);
    if (log) log(it, total * inv_batch);
  }
  return net;
}

namespace {

std::vector<long> tile_starts(long r0, long n, long t) {
  if (n <= t) return {r0 - (t - n) / 2};
  const long stride = std::max(1L, t / 2);
  std::vector<long> out;
  for (long s = r0; s + t < r0 + n; s += stride) out.push_back(s);
  out.push_back(r0 + n - t);
  return out;
}

}  // namespace

Volume3 predict_probability(const TinyNet<float>& net, const Volume3& thorax, const Mask3& lung) {
  require_same_dims(thorax.dims(), lung.dims(), "predict_probability");
  const Dims& vd = thorax.dims();
  std::vector<float> prob(vd.size(), 0.0f);
  long lo[3] = {static_cast<long>(vd.d), static_cast<long>(vd.h), static_cast<long>(vd.w)}, hi[3] = {-1, -1, -1};
  for (std::size_t z = 0; z < vd.d; ++z)
    for (std::size_t y = 0; y < vd.h; ++y)
      for (std::size_t x = 0; x < vd.w; ++x)
        if (lung.at(z, y, x)) {
          const long p[3] = {static_cast<long>(z), static_cast<long>(y), static_cast<long>(x)};
          for (int a = 0; a < 3; ++a) lo[a] = std::min(lo[a], p[a]), hi[a] = std::max(hi[a], p[a]);
        }
  if (hi[0] < 0) return Volume3(vd, thorax.spacing(), std::move(prob), true);

  const Dims tile = net.config().inference_tile();
  const auto zs = tile_starts(lo[0], hi[0] - lo[0] + 1, tile.d);
  const auto ys = tile_starts(lo[1], hi[1] - lo[1] + 1, tile.h);
  const auto xs = tile_starts(lo[2], hi[2] - lo[2] + 1, tile.w);
  std::vector<double> sum(vd.size(), 0.0);
  std::vector<std::uint16_t> hits(vd.size(), 0);
  for (long z0 : zs)
    for (long y0 : ys)
      for (long x0 : xs) {
        Tensor<float> in(1, tile);
        std::size_t o = 0;
        for (long z = 0; z < static_cast<long>(tile.d); ++z)
          for (long y = 0; y < static_cast<long>(tile.h); ++y)
            for (long x = 0; x < static_cast<long>(tile.w); ++x, ++o)
              if (vd.contains(z0 + z, y0 + y, x0 + x)) in.data[o] = thorax.at(z0 + z, y0 + y, x0 + x);
        const Tensor<float> out = forward(net, in);
        o = 0;
        for (long z = 0; z < static_cast<long>(tile.d); ++z)
          for (long y = 0; y < static_cast<long>(tile.h); ++y)
            for (long x = 0; x < static_cast<long>(tile.w); ++x, ++o)
              if (vd.contains(z0 + z, y0 + y, x0 + x)) {
                const std::size_t i = vd.index(z0 + z, y0 + y, x0 + x);
                sum[i] += out.data[o];
                ++hits[i];
              }
      }
  for (std::size_t i = 0; i < prob.size(); ++i)
    if (hits[i]) prob[i] = static_cast<float>(sum[i] / hits[i]);
  return Volume3(vd, thorax.spacing(), std::move(prob), true);
}

Mask3 healthy_from_probability(const Volume3& prob, const Mask3& lung, double threshold) {
  require_same_dims(prob.dims(), lung.dims(), "healthy_from_probability");
  Mask3 out(lung.dims());
  for (std::size_t i = 0; i < out.size(); ++i)
    if (lung[i] && static_cast<double>(prob[i]) > threshold) out.set(i);
  return out;
}

Mask3 predict_healthy(const TinyNet<float>& net, const Volume3& thorax, const Mask3& lung, double threshold) {
  return healthy_from_probability(predict_probability(net, thorax, lung), lung, threshold);
}

Mask3 ensemble_vote(const std::vector<Mask3>& masks, int quorum) {
  if (masks.empty()) throw ConfigError("ensemble_vote: no member masks");
  if (quorum < 1 || quorum > static_cast<int>(masks.size()))
    throw ConfigError("ensemble_vote: quorum must lie in [1, member count]");
  const Dims& dims = masks.front().dims();
  std::vector<int> votes(dims.size(), 0);
  for (const auto& m : masks) {
    require_same_dims(dims, m.dims(), "ensemble_vote");
    for (std::size_t i = 0; i < votes.size(); ++i) votes[i] += m[i] ? 1 : 0;
  }
  Mask3 out(dims);
  for (std::size_t i = 0; i < votes.size(); ++i)
    if (votes[i] >= quorum) out.set(i);
  return out;
}

namespace {
constexpr char kModelMagic[4] = {'T', 'N', 'E', 'T'};
constexpr std::uint32_t kModelVersion = 1;
}  // namespace

std::string encode_model(const TinyNet<float>& net) {
  const NetConfig& c = net.config();
  std::string out(kModelMagic, 4);
  put_u32(out, kModelVersion);
  for (std::uint32_t v : {static_cast<std::uint32_t>(c.levels), static_cast<std::uint32_t>(c.base_channels),
                          static_cast<std::uint32_t>(c.convs_per_level), c.patch.d, c.patch.h, c.patch.w, c.tile.d,
                          c.tile.h, c.tile.w, static_cast<std::uint32_t>(c.batch_size),
                          static_cast<std::uint32_t>(c.iterations), static_cast<std::uint32_t>(c.ensemble_size),
                          static_cast<std::uint32_t>(c.vote_quorum)})
    put_u32(out, v);
  for (double v : {c.lr, c.dice_weight, c.ce_weight, c.prob_threshold}) put_f32(out, static_cast<float>(v));
  put_u64(out, static_cast<std::uint64_t>(net.step()));
  put_u32(out, static_cast<std::uint32_t>(net.params().size()));
  for (const auto& p : net.params()) {
    put_u32(out, static_cast<std::uint32_t>(p.value.size()));
    for (float v : p.value) put_f32(out, v);
  }
  for (const auto& p : net.params()) {
    for (float v : p.m) put_f32(out, v);
    for (float v : p.v) put_f32(out, v);
  }
  const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(out.data()), static_cast<uInt>(out.size()));
  put_u32(out, static_cast<std::uint32_t>(crc));
  return out;
}

TinyNet<float> decode_model(std::string_view bytes) {
  if (bytes.size() < 4 || !std::equal(kModelMagic, kModelMagic + 4, bytes.begin()))
    throw ParseError(ParseErrorKind::kBadMagic, "not a TNET model file (bad magic)");
  if (bytes.size() < 8) throw ParseError(ParseErrorKind::kTruncated, "TNET model file truncated");
  const std::string_view body = bytes.substr(0, bytes.size() - 4);
  Reader tail(bytes.substr(bytes.size() - 4));
  const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size()));
  Reader r(body.substr(4));
  if (r.u32() != kModelVersion) throw ParseError(ParseErrorKind::kBadVersion, "unsupported TNET version");
  if (tail.u32() != static_cast<std::uint32_t>(crc)) throw ParseError(ParseErrorKind::kBadChecksum, "TNET checksum mismatch");
  NetConfig c;
  c.levels = static_cast<int>(r.u32());
  c.base_channels = static_cast<int>(r.u32());
  c.convs_per_level = static_cast<int>(r.u32());
  c.patch = Dims{r.u32(), r.u32(), r.u32()};
  c.tile = Dims{r.u32(), r.u32(), r.u32()};
  c.batch_size = static_cast<int>(r.u32());
  c.iterations = static_cast<int>(r.u32());
  c.ensemble_size = static_cast<int>(r.u32());
  c.vote_quorum = static_cast<int>(r.u32());
  c.lr = r.f32();
  c.dice_weight = r.f32();
  c.ce_weight = r.f32();
  c.prob_threshold = r.f32();
  const auto step = static_cast<long>(r.u64());
  TinyNet<float> net;
  try {
    net = TinyNet<float>(c);
  } catch (const ConfigError& e) {
    throw ParseError(ParseErrorKind::kBadDims, std::string("TNET config block invalid: ") + e.what());
  }
  net.set_step(step);
  if (r.u32() != net.params().size()) throw ParseError(ParseErrorKind::kBadDims, "TNET parameter count mismatch");
  for (auto& p : net.params()) {
    if (r.u32() != p.value.size()) throw ParseError(ParseErrorKind::kBadDims, "TNET tensor size mismatch: " + p.name);
    for (auto& v : p.value) v = r.f32();
  }
  for (auto& p : net.params()) {
    for (auto& v : p.m) v = r.f32();
    for (auto& v : p.v) v = r.f32();
  }
  if (r.pos() != body.size() - 4) throw ParseError(ParseErrorKind::kTruncated, "TNET trailing bytes");
  return net;
}

void save_model(const std::filesystem::path& path, const TinyNet<float>& net) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing", path.string());
  const std::string bytes = encode_model(net);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed", path.string());
}

TinyNet<float> load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading", path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_model(bytes);
}

template class TinyNet<float>;
template class TinyNet<double>;
template TinyNet<double> TinyNet<float>::cast<double>() const;
template TinyNet<float> TinyNet<double>::cast<float>() const;
template TinyNet<float> TinyNet<float>::cast<float>() const;
template TinyNet<double> TinyNet<double>::cast<double>() const;
template Tensor<float> to_tensor<float>(const Volume3&);
template Tensor<double> to_tensor<double>(const Volume3&);
template Tensor<float> forward<float>(const TinyNet<float>&, const Tensor<float>&);
template Tensor<double> forward<double>(const TinyNet<double>&, const Tensor<double>&);
template Tensor<float> forward_logits<float>(const TinyNet<float>&, const Tensor<float>&);
template Tensor<double> forward_logits<double>(const TinyNet<double>&, const Tensor<double>&);
template LossValue segmentation_loss<float>(std::span<const float>, std::span<const std::uint8_t>, const LossWeights&,
                                            std::span<float>);
template LossValue segmentation_loss<double>(std::span<const double>, std::span<const std::uint8_t>,
                                             const LossWeights&, std::span<double>);
template LossValue backward<float>(const TinyNet<float>&, const Tensor<float>&, std::span<const std::uint8_t>,
                                   const LossWeights&, Gradients<float>&, double);
template LossValue backward<double>(const TinyNet<double>&, const Tensor<double>&, std::span<const std::uint8_t>,
                                    const LossWeights&, Gradients<double>&, double);
template void adam_step<float>(TinyNet<float>&, const Gradients<float>&, const AdamSettings&);
template void adam_step<double>(TinyNet<double>&, const Gradients<double>&, const AdamSettings&);

}  // namespace normseg::net
