#include "normseg/lesionforge.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "normseg/errors.hpp"

namespace normseg::forge {

namespace {

void check_range(const Range& r, const char* name) {
  if (!(r.lo <= r.hi)) throw ConfigError(std::string("generator range ") + name + " has lo > hi");
}

void check_probability(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string("generator probability ") + name + " outside [0,1]");
}

// Builds one ellipsoid in a local cube centred on its middle voxel.
Mask3 local_ellipsoid(const EllipsoidDraw& e, bool deform, bool rotate, const morph::Rotation& rotation,
                      std::uint64_t elastic_seed, const GeneratorConfig& cfg) {
  const double reach = std::max({e.a, e.b, e.c});
  const long margin = deform ? static_cast<long>(std::ceil(cfg.elastic_magnitude)) + 1 : 1;
  const long r = static_cast<long>(std::ceil(reach)) + margin;
  const auto n = static_cast<std::uint32_t>(2 * r + 1);
  const Dims local{n, n, n};
  Mask3 m = morph::voxelize_ellipsoid(morph::Vec3(e.a, e.b, e.c), morph::Rotation::Identity(),
                                      morph::Vec3(r, r, r), local);
  if (deform) m = morph::elastic_deform(m, cfg.elastic_grid_spacing, cfg.elastic_magnitude, elastic_seed);
  if (rotate) m = morph::rotate_mask(m, rotation);
  return m;
}

void paste(const Mask3& local, std::size_t centre, Mask3& into) {
  const Dims& dims = into.dims();
  const long cz = static_cast<long>(centre / (static_cast<std::size_t>(dims.h) * dims.w));
  const long cy = static_cast<long>((centre / dims.w) % dims.h);
  const long cx = static_cast<long>(centre % dims.w);
  const long r = static_cast<long>(local.dims().d / 2);
  for (long z = 0; z < static_cast<long>(local.dims().d); ++z)
    for (long y = 0; y < static_cast<long>(local.dims().h); ++y)
      for (long x = 0; x < static_cast<long>(local.dims().w); ++x) {
        if (!local.at(z, y, x)) continue;
        const long gz = cz + z - r, gy = cy + y - r, gx = cx + x - r;
        if (dims.contains(gz, gy, gx)) into.set(gz, gy, gx);
      }
}

Box bounding_box(const morph::Component& comp, const Dims& dims) {
  std::size_t z0 = dims.d, y0 = dims.h, x0 = dims.w, z1 = 0, y1 = 0, x1 = 0;
  const std::size_t hw = static_cast<std::size_t>(dims.h) * dims.w;
  for (std::size_t i : comp) {
    const std::size_t z = i / hw, y = (i / dims.w) % dims.h, x = i % dims.w;
    z0 = std::min(z0, z), y0 = std::min(y0, y), x0 = std::min(x0, x);
    z1 = std::max(z1, z), y1 = std::max(y1, y), x1 = std::max(x1, x);
  }
  return Box{z0, y0, x0,
             Dims{static_cast<std::uint32_t>(z1 - z0 + 1), static_cast<std::uint32_t>(y1 - y0 + 1),
                  static_cast<std::uint32_t>(x1 - x0 + 1)}};
}

Mask3 local_blob_mask(const Blob& blob, const Dims& dims) {
  Mask3 inside(blob.bbox.dims);
  const std::size_t hw = static_cast<std::size_t>(dims.h) * dims.w;
  for (std::size_t i : blob.voxels) {
    const std::size_t z = i / hw, y = (i / dims.w) % dims.h, x = i % dims.w;
    inside.set(z - blob.bbox.z0, y - blob.bbox.y0, x - blob.bbox.x0);
  }
  return inside;
}

}  // namespace

void GeneratorConfig::validate() const {
  if (!(ref_mask_volume > 0.0)) throw ConfigError("generator ref_mask_volume must be > 0");
  check_range(small_count, "small_count");
  check_range(medium_count, "medium_count");
  check_range(small_axes, "small_axes");
  check_range(medium_axes, "medium_axes");
  check_range(large_axes, "large_axes");
  check_range(sigma_a, "sigma_a");
  check_range(sigma_b.narrow, "sigma_b.narrow");
  check_range(sigma_b.wide, "sigma_b.wide");
  check_range(a_bound, "a_bound");
  check_range(mu0, "mu0");
  check_probability(p_large_base, "p_large_base");
  check_probability(sigma_b.p_narrow, "sigma_b.p_narrow");
  if (small_axes.lo <= 0 || medium_axes.lo <= 0 || large_axes.lo <= 0)
    throw ConfigError("ellipsoid semi-axes must be positive");
  if (sigma_a.lo <= 0 || sigma_b.narrow.lo <= 0 || sigma_b.wide.lo <= 0)
    throw ConfigError("filter widths must be positive");
  if (!(a_min_gap >= 0.0 && a_min_gap < a_bound.hi - a_bound.lo))
    throw ConfigError("a_min_gap must be smaller than the width of a_bound");
  if (elastic_grid_spacing < 2 || elastic_magnitude < 0) throw ConfigError("invalid elastic parameters");
  if (fixed_a && !(*fixed_a >= 0.0 && *fixed_a <= 1.0)) throw ConfigError("fixed_a must lie in [0,1]");
  if (fixed_shape_count < 0 || fixed_shape_radius <= 0) throw ConfigError("invalid fixed shape parameters");
  if (fixed_sigma_b <= 0 || fixed_mu0 <= 0) throw ConfigError("invalid fixed texture parameters");
}

GtMode parse_gt_mode(const std::string& name) {
  if (name == "tissues") return GtMode::kTissues;
  if (name == "regions") return GtMode::kRegions;
  if (name == "lesions") return GtMode::kLesions;
  throw ConfigError("unknown gt_mode '" + name + "' (expected tissues|regions|lesions)");
}

std::string to_string(GtMode mode) {
  switch (mode) {
    case GtMode::kTissues: return "tissues";
    case GtMode::kRegions: return "regions";
    case GtMode::kLesions: return "lesions";
  }
  return "tissues";
}

double lambda_factor(const Mask3& lung, const GeneratorConfig& cfg) {
  if (!(cfg.ref_mask_volume > 0.0)) throw ConfigError("ref_mask_volume must be > 0");
  return static_cast<double>(lung.count()) / cfg.ref_mask_volume;
}

int sample_count(const Range& per_lambda, double lambda, Rng& rng) {
  const long lo = static_cast<long>(std::ceil(per_lambda.lo * lambda));
  const long hi = static_cast<long>(std::floor(per_lambda.hi * lambda));
  if (hi < lo) return 0;
  return static_cast<int>(rng.uniform_int(lo, hi));
}

double sample_sigma_a(const GeneratorConfig& cfg, Rng& rng) { return rng.uniform(cfg.sigma_a.lo, cfg.sigma_a.hi); }

double sample_sigma_b(const GeneratorConfig& cfg, Rng& rng) {
  const bool narrow = rng.bernoulli(cfg.sigma_b.p_narrow);
  const Range& r = narrow ? cfg.sigma_b.narrow : cfg.sigma_b.wide;
  return rng.uniform(r.lo, r.hi);
}

double sample_mu0(const GeneratorConfig& cfg, Rng& rng) { return rng.uniform(cfg.mu0.lo, cfg.mu0.hi); }

std::pair<double, double> sample_a_bounds(const GeneratorConfig& cfg, Rng& rng) {
  for (;;) {
    // Rounded to float so the stored field attains the bounds exactly.
    const double lo = static_cast<float>(rng.uniform(cfg.a_bound.lo, cfg.a_bound.hi));
    const double hi = static_cast<float>(rng.uniform(cfg.a_bound.lo, cfg.a_bound.hi));
    if (hi - lo > cfg.a_min_gap) return {lo, hi};
  }
}

ShapeSample sample_shapes(const Mask3& lung, const GeneratorConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  ShapeSample out;
  out.lambda = lambda_factor(lung, cfg);
  Mask3 shape(lung.dims());

  std::vector<std::size_t> lung_voxels;
  for (std::size_t i = 0; i < lung.size(); ++i)
    if (lung[i]) lung_voxels.push_back(i);
  if (lung_voxels.empty()) {
    out.shape = std::move(shape);
    return out;
  }
  const auto pick_centre = [&] {
    return lung_voxels[static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(lung_voxels.size()) - 1))];
  };
  const auto draw_axes = [&](const Range& r, const char* cls) {
    EllipsoidDraw e;
    e.size_class = cls;
    e.a = rng.uniform(r.lo, r.hi);
    e.b = rng.uniform(r.lo, r.hi);
    e.c = rng.uniform(r.lo, r.hi);
    return e;
  };

  if (cfg.fixed_shapes) {
    for (int i = 0; i < cfg.fixed_shape_count; ++i) {
      EllipsoidDraw e{"fixed", cfg.fixed_shape_radius, cfg.fixed_shape_radius, cfg.fixed_shape_radius, pick_centre()};
      paste(local_ellipsoid(e, false, false, morph::Rotation::Identity(), 0, cfg), e.centre, shape);
      out.ellipsoids.push_back(e);
    }
  } else {
    out.n_small = sample_count(cfg.small_count, out.lambda, rng);
    out.n_medium = sample_count(cfg.medium_count, out.lambda, rng);
    out.large = rng.bernoulli(std::min(1.0, cfg.p_large_base * out.lambda));
    std::vector<EllipsoidDraw> draws;
    for (int i = 0; i < out.n_small; ++i) draws.push_back(draw_axes(cfg.small_axes, "small"));
    for (int i = 0; i < out.n_medium; ++i) draws.push_back(draw_axes(cfg.medium_axes, "medium"));
    if (out.large) draws.push_back(draw_axes(cfg.large_axes, "large"));
    for (auto& e : draws) {
      const std::uint64_t elastic_seed = rng.bits();
      const morph::Rotation rot = morph::random_rotation(rng);
      e.centre = pick_centre();
      paste(local_ellipsoid(e, cfg.deform_enabled, cfg.rotate_enabled, rot, elastic_seed, cfg), e.centre, shape);
      out.ellipsoids.push_back(e);
    }
  }

  out.shape = mask_and(shape, lung);
  for (auto& comp : morph::connected_components(out.shape, morph::Connectivity::k26)) {
    Blob blob;
    blob.bbox = bounding_box(comp, lung.dims());
    blob.voxels = std::move(comp);
    out.blobs.push_back(std::move(blob));
  }
  return out;
}

ProbabilityField sample_probability_field(const Dims& bbox, const GeneratorConfig& cfg, Rng& rng) {
  if (bbox.size() == 0) throw ParameterError("probability field needs a non-empty box");
  ProbabilityField out;
  if (cfg.fixed_a) {
    out.a_lo = out.a_hi = *cfg.fixed_a;
    out.a = Volume3::filled(bbox, static_cast<float>(*cfg.fixed_a));
    return out;
  }
  out.sigma_a = sample_sigma_a(cfg, rng);
  std::tie(out.a_lo, out.a_hi) = sample_a_bounds(cfg, rng);
  std::vector<float> a1(bbox.size());
  for (float& v : a1) v = static_cast<float>(rng.uniform());
  const Volume3 a2 = morph::gaussian_filter(Volume3(bbox, Spacing{}, std::move(a1), true), out.sigma_a);
  const auto [mn, mx] = std::minmax_element(a2.values().begin(), a2.values().end());
  const double lo = *mn, hi = *mx;
  std::vector<float> a(bbox.size());
  if (hi == lo) {
    std::fill(a.begin(), a.end(), static_cast<float>((out.a_lo + out.a_hi) / 2.0));
  } else {
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double v = a2[i];
      if (v == hi)
        a[i] = static_cast<float>(out.a_hi);
      else
        a[i] = static_cast<float>((out.a_hi - out.a_lo) * (v - lo) / (hi - lo) + out.a_lo);
    }
  }
  out.a = Volume3(bbox, Spacing{}, std::move(a), true);
  return out;
}

std::optional<double> texture_scale(const Volume3& b2, double mu0, double threshold) {
  double sum = 0.0;
  std::size_t n = 0;
  for (float v : b2.values())
    if (v > threshold) {
      sum += v;
      ++n;
    }
  if (n == 0) return std::nullopt;
  return mu0 / (sum / static_cast<double>(n));
}

Volume3 scale_and_clip(const Volume3& b2, double beta, const Mask3& inside) {
  require_same_dims(b2.dims(), inside.dims(), "scale_and_clip");
  std::vector<float> out(b2.values().size(), 0.0f);
  for (std::size_t i = 0; i < out.size(); ++i)
    if (inside[i]) out[i] = static_cast<float>(std::clamp(beta * b2[i], 0.0, 1.0));
  return Volume3(b2.dims(), b2.spacing(), std::move(out), true);
}

std::optional<Volume3> texture_from_field(const Volume3& a, const Mask3& inside, double sigma_b, double mu0,
                                          double threshold, Rng& rng, double* beta_out) {
  require_same_dims(a.dims(), inside.dims(), "texture_from_field");
  std::vector<float> b1(a.values().size());
  for (std::size_t i = 0; i < b1.size(); ++i) b1[i] = rng.bernoulli(a[i]) ? 1.0f : 0.0f;
  const Volume3 b2 = morph::gaussian_filter(Volume3(a.dims(), Spacing{}, std::move(b1), true), sigma_b);
  const auto beta = texture_scale(b2, mu0, threshold);
  if (!beta) return std::nullopt;
  if (beta_out) *beta_out = *beta;
  return scale_and_clip(b2, *beta, inside);
}

TexturePatch sample_texture(const Blob& blob, const Dims& volume_dims, const GeneratorConfig& cfg, Rng& rng) {
  if (blob.voxels.empty()) throw ParameterError("sample_texture needs a non-empty blob");
  constexpr int kMaxResamples = 8;
  TexturePatch patch;
  patch.bbox = blob.bbox;
  const Mask3 inside = local_blob_mask(blob, volume_dims);
  for (int attempt = 0; attempt <= kMaxResamples; ++attempt) {
    const ProbabilityField field = sample_probability_field(blob.bbox.dims, cfg, rng);
    TextureDraw draw{field.sigma_a, field.a_lo, field.a_hi, 0.0, 0.0, 0.0, attempt, false};
    draw.sigma_b = cfg.fixed_texture ? cfg.fixed_sigma_b : sample_sigma_b(cfg, rng);
    draw.mu0 = cfg.fixed_texture ? cfg.fixed_mu0 : sample_mu0(cfg, rng);
    double beta = 0.0;
    if (auto values = texture_from_field(field.a, inside, draw.sigma_b, draw.mu0, cfg.mean_threshold, rng, &beta)) {
      draw.beta = beta;
      patch.values = std::move(*values);
      patch.draw = draw;
      return patch;
    }
    patch.draw = draw;
  }
  std::clog << "warning: texture for a " << blob.voxels.size() << "-voxel blob never exceeded the mean threshold;"
            << " emitting a zero patch\n";
  patch.values = Volume3::filled(blob.bbox.dims, 0.0f);
  patch.draw.zero_patch = true;
  return patch;
}

Volume3 composite(const Volume3& thorax, const std::vector<TexturePatch>& patches) {
  std::vector<float> out(thorax.values().begin(), thorax.values().end());
  const Dims& dims = thorax.dims();
  for (const auto& p : patches) {
    const Box& b = p.bbox;
    if (b.z0 + b.dims.d > dims.d || b.y0 + b.dims.h > dims.h || b.x0 + b.dims.w > dims.w)
      throw ShapeError("composite: patch box extends beyond the thorax volume");
    require_same_dims(p.values.dims(), b.dims, "composite");
    for (std::size_t z = 0; z < b.dims.d; ++z)
      for (std::size_t y = 0; y < b.dims.h; ++y)
        for (std::size_t x = 0; x < b.dims.w; ++x) {
          float& dst = out[dims.index(b.z0 + z, b.y0 + y, b.x0 + x)];
          dst = std::max(dst, p.values.at(z, y, x));
        }
  }
  return Volume3(dims, thorax.spacing(), std::move(out), thorax.windowed());
}

Mask3 make_ground_truth(const Volume3& thorax, const Mask3& lung, const Mask3& shape, double tau, GtMode mode) {
  require_same_dims(thorax.dims(), lung.dims(), "make_ground_truth");
  require_same_dims(thorax.dims(), shape.dims(), "make_ground_truth");
  if (!(tau >= 0.0 && tau <= 1.0)) throw ParameterError("tau must lie in [0,1]");
  std::vector<std::uint8_t> gt(lung.size());
  for (std::size_t i = 0; i < gt.size(); ++i) {
    bool v = false;
    switch (mode) {
      case GtMode::kTissues: v = thorax[i] >= tau && !shape[i] && lung[i]; break;
      case GtMode::kRegions: v = lung[i] && !shape[i]; break;
      case GtMode::kLesions: v = lung[i] && shape[i]; break;
    }
    gt[i] = v ? 1 : 0;
  }
  return Mask3(lung.dims(), std::move(gt));
}

TrainPair generate_pair(const lung::ThoraxCase& thorax_case, const GeneratorConfig& cfg, double tau, GtMode mode,
                        std::uint64_t seed) {
  cfg.validate();
  const Mask3& lung = thorax_case.clean_lung_mask;
  TrainPair pair;
  pair.seed = seed;
  pair.shapes = sample_shapes(lung, cfg, derive_seed(seed, {1}));
  std::vector<TexturePatch> patches;
  for (std::size_t j = 0; j < pair.shapes.blobs.size(); ++j) {
    Rng rng(derive_seed(seed, {2, j}));
    patches.push_back(sample_texture(pair.shapes.blobs[j], lung.dims(), cfg, rng));
    pair.textures.push_back(patches.back().draw);
  }
  pair.input = composite(thorax_case.thorax, patches);
  pair.gt = make_ground_truth(thorax_case.thorax, lung, pair.shapes.shape, tau, mode);
  pair.lung = lung;
  pair.lesion_shape = pair.shapes.shape;
  return pair;
}

std::string describe(const TrainPair& pair, const std::string& case_id) {
  std::ostringstream os;
  os << std::setprecision(9);
  const ShapeSample& s = pair.shapes;
  os << "case_id = " << case_id << "\n";
  os << "seed = " << pair.seed << "\n";
  os << "lambda = " << s.lambda << "\n";
  os << "n_small = " << s.n_small << "\n";
  os << "n_medium = " << s.n_medium << "\n";
  os << "large = " << (s.large ? 1 : 0) << "\n";
  os << "n_ellipsoids = " << s.ellipsoids.size() << "\n";
  for (std::size_t i = 0; i < s.ellipsoids.size(); ++i) {
    const auto& e = s.ellipsoids[i];
    os << "ellipsoid." << i << ".class = " << e.size_class << "\n";
    os << "ellipsoid." << i << ".axes = " << e.a << " " << e.b << " " << e.c << "\n";
    os << "ellipsoid." << i << ".centre = " << e.centre << "\n";
  }
  os << "n_blobs = " << s.blobs.size() << "\n";
  os << "lesion_voxels = " << s.shape.count() << "\n";
  for (std::size_t j = 0; j < pair.textures.size(); ++j) {
    const auto& t = pair.textures[j];
    os << "blob." << j << ".voxels = " << s.blobs[j].voxels.size() << "\n";
    os << "blob." << j << ".sigma_a = " << t.sigma_a << "\n";
    os << "blob." << j << ".a_lo = " << t.a_lo << "\n";
    os << "blob." << j << ".a_hi = " << t.a_hi << "\n";
    os << "blob." << j << ".sigma_b = " << t.sigma_b << "\n";
    os << "blob." << j << ".mu0 = " << t.mu0 << "\n";
    os << "blob." << j << ".beta = " << t.beta << "\n";
    os << "blob." << j << ".resamples = " << t.resamples << "\n";
    os << "blob." << j << ".zero_patch = " << (t.zero_patch ? 1 : 0) << "\n";
  }
  return os.str();
}

}  // namespace normseg::forge
