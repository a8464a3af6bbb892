#include "normseg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include <Eigen/Geometry>

#include "normseg/morphkit.hpp"
#include "normseg/rng.hpp"

namespace normseg::phantom {

namespace {

using morph::Vec3;

struct Tube {
  Vec3 a;
  Vec3 b;
  double radius;
};

double segment_distance(const Vec3& p, const Tube& t) {
  const Vec3 ab = t.b - t.a;
  const double len2 = ab.squaredNorm();
  const double s = len2 > 0 ? std::clamp((p - t.a).dot(ab) / len2, 0.0, 1.0) : 0.0;
  return (p - (t.a + s * ab)).norm();
}

Vec3 perpendicular(const Vec3& d, Rng& rng) {
  Vec3 r(rng.normal(), rng.normal(), rng.normal());
  Vec3 p = r - r.dot(d) * d;
  if (p.norm() < 1e-9) p = d.unitOrthogonal();
  return p.normalized();
}

Vec3 bend(const Vec3& dir, double angle, Rng& rng) {
  const Vec3 axis = perpendicular(dir, rng);
  return (Eigen::AngleAxisd(angle, axis) * dir).normalized();
}

bool inside(const Mask3& m, const Vec3& p) {
  const long x = std::lround(p.x()), y = std::lround(p.y()), z = std::lround(p.z());
  return m.dims().contains(z, y, x) && m.at(z, y, x);
}

void grow(const Mask3& lung, Vec3 start, Vec3 dir, double radius, int generation, const PhantomConfig& cfg,
          Rng& rng, std::vector<Tube>& out) {
  if (radius < cfg.min_radius || generation > cfg.max_generations) return;
  const double length = rng.uniform(4.0, 9.0) * std::sqrt(radius / cfg.root_radius) + 2.0;
  const Vec3 end = start + length * dir;
  if (!inside(lung, end)) return;
  out.push_back({start, end, radius});
  const int children = rng.bernoulli(0.8) ? 2 : 1;
  for (int c = 0; c < children; ++c) {
    const double angle = rng.uniform(0.35, 0.8) * (children == 1 ? 0.5 : 1.0);
    const double taper = children == 1 ? rng.uniform(0.85, 0.95) : rng.uniform(0.7, 0.85);
    grow(lung, end, bend(dir, angle, rng), radius * taper, generation + 1, cfg, rng, out);
  }
}

// Rasterizes a partial-volume coverage fraction in [0,1] per voxel (max over tubes).
void render_tubes(const std::vector<Tube>& tubes, const Dims& dims, std::vector<float>& cover,
                  double (*profile)(double dist, double radius)) {
  for (const Tube& t : tubes) {
    const double reach = t.radius + 2.5;
    const Vec3 lo = t.a.cwiseMin(t.b).array() - reach;
    const Vec3 hi = t.a.cwiseMax(t.b).array() + reach;
    for (long z = std::max(0L, std::lround(lo.z())); z <= std::min<long>(dims.d - 1, std::lround(hi.z())); ++z)
      for (long y = std::max(0L, std::lround(lo.y())); y <= std::min<long>(dims.h - 1, std::lround(hi.y())); ++y)
        for (long x = std::max(0L, std::lround(lo.x())); x <= std::min<long>(dims.w - 1, std::lround(hi.x())); ++x) {
          const double f = profile(segment_distance(Vec3(x, y, z), t), t.radius);
          float& c = cover[dims.index(z, y, x)];
          c = std::max(c, static_cast<float>(f));
        }
  }
}

double solid_profile(double dist, double radius) { return std::clamp(radius + 0.5 - dist, 0.0, 1.0); }

double wall_profile(double dist, double radius) {
  // Lumen of `radius`, one-voxel wall around it.
  return std::clamp(1.0 - std::abs(dist - (radius + 0.5)) / 0.9, 0.0, 1.0);
}

double lumen_profile(double dist, double radius) { return std::clamp(radius - dist, 0.0, 1.0); }

}  // namespace

HealthyCase make_healthy_case(const PhantomConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  const Dims dims = cfg.dims;
  const double W = dims.w, H = dims.h, D = dims.d;

  // Two lungs, jittered ellipsoids with a mild elastic wobble.
  Mask3 lung(dims);
  std::vector<Vec3> centres, axes;
  for (int side = 0; side < 2; ++side) {
    const double j = 0.06;
    const Vec3 centre((side == 0 ? 0.29 : 0.71) * W * rng.uniform(1 - j / 2, 1 + j / 2),
                      0.5 * H * rng.uniform(1 - j, 1 + j), 0.5 * D * rng.uniform(1 - j / 2, 1 + j / 2));
    const Vec3 semi(0.17 * W * rng.uniform(1 - j, 1 + j), 0.30 * H * rng.uniform(1 - j, 1 + j),
                    0.42 * D * rng.uniform(1 - j, 1 + j));
    const Mask3 one = morph::voxelize_ellipsoid(semi, morph::Rotation::Identity(), centre, dims);
    lung = mask_or(lung, one);
    centres.push_back(centre);
    axes.push_back(semi);
  }
  lung = morph::elastic_deform(lung, 16, 2.0, rng.bits());

  // Vessel and airway trees rooted at each hilum, pointing laterally.
  std::vector<Tube> vessels, airways;
  for (int side = 0; side < 2; ++side) {
    const double medial = side == 0 ? 1.0 : -1.0;
    const Vec3 hilum = centres[side] + Vec3(medial * 0.55 * axes[side].x(), 0.0, 0.0);
    for (int r = 0; r < cfg.vessel_roots; ++r) {
      Vec3 start = hilum + Vec3(0.0, rng.uniform(-0.3, 0.3) * axes[side].y(), rng.uniform(-0.35, 0.35) * axes[side].z());
      if (!inside(lung, start)) continue;
      Vec3 dir = Vec3(-medial, rng.uniform(-0.8, 0.8), rng.uniform(-1.2, 1.2)).normalized();
      grow(lung, start, dir, cfg.root_radius * rng.uniform(0.85, 1.1), 0, cfg, rng, vessels);
    }
    for (int r = 0; r < cfg.airway_roots; ++r) {
      Vec3 start = hilum + Vec3(-medial * 2.0, rng.uniform(-0.2, 0.2) * axes[side].y(), rng.uniform(-0.2, 0.2) * axes[side].z());
      if (!inside(lung, start)) continue;
      Vec3 dir = Vec3(-medial, rng.uniform(-0.6, 0.6), rng.uniform(-1.0, 1.0)).normalized();
      PhantomConfig airway_cfg = cfg;
      airway_cfg.max_generations = 2;
      airway_cfg.min_radius = 0.9;
      grow(lung, start, dir, 1.8, 0, airway_cfg, rng, airways);
    }
  }
  std::vector<float> vessel_cover(dims.size(), 0.0f), wall_cover(dims.size(), 0.0f), lumen_cover(dims.size(), 0.0f);
  render_tubes(vessels, dims, vessel_cover, solid_profile);
  render_tubes(airways, dims, wall_cover, wall_profile);
  render_tubes(airways, dims, lumen_cover, lumen_profile);

  // Intensities.
  const double parenchyma = rng.uniform(cfg.parenchyma_hu_lo, cfg.parenchyma_hu_hi);
  const double gradient = rng.uniform(20.0, 60.0);  // dependent (posterior) density increase
  std::vector<float> hu(dims.size());
  for (std::size_t z = 0; z < dims.d; ++z)
    for (std::size_t y = 0; y < dims.h; ++y)
      for (std::size_t x = 0; x < dims.w; ++x) {
        const std::size_t i = dims.index(z, y, x);
        const double ex = (x - W / 2.0) / (0.47 * W), ey = (y - H / 2.0) / (0.42 * H);
        double v;
        if (lung[i]) {
          v = parenchyma + gradient * (y / H) + rng.normal(0.0, cfg.noise_hu);
          v += lumen_cover[i] * (cfg.air_hu - v);
          v += wall_cover[i] * (cfg.airway_wall_hu - v);
          v += vessel_cover[i] * (cfg.vessel_hu + rng.normal(0.0, cfg.noise_hu) - v);
        } else if (ex * ex + ey * ey <= 1.0) {
          v = cfg.soft_tissue_hu + rng.normal(0.0, cfg.noise_hu);
        } else {
          v = cfg.air_hu + rng.normal(0.0, cfg.noise_hu);
        }
        hu[i] = static_cast<float>(v);
      }

  // Segmenter errors: thin patches of chest wall glued to the lung boundary.
  Mask3 segmented = lung;
  const Mask3 ring = mask_minus(morph::dilate(lung, morph::StructElem{1}, 1), lung);
  std::vector<std::size_t> ring_voxels;
  for (std::size_t i = 0; i < ring.size(); ++i)
    if (ring[i]) ring_voxels.push_back(i);
  if (!ring_voxels.empty()) {
    for (int p = 0; p < cfg.fringe_patches; ++p) {
      const std::size_t c = ring_voxels[static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(ring_voxels.size()) - 1))];
      const double cz = static_cast<double>(c / (dims.h * dims.w)), cy = static_cast<double>((c / dims.w) % dims.h),
                   cx = static_cast<double>(c % dims.w);
      for (std::size_t i : ring_voxels) {
        const double z = static_cast<double>(i / (dims.h * dims.w)), y = static_cast<double>((i / dims.w) % dims.h),
                     x = static_cast<double>(i % dims.w);
        const double d2 = (z - cz) * (z - cz) + (y - cy) * (y - cy) + (x - cx) * (x - cx);
        if (d2 <= cfg.fringe_radius * cfg.fringe_radius) segmented.set(i);
      }
    }
  }

  return HealthyCase{Volume3(dims, cfg.spacing, std::move(hu), false), std::move(lung), std::move(segmented)};
}

}  // namespace normseg::phantom
