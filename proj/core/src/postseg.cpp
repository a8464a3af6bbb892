#include "normseg/postseg.hpp"

#include "normseg/errors.hpp"

namespace normseg::post {

Variant parse_variant(std::string_view name) {
  if (name == "full") return Variant::kFull;
  if (name == "no_growing") return Variant::kNoGrowing;
  if (name == "g_as_prediction") return Variant::kGAsPrediction;
  throw ConfigError("unknown post-processing variant '" + std::string(name) + "'");
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kFull:
      return "full";
    case Variant::kNoGrowing:
      return "no_growing";
    case Variant::kGAsPrediction:
      return "g_as_prediction";
  }
  return "full";
}

void PostprocessConfig::validate() const {
  if (k_d < 1 || k_d % 2 == 0 || k_f < 1 || k_f % 2 == 0) throw ConfigError("k_d and k_f must be odd and positive");
  if (!(t_d > 0.0 && t_d < 1.0) || !(t_f > 0.0 && t_f < 1.0)) throw ConfigError("t_d and t_f must lie in (0,1)");
  if (dilation_radius < 0 || dilation_iterations < 0) throw ConfigError("dilation radius and iterations must be >= 0");
}

Candidates lesion_candidates(const Volume3& thorax, const Mask3& lung, const Mask3& healthy, double tau) {
  require_same_dims(thorax.dims(), lung.dims(), "lesion_candidates");
  require_same_dims(lung.dims(), healthy.dims(), "lesion_candidates");
  Candidates c{Mask3(lung.dims()), Mask3(lung.dims())};
  for (std::size_t i = 0; i < lung.size(); ++i) {
    if (!lung[i] || healthy[i]) continue;
    c.full.set(i);
    if (static_cast<double>(thorax[i]) >= tau) c.bright.set(i);
  }
  return c;
}

Mask3 smooth_threshold(const Mask3& m, int k, double t, morph::BoxMode mode) {
  const auto counts = morph::box_count(m, k, mode);
  const double cells = mode == morph::BoxMode::kCube3D ? double(k) * k * k : double(k) * k;
  Mask3 out(m.dims());
  for (std::size_t i = 0; i < counts.size(); ++i)
    if (counts[i] / cells > t) out.set(i);
  return out;
}

Mask3 finalize(const Mask3& e, const Mask3& g_full, const PostprocessConfig& cfg) {
  require_same_dims(e.dims(), g_full.dims(), "finalize");
  switch (cfg.variant) {
    case Variant::kNoGrowing:
      return e;
    case Variant::kGAsPrediction:
      return g_full;
    case Variant::kFull:
      break;
  }
  return mask_and(morph::dilate(e, {cfg.dilation_radius}, cfg.dilation_iterations), g_full);
}

Segmentation segment_detailed(const Volume3& thorax, const Mask3& lung, const Mask3& healthy,
                              const PostprocessConfig& cfg) {
  cfg.validate();
  Candidates c = lesion_candidates(thorax, lung, healthy, cfg.tau);
  Segmentation s;
  s.e = smooth_threshold(c.bright, cfg.k_d, cfg.t_d, cfg.box_mode);
  s.g = mask_and(smooth_threshold(c.full, cfg.k_f, cfg.t_f, cfg.box_mode), lung);
  s.final_mask = mask_and(finalize(s.e, s.g, cfg), lung);
  s.d = std::move(c.bright);
  s.f = std::move(c.full);
  return s;
}

Mask3 segment(const Volume3& thorax, const Mask3& lung, const Mask3& healthy, const PostprocessConfig& cfg) {
  return segment_detailed(thorax, lung, healthy, cfg).final_mask;
}

}  // namespace normseg::post
