#pragma once

// Synthetic `lesion` generator: lesion-like shapes from deformed, rotated
// ellipsoids; lesion-like textures from filtered and rescaled salt noise
// with a spatially varying density; max-compositing into the thorax; and
// ground-truth construction for the segmentation network.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "normseg/lunglab.hpp"
#include "normseg/morphkit.hpp"
#include "normseg/rng.hpp"
#include "normseg/vol3.hpp"

namespace normseg::forge {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

/// Mixture law for the salt-noise filter width.
struct SigmaBLaw {
  Range narrow{0.8, 2.0};
  Range wide{2.0, 5.0};
  double p_narrow = 0.7;
};

struct GeneratorConfig {
  double ref_mask_volume = 1.0;  // |M_max| in voxels
  Range small_count{5.0, 10.0};  // multiplied by lambda before rounding
  Range medium_count{5.0, 10.0};
  Range small_axes{3.0, 10.0};
  Range medium_axes{10.0, 32.0};
  Range large_axes{32.0, 64.0};
  double p_large_base = 0.2;  // P_L = p_large_base * lambda
  Range sigma_a{3.0, 15.0};
  SigmaBLaw sigma_b{};
  Range a_bound{0.0, 0.3};  // shared by a_L and a_U
  double a_min_gap = 0.15;
  Range mu0{0.4, 0.8};
  double mean_threshold = 0.2;
  int elastic_grid_spacing = 8;
  double elastic_magnitude = 3.0;
  bool deform_enabled = true;
  bool rotate_enabled = true;

  // Ablation switches.
  bool fixed_shapes = false;
  int fixed_shape_count = 5;
  double fixed_shape_radius = 12.0;
  std::optional<double> fixed_a;  // constant probability field
  bool fixed_texture = false;
  double fixed_sigma_b = 2.0;
  double fixed_mu0 = 0.6;

  /// Throws ConfigError on inverted ranges, out-of-range probabilities or an unsatisfiable gap.
  void validate() const;
};

enum class GtMode { kTissues, kRegions, kLesions };
GtMode parse_gt_mode(const std::string& name);
std::string to_string(GtMode mode);

/// Axis-aligned box [z0, z0+dims.d) x [y0, ...) x [x0, ...).
struct Box {
  std::size_t z0 = 0, y0 = 0, x0 = 0;
  Dims dims{};
};

/// One connected lesion shape G_j, in absolute voxel indices.
struct Blob {
  morph::Component voxels;
  Box bbox;
};

struct EllipsoidDraw {
  std::string size_class;  // small | medium | large | fixed
  double a = 0, b = 0, c = 0;
  std::size_t centre = 0;  // linear index of the centre voxel
};

struct ShapeSample {
  double lambda = 0.0;
  int n_small = 0;
  int n_medium = 0;
  bool large = false;
  std::vector<EllipsoidDraw> ellipsoids;
  Mask3 shape;  // union of all blobs, clipped to the lung
  std::vector<Blob> blobs;
};

struct ProbabilityField {
  Volume3 a;  // over the bounding box
  double sigma_a = 0.0;
  double a_lo = 0.0;
  double a_hi = 0.0;
};

struct TextureDraw {
  double sigma_a = 0.0, a_lo = 0.0, a_hi = 0.0;
  double sigma_b = 0.0, mu0 = 0.0, beta = 0.0;
  int resamples = 0;
  bool zero_patch = false;
};

struct TexturePatch {
  Box bbox;
  Volume3 values;  // B_j over the bounding box, zero outside the blob
  TextureDraw draw;
};

// Individual sampling laws.
double lambda_factor(const Mask3& lung, const GeneratorConfig& cfg);
/// F[ceil(lo*lambda) .. floor(hi*lambda)], 0 when that range is empty.
int sample_count(const Range& per_lambda, double lambda, Rng& rng);
double sample_sigma_a(const GeneratorConfig& cfg, Rng& rng);
double sample_sigma_b(const GeneratorConfig& cfg, Rng& rng);
double sample_mu0(const GeneratorConfig& cfg, Rng& rng);
/// Rejection-sampled (a_L, a_U) with a_U - a_L > min_gap.
std::pair<double, double> sample_a_bounds(const GeneratorConfig& cfg, Rng& rng);

ShapeSample sample_shapes(const Mask3& lung, const GeneratorConfig& cfg, std::uint64_t seed);

ProbabilityField sample_probability_field(const Dims& bbox, const GeneratorConfig& cfg, Rng& rng);

/// beta = mu0 / mean of the values strictly above `threshold`; nullopt when none exceed it.
std::optional<double> texture_scale(const Volume3& b2, double mu0, double threshold);
/// clip_[0,1](beta * b2), zeroed where `inside` is unset.
Volume3 scale_and_clip(const Volume3& b2, double beta, const Mask3& inside);

/// Salt noise with density a(x), Gaussian filtered and rescaled; nullopt when nothing exceeds the threshold.
std::optional<Volume3> texture_from_field(const Volume3& a, const Mask3& inside, double sigma_b, double mu0,
                                          double threshold, Rng& rng, double* beta_out = nullptr);

TexturePatch sample_texture(const Blob& blob, const Dims& volume_dims, const GeneratorConfig& cfg, Rng& rng);

/// A = max(H, B_1, B_2, ...).
Volume3 composite(const Volume3& thorax, const std::vector<TexturePatch>& patches);

/// tissues: (H >= tau) & !G & M;  regions: M & !G;  lesions: M & G.
Mask3 make_ground_truth(const Volume3& thorax, const Mask3& lung, const Mask3& shape, double tau, GtMode mode);

struct TrainPair {
  Volume3 input;        // A
  Mask3 gt;             // GT
  Mask3 lung;           // M
  Mask3 lesion_shape;   // G
  std::uint64_t seed = 0;
  ShapeSample shapes;   // sampled shape hyperparameters (blob voxel lists included)
  std::vector<TextureDraw> textures;
};

TrainPair generate_pair(const lung::ThoraxCase& thorax_case, const GeneratorConfig& cfg, double tau, GtMode mode,
                        std::uint64_t seed);

/// Line-delimited `key = value` record of the sampled hyperparameters.
std::string describe(const TrainPair& pair, const std::string& case_id);

}  // namespace normseg::forge
