#pragma once

// Converts a voted healthy mask into the final lesion prediction: candidates
// not recognized as healthy are smoothed, thresholded, and the bright core is
// grown inside the full-voxel candidate region.

#include <string>
#include <string_view>

#include "normseg/morphkit.hpp"
#include "normseg/vol3.hpp"

namespace normseg::post {

enum class Variant { kFull, kNoGrowing, kGAsPrediction };

Variant parse_variant(std::string_view name);
std::string to_string(Variant v);

struct PostprocessConfig {
  double tau = 0.33;
  int k_d = 9;
  int k_f = 7;
  double t_d = 0.2;
  double t_f = 0.15;
  int dilation_radius = 1;
  int dilation_iterations = 3;
  Variant variant = Variant::kFull;
  morph::BoxMode box_mode = morph::BoxMode::kCube3D;

  /// Throws ConfigError on even kernels, thresholds outside (0,1) or negative iterations.
  void validate() const;
};

struct Candidates {
  Mask3 bright;  // D: bright lung voxels not predicted healthy
  Mask3 full;    // F: all lung voxels not predicted healthy
};

Candidates lesion_candidates(const Volume3& thorax, const Mask3& lung, const Mask3& healthy, double tau);

/// Box-average of the 0/1 field, kept where the average is strictly above t.
Mask3 smooth_threshold(const Mask3& m, int k, double t, morph::BoxMode mode = morph::BoxMode::kCube3D);

Mask3 finalize(const Mask3& e, const Mask3& g_full, const PostprocessConfig& cfg);

struct Segmentation {
  Mask3 d;
  Mask3 e;
  Mask3 f;
  Mask3 g;
  Mask3 final_mask;
};

Segmentation segment_detailed(const Volume3& thorax, const Mask3& lung, const Mask3& healthy,
                              const PostprocessConfig& cfg);
Mask3 segment(const Volume3& thorax, const Mask3& lung, const Mask3& healthy, const PostprocessConfig& cfg);

}  // namespace normseg::post
