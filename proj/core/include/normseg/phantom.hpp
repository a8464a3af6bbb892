#pragma once

// Procedural healthy chest CT phantoms: two lungs with a branching vessel
// tree and a few airways inside a soft-tissue body. Stands in for a healthy
// CT corpus; every case is a pure function of (config, seed).

#include <cstdint>

#include "normseg/vol3.hpp"

namespace normseg::phantom {

struct PhantomConfig {
  Dims dims{64, 64, 64};
  Spacing spacing{};
  double air_hu = -1000.0;
  double soft_tissue_hu = 40.0;
  double parenchyma_hu_lo = -890.0;
  double parenchyma_hu_hi = -840.0;
  double noise_hu = 20.0;
  double vessel_hu = 40.0;
  double airway_wall_hu = -250.0;
  int vessel_roots = 8;       // per lung
  double root_radius = 2.2;   // voxels
  double min_radius = 0.55;
  int max_generations = 8;
  int airway_roots = 1;       // per lung
  int fringe_patches = 6;     // segmentation-error patches on the raw lung mask
  double fringe_radius = 4.0;
};

struct HealthyCase {
  Volume3 raw_hu;      // Hounsfield units
  Mask3 lung;          // exact lung region
  Mask3 segmented;     // lung mask with boundary errors, as a segmenter would deliver it
};

HealthyCase make_healthy_case(const PhantomConfig& cfg, std::uint64_t seed);

}  // namespace normseg::phantom
