#pragma once

#include "normseg/morphkit.hpp"
#include "normseg/vol3.hpp"

namespace normseg::lung {

/// A windowed CT volume together with its lung masks and thorax area.
struct ThoraxCase {
  Volume3 volume;        // windowed intensities R'
  Mask3 raw_lung_mask;   // M' as delivered by the lung segmenter
  Mask3 clean_lung_mask; // M = M' \ E
  Mask3 edges;           // E
  Volume3 thorax;        // H = volume (.) M
};

struct EdgeRemovalConfig {
  double tau = 0.33;
  double edge_fraction = 0.5;
  int shell_thickness = 1;
  morph::Connectivity connectivity = morph::Connectivity::k26;
};

/// Voxels of `m` within `thickness` erosion steps of its complement; the grid border counts as outside.
Mask3 boundary_shell(const Mask3& m, int thickness);

/// Drops bright thorax components that mostly sit on the lung-mask boundary.
ThoraxCase remove_erroneous_edges(const Volume3& volume, const Mask3& raw_lung_mask, const EdgeRemovalConfig& cfg = {});

/// Takes the mask as-is (E empty). Used on the inference path and for the no-edge-removal ablation.
ThoraxCase prepare_case(const Volume3& volume, const Mask3& lung_mask);

}  // namespace normseg::lung
