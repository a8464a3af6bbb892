#pragma once

// 3D image-processing kernels shared by the thorax preparation, the lesion
// generator and the post-processing pipeline. All functions are pure.

#include <cstddef>
#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "normseg/rng.hpp"
#include "normseg/vol3.hpp"

namespace normseg::morph {

/// Normalized 1-D kernel of length 2*radius+1.
struct Kernel1D {
  int radius = 0;
  std::vector<double> taps;
};

/// Gaussian truncated at ceil(3*sigma) and renormalized to unit mass.
Kernel1D gaussian_kernel(double sigma);

/// Half-sample symmetric reflection (d c b a | a b c d | d c b a) into [0, n).
long reflect_index(long i, long n) noexcept;

/// Separable Gaussian along z, y, x with reflected borders; double accumulation.
Volume3 gaussian_filter(const Volume3& v, double sigma);

enum class BoxMode { kCube3D, kPerSlice2D };

/// Average over the k^3 cube (or the k^2 in-slice square), reflected borders.
Volume3 mean_filter(const Volume3& v, int k, BoxMode mode = BoxMode::kCube3D);

/// Exact count of set voxels in every k^3 (or k^2) window, reflected borders.
std::vector<std::int32_t> box_count(const Mask3& m, int k, BoxMode mode = BoxMode::kCube3D);

/// Cubic structuring element of half-width `radius` (3x3x3 when radius == 1).
struct StructElem {
  int radius = 1;
};

/// Iterated dilation by a cubic element; voxels outside the grid count as unset.
Mask3 dilate(const Mask3& m, StructElem se, int iterations);
/// Iterated erosion by a cubic element; voxels outside the grid count as unset.
Mask3 erode(const Mask3& m, StructElem se, int iterations);

enum class Connectivity { k6 = 6, k26 = 26 };

/// One component: linear voxel indices, ascending.
using Component = std::vector<std::size_t>;

/// Maximal connected sets, ordered by their smallest linear index.
std::vector<Component> connected_components(const Mask3& m, Connectivity conn);

Mask3 component_mask(const Dims& dims, const Component& c);

/// Point or vector in voxel units, ordered (x, y, z).
using Vec3 = Eigen::Vector3d;
using Rotation = Eigen::Matrix3d;

/// Uniformly distributed rotation (Shoemake's random unit quaternion).
Rotation random_rotation(Rng& rng);

/// Sets voxels whose centre p satisfies |R^-1 (p - centre) / (a,b,c)|^2 <= 1.
/// `semi_axes` are (a, b, c) along the local x, y, z axes; `centre` is (x, y, z).
Mask3 voxelize_ellipsoid(const Vec3& semi_axes, const Rotation& rotation, const Vec3& centre, const Dims& dims);

/// Nearest-neighbour rotation about the grid centre.
Mask3 rotate_mask(const Mask3& m, const Rotation& rotation);

/// Random coarse-grid displacement field, trilinearly interpolated, nearest-neighbour pull-back.
Mask3 elastic_deform(const Mask3& m, int grid_spacing, double magnitude, std::uint64_t seed);

}  // namespace normseg::morph
