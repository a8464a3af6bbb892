#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "normseg/errors.hpp"
#include "normseg/lesionforge.hpp"
#include "normseg/phantom.hpp"
#include "support.hpp"

using namespace normseg;
using namespace normseg::forge;

namespace {

GeneratorConfig small_generator(double ref) {
  GeneratorConfig g;
  g.ref_mask_volume = ref;
  g.small_count = {2.0, 4.0};
  g.medium_count = {1.0, 2.0};
  g.small_axes = {1.5, 3.0};
  g.medium_axes = {3.0, 5.0};
  g.large_axes = {5.0, 7.0};
  g.sigma_a = {1.0, 3.0};
  return g;
}

lung::ThoraxCase small_case(std::uint64_t seed) {
  phantom::PhantomConfig pc;
  pc.dims = {32, 32, 32};
  const auto hc = phantom::make_healthy_case(pc, seed);
  return lung::prepare_case(hu_window(hc.raw_hu), hc.lung);
}

}  // namespace

TEST(GtMode, RoundTrip) {
  for (GtMode m : {GtMode::kTissues, GtMode::kRegions, GtMode::kLesions}) EXPECT_EQ(parse_gt_mode(to_string(m)), m);
  EXPECT_THROW(parse_gt_mode("voxels"), ConfigError);
}

TEST(GeneratorConfig, Validation) {
  GeneratorConfig g;
  EXPECT_NO_THROW(g.validate());
  GeneratorConfig inverted = g;
  inverted.mu0 = {0.8, 0.4};
  EXPECT_THROW(inverted.validate(), ConfigError);
  GeneratorConfig gap = g;
  gap.a_bound = {0.0, 0.1};
  EXPECT_THROW(gap.validate(), ConfigError);
  GeneratorConfig prob = g;
  prob.sigma_b.p_narrow = 1.5;
  EXPECT_THROW(prob.validate(), ConfigError);
  GeneratorConfig ref = g;
  ref.ref_mask_volume = 0.0;
  EXPECT_THROW(ref.validate(), ConfigError);
  GeneratorConfig fixed = g;
  fixed.fixed_a = 1.2;
  EXPECT_THROW(fixed.validate(), ConfigError);
}

TEST(SampleCount, ScaledIntegerRange) {
  Rng rng(3);
  long lo = 100, hi = -1;
  for (int i = 0; i < 2000; ++i) {
    const int n = sample_count({5.0, 10.0}, 0.5, rng);
    lo = std::min<long>(lo, n), hi = std::max<long>(hi, n);
  }
  EXPECT_EQ(lo, 3);
  EXPECT_EQ(hi, 5);
  EXPECT_EQ(sample_count({5.0, 10.0}, 0.05, rng), 0);
}

TEST(LambdaFactor, RatioOfLungVolumes) {
  Mask3 lung(Dims{4, 4, 4});
  for (std::size_t i = 0; i < 10; ++i) lung.set(i);
  GeneratorConfig g;
  g.ref_mask_volume = 40.0;
  EXPECT_DOUBLE_EQ(lambda_factor(lung, g), 0.25);
}

TEST(TextureScale, MeanAboveThreshold) {
  const Volume3 b2(Dims{1, 1, 4}, {}, {0.1f, 0.3f, 0.5f, 0.15f}, true);
  const auto beta = texture_scale(b2, 0.6, 0.2);
  ASSERT_TRUE(beta);
  EXPECT_NEAR(*beta, 0.6 / 0.4, 1e-6);
  EXPECT_FALSE(texture_scale(b2, 0.6, 0.5));
}

TEST(TextureScale, ScaleAndClip) {
  const Volume3 b2(Dims{1, 1, 4}, {}, {0.1f, 0.3f, 0.5f, 0.2f}, true);
  Mask3 inside(b2.dims(), true);
  inside.set(3, false);
  const Volume3 out = scale_and_clip(b2, 2.5, inside);
  EXPECT_FLOAT_EQ(out[0], 0.25f);
  EXPECT_FLOAT_EQ(out[1], 0.75f);
  EXPECT_FLOAT_EQ(out[2], 1.0f);
  EXPECT_FLOAT_EQ(out[3], 0.0f);
}

TEST(ProbabilityField, AttainsItsBounds) {
  GeneratorConfig g;
  Rng rng(9);
  for (int t = 0; t < 20; ++t) {
    const ProbabilityField f = sample_probability_field(Dims{6, 7, 8}, g, rng);
    const auto [mn, mx] = std::minmax_element(f.a.values().begin(), f.a.values().end());
    EXPECT_EQ(*mn, static_cast<float>(f.a_lo));
    EXPECT_EQ(*mx, static_cast<float>(f.a_hi));
    EXPECT_GT(f.a_hi - f.a_lo, g.a_min_gap);
    EXPECT_GE(f.sigma_a, g.sigma_a.lo);
    EXPECT_LE(f.sigma_a, g.sigma_a.hi);
  }
  g.fixed_a = 0.2;
  const ProbabilityField f = sample_probability_field(Dims{3, 3, 3}, g, rng);
  for (float v : f.a.values()) EXPECT_FLOAT_EQ(v, 0.2f);
  EXPECT_THROW(sample_probability_field(Dims{0, 3, 3}, g, rng), ParameterError);
}

TEST(Composite, VoxelwiseMaximum) {
  const Dims d{4, 4, 4};
  const Volume3 thorax = Volume3::filled(d, 0.3f);
  TexturePatch p;
  p.bbox = Box{1, 1, 1, Dims{2, 2, 2}};
  p.values = Volume3(Dims{2, 2, 2}, {}, {0.1f, 0.5f, 0.0f, 0.9f, 0.3f, 0.3f, 0.2f, 1.0f}, true);
  const Volume3 a = composite(thorax, {p});
  EXPECT_FLOAT_EQ(a.at(1, 1, 1), 0.3f);
  EXPECT_FLOAT_EQ(a.at(1, 1, 2), 0.5f);
  EXPECT_FLOAT_EQ(a.at(1, 2, 2), 0.9f);
  EXPECT_FLOAT_EQ(a.at(2, 2, 2), 1.0f);
  EXPECT_FLOAT_EQ(a.at(0, 0, 0), 0.3f);
  p.bbox.z0 = 3;
  EXPECT_THROW(composite(thorax, {p}), ShapeError);
}

TEST(GroundTruth, TruthTable) {
  // Voxel i encodes (bright, in shape, in lung) in bits 2, 1, 0.
  const Dims d{1, 1, 8};
  std::vector<float> h(8);
  Mask3 shape(d), lung(d);
  for (std::size_t i = 0; i < 8; ++i) {
    h[i] = (i & 4) ? 0.33f : 0.32f;
    if (i & 2) shape.set(i);
    if (i & 1) lung.set(i);
  }
  const Volume3 thorax(d, {}, h, true);
  const double tau = static_cast<double>(0.33f);
  const Mask3 tissues = make_ground_truth(thorax, lung, shape, tau, GtMode::kTissues);
  const Mask3 regions = make_ground_truth(thorax, lung, shape, tau, GtMode::kRegions);
  const Mask3 lesions = make_ground_truth(thorax, lung, shape, tau, GtMode::kLesions);
  for (std::size_t i = 0; i < 8; ++i) {
    const bool b = i & 4, g = i & 2, m = i & 1;
    EXPECT_EQ(tissues[i], b && !g && m) << i;
    EXPECT_EQ(regions[i], m && !g) << i;
    EXPECT_EQ(lesions[i], m && g) << i;
  }
  EXPECT_THROW(make_ground_truth(thorax, lung, shape, 1.5, GtMode::kTissues), ParameterError);
}

TEST(Shapes, ClippedToLungAndPartitionedIntoBlobs) {
  const auto tc = small_case(1);
  const auto g = small_generator(static_cast<double>(tc.clean_lung_mask.count()));
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const ShapeSample s = sample_shapes(tc.clean_lung_mask, g, seed);
    EXPECT_DOUBLE_EQ(s.lambda, 1.0);
    EXPECT_TRUE(mask_subset(s.shape, tc.clean_lung_mask));
    std::size_t total = 0;
    Mask3 seen(s.shape.dims());
    for (const Blob& b : s.blobs) {
      total += b.voxels.size();
      for (std::size_t i : b.voxels) {
        EXPECT_TRUE(s.shape[i]);
        EXPECT_FALSE(seen[i]);
        seen.set(i);
      }
    }
    EXPECT_EQ(total, s.shape.count());
    EXPECT_EQ(s.ellipsoids.size(), static_cast<std::size_t>(s.n_small + s.n_medium + (s.large ? 1 : 0)));
  }
}

TEST(Shapes, FixedMode) {
  const auto tc = small_case(2);
  auto g = small_generator(static_cast<double>(tc.clean_lung_mask.count()));
  g.fixed_shapes = true;
  g.fixed_shape_count = 3;
  g.fixed_shape_radius = 2.0;
  const ShapeSample s = sample_shapes(tc.clean_lung_mask, g, 4);
  ASSERT_EQ(s.ellipsoids.size(), 3u);
  for (const auto& e : s.ellipsoids) {
    EXPECT_EQ(e.size_class, "fixed");
    EXPECT_DOUBLE_EQ(e.a, 2.0);
  }
  EXPECT_EQ(s.n_small + s.n_medium, 0);
}

TEST(Texture, BoundedAndZeroOutsideTheBlob) {
  const auto tc = small_case(3);
  const auto g = small_generator(static_cast<double>(tc.clean_lung_mask.count()));
  const ShapeSample s = sample_shapes(tc.clean_lung_mask, g, 8);
  ASSERT_FALSE(s.blobs.empty());
  Rng rng(1);
  for (const Blob& b : s.blobs) {
    const TexturePatch p = sample_texture(b, tc.clean_lung_mask.dims(), g, rng);
    EXPECT_EQ(p.values.dims(), b.bbox.dims);
    std::size_t nonzero = 0;
    for (float v : p.values.values()) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
      nonzero += v > 0.0f;
    }
    EXPECT_LE(nonzero, b.voxels.size());
  }
}

TEST(GeneratePair, DeterministicAndConsistent) {
  const auto tc = small_case(4);
  const auto g = small_generator(static_cast<double>(tc.clean_lung_mask.count()));
  const TrainPair a = generate_pair(tc, g, 0.33, GtMode::kTissues, 77);
  const TrainPair b = generate_pair(tc, g, 0.33, GtMode::kTissues, 77);
  const TrainPair c = generate_pair(tc, g, 0.33, GtMode::kTissues, 78);
  EXPECT_EQ(a.input, b.input);
  EXPECT_EQ(a.gt, b.gt);
  EXPECT_EQ(describe(a, "x"), describe(b, "x"));
  EXPECT_NE(describe(a, "x"), describe(c, "x"));
  for (std::size_t i = 0; i < a.input.size(); ++i) {
    EXPECT_GE(a.input[i], tc.thorax[i]);
    if (!a.lesion_shape[i]) {
      EXPECT_EQ(a.input[i], tc.thorax[i]);
    }
  }
  EXPECT_EQ(a.gt, make_ground_truth(tc.thorax, tc.clean_lung_mask, a.lesion_shape, 0.33, GtMode::kTissues));
  const std::string text = describe(a, "pair_000");
  EXPECT_NE(text.find("case_id = pair_000"), std::string::npos);
  EXPECT_NE(text.find("n_blobs = " + std::to_string(a.shapes.blobs.size())), std::string::npos);
}
