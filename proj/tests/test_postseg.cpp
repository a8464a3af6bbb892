#include <gtest/gtest.h>

#include "normseg/errors.hpp"
#include "normseg/postseg.hpp"
#include "support.hpp"

using namespace normseg;
using namespace normseg::post;

TEST(Variant, RoundTrip) {
  for (Variant v : {Variant::kFull, Variant::kNoGrowing, Variant::kGAsPrediction})
    EXPECT_EQ(parse_variant(to_string(v)), v);
  EXPECT_THROW(parse_variant("grow"), ConfigError);
}

TEST(PostprocessConfig, Validation) {
  PostprocessConfig c;
  EXPECT_NO_THROW(c.validate());
  c.k_d = 8;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.t_f = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.dilation_iterations = -1;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Candidates, SetAlgebra) {
  Rng rng(1);
  for (int t = 0; t < 20; ++t) {
    const Dims d = testkit::random_dims(rng, 2, 10);
    const Volume3 h = testkit::random_volume(d, rng);
    const Mask3 lung = testkit::random_mask(d, 0.7, rng);
    const Mask3 healthy = testkit::random_mask(d, 0.4, rng);
    const Candidates c = lesion_candidates(h, lung, healthy, 0.33);
    EXPECT_EQ(c.full, mask_minus(lung, healthy));
    EXPECT_EQ(c.bright, mask_and(c.full, bright_mask(h, 0.33)));
    EXPECT_TRUE(mask_subset(c.bright, c.full));
  }
  EXPECT_THROW(lesion_candidates(Volume3::filled(Dims{2, 2, 2}, 0.5f), Mask3(Dims{2, 2, 2}), Mask3(Dims{2, 2, 3}), 0.3),
               ShapeError);
}

TEST(SmoothThreshold, MatchesOracle) {
  Rng rng(2);
  for (int t = 0; t < 15; ++t) {
    const Mask3 m = testkit::random_mask(testkit::random_dims(rng, 1, 11), rng.uniform(0.05, 0.6), rng);
    const int k = 2 * static_cast<int>(rng.uniform_int(1, 4)) + 1;
    const double th = rng.uniform(0.05, 0.5);
    EXPECT_EQ(smooth_threshold(m, k, th), testkit::smooth_threshold_oracle(m, k, th)) << "k " << k;
  }
}

TEST(SmoothThreshold, StrictInequality) {
  // A single voxel in a 3^3 window averages 1/27; equality must not pass.
  Mask3 m(Dims{3, 3, 3});
  m.set(1, 1, 1);
  EXPECT_EQ(smooth_threshold(m, 3, 1.0 / 27.0).count(), 0u);
  EXPECT_TRUE(smooth_threshold(m, 3, 1.0 / 27.0 - 1e-9).at(1, 1, 1));
}

TEST(SmoothThreshold, SliceMode) {
  Rng rng(3);
  const Mask3 m = testkit::random_mask(Dims{5, 9, 9}, 0.3, rng);
  const auto sums = testkit::box_sum_oracle(m.dims(), 5, true,
                                            [&](long z, long y, long x) { return m.at(z, y, x) ? 1.0 : 0.0; });
  const Mask3 got = smooth_threshold(m, 5, 0.3, morph::BoxMode::kPerSlice2D);
  for (std::size_t i = 0; i < m.size(); ++i) EXPECT_EQ(got[i], sums[i] / 25.0 > 0.3) << i;
}

TEST(Segment, MatchesOracle) {
  Rng rng(4);
  PostprocessConfig cfg;
  for (int t = 0; t < 12; ++t) {
    const Dims d = testkit::random_dims(rng, 4, 12);
    const Volume3 h = testkit::random_volume(d, rng);
    const Mask3 lung = testkit::random_mask(d, 0.8, rng);
    const Mask3 healthy = testkit::random_mask(d, rng.uniform(0.1, 0.6), rng);
    cfg.k_d = 2 * static_cast<int>(rng.uniform_int(1, 4)) + 1;
    cfg.k_f = 2 * static_cast<int>(rng.uniform_int(1, 3)) + 1;
    cfg.t_d = rng.uniform(0.1, 0.4);
    cfg.t_f = rng.uniform(0.05, 0.3);
    cfg.dilation_iterations = static_cast<int>(rng.uniform_int(0, 3));
    const Mask3 want = testkit::segment_oracle(h, lung, healthy, cfg.tau, cfg.k_d, cfg.t_d, cfg.k_f, cfg.t_f,
                                               cfg.dilation_radius, cfg.dilation_iterations);
    EXPECT_EQ(segment(h, lung, healthy, cfg), want) << "trial " << t;
  }
}

TEST(Segment, Variants) {
  Rng rng(5);
  const Dims d{10, 10, 10};
  const Volume3 h = testkit::random_volume(d, rng);
  const Mask3 lung = testkit::random_mask(d, 0.9, rng);
  const Mask3 healthy = testkit::random_mask(d, 0.3, rng);
  PostprocessConfig cfg;
  const Segmentation full = segment_detailed(h, lung, healthy, cfg);
  EXPECT_TRUE(mask_subset(full.final_mask, full.g));
  EXPECT_TRUE(mask_subset(full.g, lung));
  cfg.variant = Variant::kNoGrowing;
  EXPECT_EQ(segment(h, lung, healthy, cfg), mask_and(full.e, lung));
  cfg.variant = Variant::kGAsPrediction;
  EXPECT_EQ(segment(h, lung, healthy, cfg), full.g);
}

TEST(Segment, RecoversABrightCube) {
  const Dims d{20, 20, 20};
  const Mask3 lung(d, true);
  Mask3 healthy(d, true), cube(d);
  Volume3 h = Volume3::filled(d, 0.1f);
  for (long z = 6; z < 13; ++z)
    for (long y = 6; y < 13; ++y)
      for (long x = 6; x < 13; ++x) {
        healthy.set(z, y, x, false);
        cube.set(z, y, x);
        h.at(z, y, x) = 0.6f;
      }
  const Segmentation s = segment_detailed(h, lung, healthy, PostprocessConfig{});
  EXPECT_EQ(s.d, cube);
  EXPECT_EQ(s.f, cube);
  EXPECT_GT(s.e.count(), 0u);
  EXPECT_TRUE(mask_subset(cube, s.final_mask));
  EXPECT_TRUE(mask_subset(s.final_mask, s.g));
  EXPECT_EQ(s.final_mask, testkit::segment_oracle(h, lung, healthy, 0.33, 9, 0.2, 7, 0.15, 1, 3));
}
