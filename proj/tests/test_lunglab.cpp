#include <gtest/gtest.h>

#include "normseg/errors.hpp"
#include "normseg/lunglab.hpp"
#include "normseg/phantom.hpp"

using namespace normseg;
using namespace normseg::lung;

namespace {

Mask3 block(const Dims& d, long lo, long hi) {
  Mask3 m(d);
  for (long z = lo; z < hi; ++z)
    for (long y = lo; y < hi; ++y)
      for (long x = lo; x < hi; ++x) m.set(z, y, x);
  return m;
}

}  // namespace

TEST(BoundaryShell, GridBorderCountsAsOutside) {
  const Mask3 full(Dims{3, 3, 3}, true);
  const Mask3 shell = boundary_shell(full, 1);
  EXPECT_EQ(shell.count(), 26u);
  EXPECT_FALSE(shell.at(1, 1, 1));
  EXPECT_EQ(boundary_shell(full, 2).count(), 27u);
  EXPECT_THROW(boundary_shell(full, 0), ParameterError);
}

TEST(BoundaryShell, InteriorBlock) {
  const Dims d{10, 10, 10};
  const Mask3 lung = block(d, 2, 8);
  EXPECT_EQ(boundary_shell(lung, 1).count(), 216u - 64u);
  EXPECT_EQ(boundary_shell(lung, 2).count(), 216u - 8u);
  EXPECT_TRUE(mask_subset(boundary_shell(lung, 1), lung));
}

TEST(EdgeRemoval, DropsComponentsMostlyOnTheShell) {
  const Dims d{10, 10, 10};
  const Mask3 lung = block(d, 2, 8);
  Volume3 v = Volume3::filled(d, 0.9f);
  for (std::size_t i = 0; i < v.size(); ++i)
    if (lung[i]) v[i] = 0.1f;
  const auto bright = [&](long z, long y, long x) { v.at(z, y, x) = 0.8f; };
  bright(2, 2, 2);                                     // fully on the shell
  bright(2, 6, 6), bright(3, 6, 6);                    // half on the shell
  bright(2, 3, 6), bright(3, 3, 6), bright(4, 3, 6);   // one third on the shell
  for (long z = 4; z < 6; ++z)
    for (long y = 4; y < 6; ++y)
      for (long x = 3; x < 5; ++x) bright(z, y, x);    // interior

  const ThoraxCase c = remove_erroneous_edges(v, lung);
  EXPECT_EQ(c.edges.count(), 3u);
  EXPECT_TRUE(c.edges.at(2, 2, 2));
  EXPECT_TRUE(c.edges.at(2, 6, 6));
  EXPECT_TRUE(c.edges.at(3, 6, 6));
  EXPECT_EQ(c.clean_lung_mask, mask_minus(lung, c.edges));
  EXPECT_EQ(c.raw_lung_mask, lung);
  EXPECT_EQ(c.thorax, apply_mask(v, c.clean_lung_mask));
  EXPECT_FLOAT_EQ(c.thorax.at(2, 2, 2), 0.0f);
  EXPECT_FLOAT_EQ(c.thorax.at(4, 4, 4), 0.8f);
  EXPECT_FLOAT_EQ(c.thorax.at(0, 0, 0), 0.0f);

  EdgeRemovalConfig strict;
  strict.edge_fraction = 0.75;
  EXPECT_EQ(remove_erroneous_edges(v, lung, strict).edges.count(), 1u);
  EdgeRemovalConfig dim;
  dim.tau = 0.85;
  EXPECT_EQ(remove_erroneous_edges(v, lung, dim).edges.count(), 0u);
}

TEST(EdgeRemoval, RejectsRawVolumes) {
  const Dims d{4, 4, 4};
  const Volume3 raw(d, {}, std::vector<float>(d.size(), -500.0f), false);
  EXPECT_THROW(remove_erroneous_edges(raw, Mask3(d, true)), ParameterError);
  EXPECT_THROW(prepare_case(Volume3::filled(d, 0.5f), Mask3(Dims{4, 4, 5})), ShapeError);
}

TEST(PrepareCase, KeepsTheMask) {
  const Dims d{6, 6, 6};
  const Mask3 lung = block(d, 1, 5);
  const Volume3 v = Volume3::filled(d, 0.7f);
  const ThoraxCase c = prepare_case(v, lung);
  EXPECT_EQ(c.clean_lung_mask, lung);
  EXPECT_EQ(c.edges.count(), 0u);
  EXPECT_EQ(c.thorax, apply_mask(v, lung));
}

TEST(Phantom, DeterministicPerSeed) {
  phantom::PhantomConfig cfg;
  cfg.dims = {32, 32, 32};
  const auto a = phantom::make_healthy_case(cfg, 5);
  const auto b = phantom::make_healthy_case(cfg, 5);
  const auto c = phantom::make_healthy_case(cfg, 6);
  EXPECT_EQ(a.raw_hu, b.raw_hu);
  EXPECT_EQ(a.lung, b.lung);
  EXPECT_EQ(a.segmented, b.segmented);
  EXPECT_NE(a.raw_hu, c.raw_hu);
  EXPECT_FALSE(a.raw_hu.windowed());
  EXPECT_EQ(a.raw_hu.dims(), cfg.dims);
  EXPECT_GT(a.lung.count(), cfg.dims.size() / 20);
  EXPECT_NE(a.lung, a.segmented);
}

TEST(Phantom, VesselsAreBrightInsideTheLung) {
  phantom::PhantomConfig cfg;
  cfg.dims = {48, 48, 48};
  const auto hc = phantom::make_healthy_case(cfg, 1);
  const Volume3 w = hu_window(hc.raw_hu);
  const Mask3 bright = mask_and(bright_mask(w, 0.33), hc.lung);
  EXPECT_GT(bright.count(), 0u);
  EXPECT_LT(bright.count(), hc.lung.count() / 2);
}
