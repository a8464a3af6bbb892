#include <gtest/gtest.h>

#include <sstream>

#include "normseg/errors.hpp"
#include "normseg/evalkit.hpp"
#include "support.hpp"

using namespace normseg;
using namespace normseg::eval;

TEST(Confusion, CountsInsideRegion) {
  const Dims d{1, 1, 6};
  const Mask3 pred(d, std::vector<std::uint8_t>{1, 1, 0, 0, 1, 1});
  const Mask3 gt(d, std::vector<std::uint8_t>{1, 0, 1, 0, 1, 0});
  const Mask3 region(d, std::vector<std::uint8_t>{1, 1, 1, 1, 0, 0});
  const ConfusionCounts c = confusion(pred, gt, region);
  EXPECT_EQ(c, (ConfusionCounts{1, 1, 1, 1}));
  EXPECT_EQ(c.total(), 4u);
  EXPECT_THROW(confusion(pred, gt, Mask3(Dims{1, 1, 5})), ShapeError);
}

TEST(Metrics, Formulas) {
  const ConfusionCounts c{6, 2, 4, 8};
  EXPECT_DOUBLE_EQ(*dsc(c), 12.0 / 18.0);
  EXPECT_DOUBLE_EQ(*psc(c), 6.0 / 8.0);
  EXPECT_DOUBLE_EQ(*sen(c), 6.0 / 10.0);
  EXPECT_DOUBLE_EQ(*specificity(c), 8.0 / 10.0);
  const ConfusionCounts empty{0, 0, 0, 5};
  EXPECT_FALSE(dsc(empty));
  EXPECT_FALSE(psc(empty));
  EXPECT_FALSE(sen(empty));
  EXPECT_DOUBLE_EQ(*specificity(empty), 1.0);
}

TEST(Metrics, DiceIdentityOnRandomMasks) {
  Rng rng(1);
  for (int t = 0; t < 200; ++t) {
    const Dims d = testkit::random_dims(rng, 1, 6);
    const Mask3 p = testkit::random_mask(d, rng.uniform(), rng);
    const Mask3 g = testkit::random_mask(d, rng.uniform(), rng);
    const ConfusionCounts c = confusion(p, g, Mask3(d, true));
    const std::size_t inter = mask_and(p, g).count();
    if (p.count() + g.count() == 0) {
      EXPECT_FALSE(dsc(c));
      continue;
    }
    EXPECT_NEAR(*dsc(c), 2.0 * inter / double(p.count() + g.count()), 1e-12);
  }
}

TEST(Auc, KnownValues) {
  const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
  const std::vector<std::uint8_t> y{0, 0, 1, 1};
  EXPECT_DOUBLE_EQ(*auc_midrank(s, y), 0.75);
  const std::vector<double> tied{0.5, 0.5, 0.5, 0.5};
  EXPECT_DOUBLE_EQ(*auc_midrank(tied, y), 0.5);
  const std::vector<std::uint8_t> all{1, 1, 1, 1};
  EXPECT_FALSE(auc_midrank(s, all));
  EXPECT_THROW(auc_midrank(s, std::vector<std::uint8_t>{1}), ShapeError);
}

TEST(Auc, MatchesPairCounting) {
  Rng rng(2);
  for (int t = 0; t < 50; ++t) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(2, 60));
    std::vector<double> s(n);
    std::vector<std::uint8_t> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng.uniform_int(0, 6)) / 6.0;
      y[i] = rng.bernoulli(0.5);
    }
    const auto want = testkit::auc_pairs(s, y);
    const auto got = auc_midrank(s, y);
    ASSERT_EQ(bool(want), bool(got));
    if (want) {
      EXPECT_NEAR(*got, *want, 1e-12);
    }
  }
}

TEST(BrightVoxels, HealthyIsPositive) {
  const Dims d{1, 1, 6};
  const Volume3 thorax(d, {}, {0.5f, 0.5f, 0.5f, 0.5f, 0.2f, 0.5f}, true);
  const Mask3 lung(d, std::vector<std::uint8_t>{1, 1, 1, 1, 1, 0});
  const Mask3 lesion(d, std::vector<std::uint8_t>{0, 0, 1, 1, 0, 0});
  const Volume3 prob(d, {}, {0.99f, 0.5f, 0.97f, 0.1f, 0.99f, 0.99f}, true);
  const BrightVoxelReport r = bright_voxel_eval(prob, lesion, thorax, lung, 0.33);
  EXPECT_EQ(r.voxels, 4u);
  EXPECT_EQ(r.healthy, 2u);
  EXPECT_DOUBLE_EQ(*r.precision, 0.5);
  EXPECT_DOUBLE_EQ(*r.sensitivity, 0.5);
  EXPECT_DOUBLE_EQ(*r.specificity, 0.5);
  EXPECT_DOUBLE_EQ(*r.auc, 0.75);
}

TEST(Summary, PopulationStatisticsSkipUndefined) {
  const std::vector<std::optional<double>> v{0.2, std::nullopt, 0.4, 0.6};
  const Summary s = summarize(v);
  EXPECT_EQ(s.defined, 3u);
  EXPECT_NEAR(*s.mean, 0.4, 1e-12);
  EXPECT_NEAR(*s.stddev, std::sqrt(0.08 / 3.0), 1e-12);
  const std::vector<std::optional<double>> none{std::nullopt};
  EXPECT_FALSE(summarize(none).mean);
}

TEST(Aggregate, OrderIndependent) {
  const Dims d{1, 1, 4};
  const Mask3 region(d, true);
  std::vector<CaseReport> reports;
  Rng rng(3);
  for (int i = 0; i < 6; ++i)
    reports.push_back(make_report("case_" + std::to_string(i), testkit::random_mask(d, 0.5, rng),
                                  testkit::random_mask(d, 0.5, rng), region));
  const ReportSummary a = aggregate(reports);
  std::reverse(reports.begin(), reports.end());
  const ReportSummary b = aggregate(reports);
  EXPECT_EQ(a.dsc.mean, b.dsc.mean);
  EXPECT_EQ(a.psc.stddev, b.psc.stddev);
  EXPECT_EQ(a.auc.defined, 0u);
}

TEST(Writers, CsvAndSvg) {
  const Dims d{1, 1, 4};
  CaseReport r = make_report("test_000", Mask3(d, std::vector<std::uint8_t>{1, 1, 0, 0}),
                             Mask3(d, std::vector<std::uint8_t>{1, 0, 0, 0}), Mask3(d, true));
  CaseReport empty = make_report("test_001", Mask3(d), Mask3(d), Mask3(d, true));
  std::ostringstream cases;
  write_case_csv(cases, {r, empty});
  const std::string text = cases.str();
  EXPECT_EQ(text.substr(0, text.find('\n')),
            "case_id,tp,fp,fn,tn,dsc,psc,sen,bright_voxels,bright_precision,bright_sensitivity,bright_specificity,"
            "bright_auc");
  EXPECT_NE(text.find("test_000,1,1,0,2,"), std::string::npos);
  EXPECT_NE(text.find("test_001,0,0,0,4,NA,NA,NA"), std::string::npos);
  std::ostringstream summary;
  write_summary_csv(summary, aggregate({r, empty}), "full");
  EXPECT_NE(summary.str().find("full,dsc,1,"), std::string::npos);
  const std::string svg = dice_histogram_svg({r, empty}, 5);
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
  EXPECT_THROW(dice_histogram_svg({}, 0), ParameterError);
}
