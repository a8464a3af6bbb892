#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "normseg/app/commands.hpp"
#include "normseg/app/config.hpp"
#include "normseg/app/workflow.hpp"
#include "normseg/errors.hpp"
#include "smoke.hpp"

using namespace normseg;
using namespace normseg::app;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("normseg_app_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Config, DefaultsValidate) {
  const RunConfig c = default_config();
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.net.ensemble_size, 5);
  EXPECT_EQ(c.net.vote_quorum, 3);
  EXPECT_DOUBLE_EQ(c.tau, 0.33);
}

TEST(Config, FormatRoundTrip) {
  const RunConfig a = parse_config(testkit::smoke_config_text());
  const std::string text = format_config(a);
  const RunConfig b = parse_config(text);
  EXPECT_EQ(format_config(b), text);
  EXPECT_EQ(b.master_seed, 7u);
  EXPECT_EQ(b.net.patch, (Dims{8, 8, 8}));
  EXPECT_EQ(b.corpus.phantom.dims, (Dims{32, 32, 32}));
  EXPECT_DOUBLE_EQ(b.benchmark.generator.large_axes.hi, 10.0);
}

TEST(Config, ErrorsNameTheLine) {
  try {
    parse_config("seed = 3\n\n[net]\nlevles = 2\n");
    FAIL() << "unknown key accepted";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 4"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("net.levles"), std::string::npos);
  }
  EXPECT_THROW(parse_config("[net]\nlevels = two\n"), ConfigError);
  EXPECT_THROW(parse_config("[post\nk_d = 9\n"), ConfigError);
  EXPECT_THROW(parse_config("schema = 2\n"), ConfigError);
  EXPECT_THROW(parse_config("[post]\nk_d = 8\n"), ConfigError);
  EXPECT_THROW(parse_config("preset = nope\n"), ConfigError);
}

TEST(Config, CommentsAndOptionals) {
  const RunConfig c = parse_config("# run\ntau = 0.4  # trailing\n[benchmark]\ndsc_min = 0.5\nmargin_min = none\n");
  EXPECT_DOUBLE_EQ(c.tau, 0.4);
  EXPECT_DOUBLE_EQ(c.post.tau, 0.4);
  EXPECT_EQ(c.benchmark.dsc_min, 0.5);
  EXPECT_FALSE(c.benchmark.margin_min);
}

TEST(Presets, AllApplyAndValidate) {
  for (const auto& name : preset_names()) {
    RunConfig c = default_config();
    apply_preset(c, name);
    EXPECT_EQ(c.preset, name);
    EXPECT_NO_THROW(c.validate()) << name;
  }
  RunConfig c = default_config();
  EXPECT_THROW(apply_preset(c, "xv"), ConfigError);
}

TEST(Presets, Effects) {
  const auto with = [](const char* name) {
    RunConfig c = default_config();
    apply_preset(c, name);
    return c;
  };
  EXPECT_TRUE(with("fixed_G").generator.fixed_shapes);
  EXPECT_EQ(with("fixed_a").generator.fixed_a, 0.2);
  EXPECT_TRUE(with("fixed_B").generator.fixed_texture);
  EXPECT_EQ(with("gt_regions").gt_mode, forge::GtMode::kRegions);
  EXPECT_EQ(with("gt_lesions").gt_mode, forge::GtMode::kLesions);
  EXPECT_FALSE(with("no_edge_removal").edge_removal);
  EXPECT_EQ(with("no_growing").post.variant, post::Variant::kNoGrowing);
  EXPECT_EQ(with("g_as_prediction").post.variant, post::Variant::kGAsPrediction);
  EXPECT_NEAR(with("T-500").tau, 1.0 / 3.0, 1e-12);
  EXPECT_FALSE(with("i").generator.deform_enabled);
  EXPECT_FALSE(with("ii").generator.rotate_enabled);
  EXPECT_DOUBLE_EQ(with("viii").generator.a_bound.lo, 0.05);
  EXPECT_DOUBLE_EQ(with("xiv").generator.mu0.hi, 0.85);
  EXPECT_NEAR(tau_for_hu(-800.0), 0.0, 1e-12);
  EXPECT_NEAR(tau_for_hu(100.0), 1.0, 1e-12);
}

TEST(Presets, OverridePrecedence) {
  const RunConfig file = parse_config("preset = fixed_a\n");
  EXPECT_EQ(file.preset, "fixed_a");
  const RunConfig over = parse_config("preset = fixed_a\n", Overrides{"fixed_G", 99});
  EXPECT_EQ(over.preset, "fixed_G");
  EXPECT_FALSE(over.generator.fixed_a);
  EXPECT_EQ(over.master_seed, 99u);
  const RunConfig keyed = parse_config("preset = fixed_a\n[generator]\nfixed_a = 0.3\n");
  EXPECT_EQ(keyed.generator.fixed_a, 0.3);
}

TEST(Workflow, CorpusFilesRoundTrip) {
  const RunConfig cfg = parse_config(testkit::smoke_config_text());
  const fs::path dir = scratch("corpus");
  const auto healthy = make_healthy_corpus(cfg);
  ASSERT_EQ(healthy.size(), 2u);
  write_healthy_corpus(dir / "healthy", healthy);
  const auto back = read_healthy_corpus(dir / "healthy");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].id, healthy[1].id);
  EXPECT_EQ(back[1].raw_hu, healthy[1].raw_hu);

  std::vector<lung::ThoraxCase> cases;
  for (const auto& h : healthy) cases.push_back(prepare_training_case(h, cfg));
  const auto pairs = synthesize(cases, cfg);
  ASSERT_EQ(pairs.size(), 3u);
  write_corpus(dir / "corpus", pairs);
  EXPECT_TRUE(fs::exists(dir / "corpus" / "pair_002_gt.vol3"));
  EXPECT_TRUE(fs::exists(dir / "corpus" / "pair_002.txt"));
  const auto pairs_back = read_corpus(dir / "corpus");
  ASSERT_EQ(pairs_back.size(), 3u);
  EXPECT_EQ(pairs_back[2].input, pairs[2].input);
  EXPECT_EQ(pairs_back[2].gt, pairs[2].gt);
  fs::remove_all(dir);
}

TEST(Workflow, HeldOutCasesStayInsideTheLung) {
  const RunConfig cfg = parse_config(testkit::smoke_config_text());
  const auto cases = make_held_out(cfg);
  ASSERT_EQ(cases.size(), 2u);
  for (const auto& c : cases) {
    EXPECT_TRUE(mask_subset(c.lesion, c.lung));
    EXPECT_GT(c.lesion.count(), 0u);
    for (std::size_t i = 0; i < c.thorax.size(); ++i)
      if (!c.lung[i]) {
        EXPECT_EQ(c.thorax[i], 0.0f);
      }
  }
}

TEST(Commands, GateFailureExitCode) {
  CommandOptions opt;
  opt.config = parse_config(testkit::smoke_config_text() + "\n[benchmark]\ndsc_min = 1.1\n");
  const fs::path dir = scratch("pipeline");
  opt.out = dir;
  std::ostringstream log;
  EXPECT_EQ(cmd_pipeline(opt, std::nullopt, log), kExitGate);
  EXPECT_NE(log.str().find("gate failed"), std::string::npos);
  for (const char* f : {"config.txt", "cases.csv", "baseline_cases.csv", "summary.csv", "dice_hist.svg",
                        "models/model_00.tnet", "models/model_01.tnet", "models/train_log.csv"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  std::ifstream cfg_file(dir / "config.txt");
  std::stringstream ss;
  ss << cfg_file.rdbuf();
  EXPECT_EQ(format_config(parse_config(ss.str())), ss.str());
  fs::remove_all(dir);
}

TEST(Commands, ExitCodes) {
  EXPECT_EQ(exit_code_for(IoError("missing", "x")), kExitIo);
  EXPECT_EQ(exit_code_for(ParseError(ParseErrorKind::kBadMagic, "bad")), kExitIo);
  EXPECT_EQ(exit_code_for(ConfigError("bad")), kExitConfig);
  CommandOptions opt;
  opt.config = parse_config(testkit::smoke_config_text());
  opt.config.paths.healthy = "/nonexistent/normseg/healthy";
  std::ostringstream log;
  try {
    cmd_synth(opt, log);
    FAIL() << "missing healthy directory accepted";
  } catch (const std::exception& e) {
    EXPECT_EQ(exit_code_for(e), kExitIo);
  }
}
