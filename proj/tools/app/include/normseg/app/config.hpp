#pragma once

// Run configuration: a versioned `[section] key = value` text format, preset
// overlays for the ablation studies, and desk-scale defaults.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "normseg/lesionforge.hpp"
#include "normseg/normnet.hpp"
#include "normseg/phantom.hpp"
#include "normseg/postseg.hpp"

namespace normseg::app {

inline constexpr int kSchemaVersion = 1;

struct Paths {
  std::filesystem::path healthy = "healthy";
  std::filesystem::path corpus = "corpus";
  std::filesystem::path models = "models";
  std::filesystem::path reports = "reports";
};

struct CorpusConfig {
  int healthy_cases = 8;
  int pairs = 32;
  /// ref_mask_volume = reference_scale * largest training lung.
  double reference_scale = 2.0;
  phantom::PhantomConfig phantom{};
};

struct BenchmarkConfig {
  int cases = 16;
  /// Held-out lesion density: ref_mask_volume = |M| / lambda per case.
  double lambda = 0.2;
  forge::GeneratorConfig generator{};
  std::optional<double> dsc_min;
  std::optional<double> margin_min;  // over the intensity baseline
};

struct RunConfig {
  int schema = kSchemaVersion;
  std::string preset = "baseline";
  std::uint64_t master_seed = 1;
  double tau = 0.33;
  forge::GtMode gt_mode = forge::GtMode::kTissues;
  bool edge_removal = true;
  Paths paths{};
  CorpusConfig corpus{};
  forge::GeneratorConfig generator{};
  net::NetConfig net{};
  post::PostprocessConfig post{};
  BenchmarkConfig benchmark{};

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// Desk-scale defaults (64^3 phantoms, small ensemble members).
RunConfig default_config();

/// tau for an HU threshold under the [-800, 100] window.
double tau_for_hu(double hu);

std::vector<std::string> preset_names();
/// Overlays the named preset. Throws ConfigError on unknown names.
void apply_preset(RunConfig& cfg, std::string_view name);

struct Overrides {
  std::optional<std::string> preset;
  std::optional<std::uint64_t> seed;
};

/// Defaults, then the preset (override > file > baseline), then the file's keys, then the seed override.
RunConfig parse_config(std::string_view text, const Overrides& overrides = {});
RunConfig load_config(const std::filesystem::path& path, const Overrides& overrides = {});
/// Round-trips through parse_config with the preset already applied.
std::string format_config(const RunConfig& cfg);

}  // namespace normseg::app
