#include "normseg/app/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "normseg/errors.hpp"

namespace normseg::app {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string_view> words(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == ',')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t' && s[j] != ',') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

double to_double(std::string_view s) {
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) throw ConfigError("expected a number, got '" + std::string(s) + "'");
  return v;
}

template <typename I>
I to_integer(std::string_view s) {
  I v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size())
    throw ConfigError("expected an integer, got '" + std::string(s) + "'");
  return v;
}

bool to_bool(std::string_view s) {
  if (s == "true" || s == "on" || s == "1") return true;
  if (s == "false" || s == "off" || s == "0") return false;
  throw ConfigError("expected true or false, got '" + std::string(s) + "'");
}

std::string num(double v) {
  char buf[32];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

forge::Range to_range(std::string_view s) {
  const auto w = words(s);
  if (w.size() != 2) throw ConfigError("expected a range 'lo hi', got '" + std::string(s) + "'");
  return {to_double(w[0]), to_double(w[1])};
}

Dims to_dims(std::string_view s) {
  const auto w = words(s);
  if (w.size() == 1) {
    const auto n = to_integer<std::uint32_t>(w[0]);
    return {n, n, n};
  }
  if (w.size() != 3) throw ConfigError("expected dims 'd h w', got '" + std::string(s) + "'");
  return {to_integer<std::uint32_t>(w[0]), to_integer<std::uint32_t>(w[1]), to_integer<std::uint32_t>(w[2])};
}

struct Field {
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

using Registry = std::map<std::string, Field, std::less<>>;

template <typename Access>
void add_double(Registry& r, const std::string& key, Access acc) {
  r[key] = {[acc](RunConfig& c, std::string_view v) { acc(c) = to_double(v); },
            [acc](const RunConfig& c) { return num(acc(const_cast<RunConfig&>(c))); }};
}
template <typename Access>
void add_int(Registry& r, const std::string& key, Access acc) {
  r[key] = {[acc](RunConfig& c, std::string_view v) { acc(c) = to_integer<int>(v); },
            [acc](const RunConfig& c) { return std::to_string(acc(const_cast<RunConfig&>(c))); }};
}
template <typename Access>
void add_bool(Registry& r, const std::string& key, Access acc) {
  r[key] = {[acc](RunConfig& c, std::string_view v) { acc(c) = to_bool(v); },
            [acc](const RunConfig& c) { return std::string(acc(const_cast<RunConfig&>(c)) ? "true" : "false"); }};
}
template <typename Access>
void add_range(Registry& r, const std::string& key, Access acc) {
  r[key] = {[acc](RunConfig& c, std::string_view v) { acc(c) = to_range(v); },
            [acc](const RunConfig& c) {
              const forge::Range& x = acc(const_cast<RunConfig&>(c));
              return num(x.lo) + " " + num(x.hi);
            }};
}
template <typename Access>
void add_dims(Registry& r, const std::string& key, Access acc) {
  r[key] = {[acc](RunConfig& c, std::string_view v) { acc(c) = to_dims(v); },
            [acc](const RunConfig& c) {
              const Dims& d = acc(const_cast<RunConfig&>(c));
              return std::to_string(d.d) + " " + std::to_string(d.h) + " " + std::to_string(d.w);
            }};
}
template <typename Access>
void add_optional(Registry& r, const std::string& key, Access acc) {
  r[key] = {[acc](RunConfig& c, std::string_view v) {
              if (v == "none")
                acc(c).reset();
              else
                acc(c) = to_double(v);
            },
            [acc](const RunConfig& c) {
              const std::optional<double>& o = acc(const_cast<RunConfig&>(c));
              return o ? num(*o) : std::string("none");
            }};
}
template <typename Access>
void add_path(Registry& r, const std::string& key, Access acc) {
  r[key] = {[acc](RunConfig& c, std::string_view v) { acc(c) = std::filesystem::path(std::string(v)); },
            [acc](const RunConfig& c) { return acc(const_cast<RunConfig&>(c)).string(); }};
}

template <typename Select>
void add_generator(Registry& r, const std::string& s, Select g) {
  add_range(r, s + "small_count", [g](RunConfig& c) -> auto& { return g(c).small_count; });
  add_range(r, s + "medium_count", [g](RunConfig& c) -> auto& { return g(c).medium_count; });
  add_range(r, s + "small_axes", [g](RunConfig& c) -> auto& { return g(c).small_axes; });
  add_range(r, s + "medium_axes", [g](RunConfig& c) -> auto& { return g(c).medium_axes; });
  add_range(r, s + "large_axes", [g](RunConfig& c) -> auto& { return g(c).large_axes; });
  add_double(r, s + "p_large_base", [g](RunConfig& c) -> auto& { return g(c).p_large_base; });
  add_range(r, s + "sigma_a", [g](RunConfig& c) -> auto& { return g(c).sigma_a; });
  add_range(r, s + "sigma_b_narrow", [g](RunConfig& c) -> auto& { return g(c).sigma_b.narrow; });
  add_range(r, s + "sigma_b_wide", [g](RunConfig& c) -> auto& { return g(c).sigma_b.wide; });
  add_double(r, s + "sigma_b_p_narrow", [g](RunConfig& c) -> auto& { return g(c).sigma_b.p_narrow; });
  add_range(r, s + "a_bound", [g](RunConfig& c) -> auto& { return g(c).a_bound; });
  add_double(r, s + "a_min_gap", [g](RunConfig& c) -> auto& { return g(c).a_min_gap; });
  add_range(r, s + "mu0", [g](RunConfig& c) -> auto& { return g(c).mu0; });
  add_double(r, s + "mean_threshold", [g](RunConfig& c) -> auto& { return g(c).mean_threshold; });
  add_int(r, s + "elastic_grid_spacing", [g](RunConfig& c) -> auto& { return g(c).elastic_grid_spacing; });
  add_double(r, s + "elastic_magnitude", [g](RunConfig& c) -> auto& { return g(c).elastic_magnitude; });
  add_bool(r, s + "deform", [g](RunConfig& c) -> auto& { return g(c).deform_enabled; });
  add_bool(r, s + "rotate", [g](RunConfig& c) -> auto& { return g(c).rotate_enabled; });
  add_bool(r, s + "fixed_shapes", [g](RunConfig& c) -> auto& { return g(c).fixed_shapes; });
  add_int(r, s + "fixed_shape_count", [g](RunConfig& c) -> auto& { return g(c).fixed_shape_count; });
  add_double(r, s + "fixed_shape_radius", [g](RunConfig& c) -> auto& { return g(c).fixed_shape_radius; });
  add_optional(r, s + "fixed_a", [g](RunConfig& c) -> auto& { return g(c).fixed_a; });
  add_bool(r, s + "fixed_texture", [g](RunConfig& c) -> auto& { return g(c).fixed_texture; });
  add_double(r, s + "fixed_sigma_b", [g](RunConfig& c) -> auto& { return g(c).fixed_sigma_b; });
  add_double(r, s + "fixed_mu0", [g](RunConfig& c) -> auto& { return g(c).fixed_mu0; });
}

const Registry& registry() {
  static const Registry reg = [] {
    Registry r;
    r["schema"] = {[](RunConfig& c, std::string_view v) { c.schema = to_integer<int>(v); },
                   [](const RunConfig& c) { return std::to_string(c.schema); }};
    r["preset"] = {[](RunConfig&, std::string_view) {}, [](const RunConfig& c) { return c.preset; }};
    r["seed"] = {[](RunConfig& c, std::string_view v) { c.master_seed = to_integer<std::uint64_t>(v); },
                 [](const RunConfig& c) { return std::to_string(c.master_seed); }};
    add_double(r, "tau", [](RunConfig& c) -> auto& { return c.tau; });
    r["gt_mode"] = {[](RunConfig& c, std::string_view v) { c.gt_mode = forge::parse_gt_mode(std::string(v)); },
                    [](const RunConfig& c) { return forge::to_string(c.gt_mode); }};
    add_bool(r, "edge_removal", [](RunConfig& c) -> auto& { return c.edge_removal; });

    add_path(r, "paths.healthy", [](RunConfig& c) -> auto& { return c.paths.healthy; });
    add_path(r, "paths.corpus", [](RunConfig& c) -> auto& { return c.paths.corpus; });
    add_path(r, "paths.models", [](RunConfig& c) -> auto& { return c.paths.models; });
    add_path(r, "paths.reports", [](RunConfig& c) -> auto& { return c.paths.reports; });

    add_int(r, "corpus.healthy_cases", [](RunConfig& c) -> auto& { return c.corpus.healthy_cases; });
    add_int(r, "corpus.pairs", [](RunConfig& c) -> auto& { return c.corpus.pairs; });
    add_double(r, "corpus.reference_scale", [](RunConfig& c) -> auto& { return c.corpus.reference_scale; });

    const auto ph = [](RunConfig& c) -> phantom::PhantomConfig& { return c.corpus.phantom; };
    add_dims(r, "phantom.dims", [ph](RunConfig& c) -> auto& { return ph(c).dims; });
    add_double(r, "phantom.air_hu", [ph](RunConfig& c) -> auto& { return ph(c).air_hu; });
    add_double(r, "phantom.soft_tissue_hu", [ph](RunConfig& c) -> auto& { return ph(c).soft_tissue_hu; });
    add_double(r, "phantom.parenchyma_hu_lo", [ph](RunConfig& c) -> auto& { return ph(c).parenchyma_hu_lo; });
    add_double(r, "phantom.parenchyma_hu_hi", [ph](RunConfig& c) -> auto& { return ph(c).parenchyma_hu_hi; });
    add_double(r, "phantom.noise_hu", [ph](RunConfig& c) -> auto& { return ph(c).noise_hu; });
    add_double(r, "phantom.vessel_hu", [ph](RunConfig& c) -> auto& { return ph(c).vessel_hu; });
    add_double(r, "phantom.airway_wall_hu", [ph](RunConfig& c) -> auto& { return ph(c).airway_wall_hu; });
    add_int(r, "phantom.vessel_roots", [ph](RunConfig& c) -> auto& { return ph(c).vessel_roots; });
    add_double(r, "phantom.root_radius", [ph](RunConfig& c) -> auto& { return ph(c).root_radius; });
    add_double(r, "phantom.min_radius", [ph](RunConfig& c) -> auto& { return ph(c).min_radius; });
    add_int(r, "phantom.max_generations", [ph](RunConfig& c) -> auto& { return ph(c).max_generations; });
    add_int(r, "phantom.airway_roots", [ph](RunConfig& c) -> auto& { return ph(c).airway_roots; });
    add_int(r, "phantom.fringe_patches", [ph](RunConfig& c) -> auto& { return ph(c).fringe_patches; });
    add_double(r, "phantom.fringe_radius", [ph](RunConfig& c) -> auto& { return ph(c).fringe_radius; });

    add_generator(r, "generator.", [](RunConfig& c) -> forge::GeneratorConfig& { return c.generator; });
    add_generator(r, "heldout.", [](RunConfig& c) -> forge::GeneratorConfig& { return c.benchmark.generator; });

    add_int(r, "net.levels", [](RunConfig& c) -> auto& { return c.net.levels; });
    add_int(r, "net.base_channels", [](RunConfig& c) -> auto& { return c.net.base_channels; });
    add_int(r, "net.convs_per_level", [](RunConfig& c) -> auto& { return c.net.convs_per_level; });
    add_dims(r, "net.patch", [](RunConfig& c) -> auto& { return c.net.patch; });
    add_dims(r, "net.tile", [](RunConfig& c) -> auto& { return c.net.tile; });
    add_double(r, "net.lr", [](RunConfig& c) -> auto& { return c.net.lr; });
    add_int(r, "net.batch_size", [](RunConfig& c) -> auto& { return c.net.batch_size; });
    add_int(r, "net.iterations", [](RunConfig& c) -> auto& { return c.net.iterations; });
    add_double(r, "net.dice_weight", [](RunConfig& c) -> auto& { return c.net.dice_weight; });
    add_double(r, "net.ce_weight", [](RunConfig& c) -> auto& { return c.net.ce_weight; });
    add_double(r, "net.prob_threshold", [](RunConfig& c) -> auto& { return c.net.prob_threshold; });
    add_int(r, "net.ensemble_size", [](RunConfig& c) -> auto& { return c.net.ensemble_size; });
    add_int(r, "net.vote_quorum", [](RunConfig& c) -> auto& { return c.net.vote_quorum; });

    add_int(r, "post.k_d", [](RunConfig& c) -> auto& { return c.post.k_d; });
    add_int(r, "post.k_f", [](RunConfig& c) -> auto& { return c.post.k_f; });
    add_double(r, "post.t_d", [](RunConfig& c) -> auto& { return c.post.t_d; });
    add_double(r, "post.t_f", [](RunConfig& c) -> auto& { return c.post.t_f; });
    add_int(r, "post.dilation_radius", [](RunConfig& c) -> auto& { return c.post.dilation_radius; });
    add_int(r, "post.dilation_iterations", [](RunConfig& c) -> auto& { return c.post.dilation_iterations; });
    r["post.variant"] = {[](RunConfig& c, std::string_view v) { c.post.variant = post::parse_variant(v); },
                         [](const RunConfig& c) { return post::to_string(c.post.variant); }};
    r["post.box_mode"] = {[](RunConfig& c, std::string_view v) {
                            if (v == "cube3d")
                              c.post.box_mode = morph::BoxMode::kCube3D;
                            else if (v == "slice2d")
                              c.post.box_mode = morph::BoxMode::kPerSlice2D;
                            else
                              throw ConfigError("box_mode must be cube3d or slice2d");
                          },
                          [](const RunConfig& c) {
                            return std::string(c.post.box_mode == morph::BoxMode::kCube3D ? "cube3d" : "slice2d");
                          }};

    add_int(r, "benchmark.cases", [](RunConfig& c) -> auto& { return c.benchmark.cases; });
    add_double(r, "benchmark.lambda", [](RunConfig& c) -> auto& { return c.benchmark.lambda; });
    add_optional(r, "benchmark.dsc_min", [](RunConfig& c) -> auto& { return c.benchmark.dsc_min; });
    add_optional(r, "benchmark.margin_min", [](RunConfig& c) -> auto& { return c.benchmark.margin_min; });
    return r;
  }();
  return reg;
}

struct Entry {
  std::string key;
  std::string value;
  int line;
};

std::vector<Entry> tokenize(std::string_view text) {
  std::vector<Entry> out;
  std::string section;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(line_no) + ": malformed section header");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = std::string(trim(line.substr(0, eq)));
    if (key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key");
    out.push_back({section.empty() ? key : section + "." + key, std::string(trim(line.substr(eq + 1))), line_no});
  }
  return out;
}

void scale_lower(forge::Range& r, double fraction) { r.lo += (r.hi - r.lo) * fraction; }
void scale_upper(forge::Range& r, double fraction) { r.hi = r.lo + (r.hi - r.lo) * fraction; }

}  // namespace

double tau_for_hu(double hu) { return (hu + 800.0) / 900.0; }

RunConfig default_config() {
  RunConfig c;
  c.generator.small_axes = {2.0, 5.0};
  c.generator.medium_axes = {5.0, 12.0};
  c.generator.large_axes = {12.0, 20.0};

  forge::GeneratorConfig& h = c.benchmark.generator;
  h = c.generator;
  h.small_count = {0.0, 0.0};
  h.medium_axes = {10.0, 18.0};
  h.large_axes = {18.0, 27.0};
  h.a_bound = {0.0, 0.35};
  h.mu0 = {0.35, 0.6};

  c.net.levels = 3;
  c.net.base_channels = 8;
  c.net.convs_per_level = 1;
  c.net.patch = {24, 24, 24};
  c.net.tile = {64, 64, 64};
  c.net.lr = 2e-3;
  c.net.batch_size = 2;
  c.net.iterations = 1000;

  c.post.dilation_iterations = 1;
  return c;
}

std::vector<std::string> preset_names() {
  std::vector<std::string> names{"baseline", "fixed_G", "fixed_a", "fixed_B"};
  for (const char* v : {"i", "ii", "iii", "iv", "v", "vi", "vii", "viii", "ix", "x", "xi", "xii", "xiii", "xiv"})
    names.push_back(v);
  for (const char* v : {"gt_regions", "gt_lesions", "no_edge_removal", "no_growing", "g_as_prediction", "T-700",
                        "T-600", "T-500", "T-400", "T-300"})
    names.push_back(v);
  return names;
}

void apply_preset(RunConfig& cfg, std::string_view name) {
  forge::GeneratorConfig& g = cfg.generator;
  const auto roman = [&](std::string_view v) {
    // Generator variants after the first run without elastic deformation.
    g.deform_enabled = false;
    if (v == "i") return;
    if (v == "ii") {
      g.rotate_enabled = false;
    } else if (v == "iii") {
      g.small_count = g.medium_count = {3.0, 8.0};
      g.p_large_base = 0.1;
    } else if (v == "iv") {
      g.small_count = g.medium_count = {7.0, 12.0};
      g.p_large_base = 0.3;
    } else if (v == "v") {
      scale_lower(g.small_axes, 3.0 / 7.0);
      scale_upper(g.large_axes, 0.5);
    } else if (v == "vi") {
      g.sigma_a = {2.0, 18.0};
    } else if (v == "vii") {
      g.sigma_a = {4.0, 12.0};
    } else if (v == "viii") {
      g.a_bound = {0.05, 0.25};
      g.a_min_gap = 0.15;
    } else if (v == "ix") {
      g.a_bound = {0.0, 0.35};
    } else if (v == "x") {
      g.sigma_b.p_narrow = 0.5;
    } else if (v == "xi") {
      g.sigma_b.narrow = {0.6, 2.0};
    } else if (v == "xii") {
      g.sigma_b.wide = {2.0, 4.0};
    } else if (v == "xiii") {
      g.mu0 = {0.45, 0.75};
    } else if (v == "xiv") {
      g.mu0 = {0.35, 0.85};
    }
  };

  if (name == "baseline") {
  } else if (name == "fixed_G") {
    g.fixed_shapes = true;
  } else if (name == "fixed_a") {
    g.fixed_a = 0.2;
  } else if (name == "fixed_B") {
    g.fixed_texture = true;
  } else if (name == "gt_regions") {
    cfg.gt_mode = forge::GtMode::kRegions;
  } else if (name == "gt_lesions") {
    cfg.gt_mode = forge::GtMode::kLesions;
  } else if (name == "no_edge_removal") {
    cfg.edge_removal = false;
  } else if (name == "no_growing") {
    cfg.post.variant = post::Variant::kNoGrowing;
  } else if (name == "g_as_prediction") {
    cfg.post.variant = post::Variant::kGAsPrediction;
  } else if (name.starts_with("T")) {
    static const std::map<std::string, double, std::less<>> sweep{
        {"T-700", -700.0}, {"T-600", -600.0}, {"T-500", -500.0}, {"T-400", -400.0}, {"T-300", -300.0}};
    const auto it = sweep.find(name);
    if (it == sweep.end()) throw ConfigError("unknown preset '" + std::string(name) + "'");
    cfg.tau = tau_for_hu(it->second);
  } else {
    static const std::vector<std::string_view> numerals{"i",    "ii", "iii", "iv",  "v",   "vi",  "vii",
                                                        "viii", "ix", "x",   "xi",  "xii", "xiii", "xiv"};
    if (std::find(numerals.begin(), numerals.end(), name) == numerals.end())
      throw ConfigError("unknown preset '" + std::string(name) + "'");
    roman(name);
  }
  cfg.preset = std::string(name);
}

void RunConfig::validate() const {
  if (schema != kSchemaVersion)
    throw ConfigError("unsupported config schema " + std::to_string(schema) + " (expected " +
                      std::to_string(kSchemaVersion) + ")");
  if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("tau must lie in (0,1)");
  if (corpus.healthy_cases < 0 || corpus.pairs < 0) throw ConfigError("corpus sizes must be >= 0");
  if (!(corpus.reference_scale > 0.0)) throw ConfigError("corpus.reference_scale must be > 0");
  if (benchmark.cases < 0) throw ConfigError("benchmark.cases must be >= 0");
  if (!(benchmark.lambda > 0.0)) throw ConfigError("benchmark.lambda must be > 0");
  generator.validate();
  benchmark.generator.validate();
  net.validate();
  post.validate();
}

RunConfig parse_config(std::string_view text, const Overrides& overrides) {
  const auto entries = tokenize(text);
  const Registry& reg = registry();
  std::string preset = "baseline";
  for (const auto& e : entries)
    if (e.key == "preset") preset = e.value;
  if (overrides.preset) preset = *overrides.preset;

  RunConfig cfg = default_config();
  apply_preset(cfg, preset);
  for (const auto& e : entries) {
    const auto it = reg.find(e.key);
    if (it == reg.end()) throw ConfigError("line " + std::to_string(e.line) + ": unknown key '" + e.key + "'");
    try {
      it->second.set(cfg, e.value);
    } catch (const ConfigError& err) {
      throw ConfigError("line " + std::to_string(e.line) + " (" + e.key + "): " + err.what());
    }
  }
  if (overrides.seed) cfg.master_seed = *overrides.seed;
  cfg.post.tau = cfg.tau;
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path, const Overrides& overrides) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config", path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), overrides);
}

std::string format_config(const RunConfig& cfg) {
  std::ostringstream os;
  std::string section;
  for (const auto& [key, field] : registry()) {
    const auto dot = key.find('.');
    const std::string sec = dot == std::string::npos ? "" : key.substr(0, dot);
    if (sec.empty()) os << key << " = " << field.get(cfg) << '\n';
  }
  for (const auto& [key, field] : registry()) {
    const auto dot = key.find('.');
    if (dot == std::string::npos) continue;
    const std::string sec = key.substr(0, dot);
    if (sec != section) {
      os << "\n[" << sec << "]\n";
      section = sec;
    }
    os << key.substr(dot + 1) << " = " << field.get(cfg) << '\n';
  }
  return os.str();
}

}  // namespace normseg::app
