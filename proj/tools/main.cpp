#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "normseg/app/commands.hpp"
#include "normseg/app/config.hpp"

namespace fs = std::filesystem;
using namespace normseg::app;

int main(int argc, char** argv) {
  CLI::App app{"normseg: label-free lesion segmentation workbench"};
  app.require_subcommand(1);

  std::optional<std::string> config_path, preset, out;
  std::optional<std::uint64_t> seed;
  bool intermediates = false;
  const auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "run configuration file");
    sub->add_option("--seed", seed, "master seed override");
    sub->add_option("--preset", preset, "ablation preset overlay");
    sub->add_option("--out", out, "output directory");
  };

  auto* phantom = app.add_subcommand("phantom", "write procedural healthy chest phantoms");
  auto* synth = app.add_subcommand("synth", "synthesize training pairs from the healthy corpus");
  auto* train = app.add_subcommand("train", "train the model ensemble on a corpus");
  auto* testset = app.add_subcommand("testset", "write held-out benchmark cases");
  auto* infer = app.add_subcommand("infer", "segment lesions in one volume");
  auto* evaluate = app.add_subcommand("eval", "score predictions against held-out cases");
  auto* pipeline = app.add_subcommand("pipeline", "run phantoms -> synth -> train -> benchmark end to end");
  auto* presets = app.add_subcommand("presets", "list preset names");
  for (auto* sub : {phantom, synth, train, testset, infer, evaluate, pipeline}) common(sub);

  std::string volume, lung, case_id = "case";
  infer->add_option("volume", volume, "CT volume (VOL3, HU or windowed)")->required();
  infer->add_option("lung", lung, "lung mask (VOL3)")->required();
  infer->add_option("--id", case_id, "case id used in output names");
  infer->add_flag("--emit-intermediates", intermediates, "also write masks d, e, f, g");

  std::string truth, predictions;
  evaluate->add_option("truth", truth, "held-out case directory")->required();
  evaluate->add_option("predictions", predictions, "directory with <id>_pred.vol3 files")->required();

  std::optional<std::string> healthy;
  pipeline->add_option("--healthy", healthy, "healthy corpus directory (default: generate phantoms)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  if (presets->parsed()) {
    for (const auto& name : preset_names()) std::cout << name << '\n';
    return kExitOk;
  }

  try {
    const Overrides ov{preset, seed};
    CommandOptions opt;
    opt.config = config_path ? load_config(*config_path, ov) : parse_config("", ov);
    if (out) opt.out = fs::path(*out);
    opt.emit_intermediates = intermediates;
    if (phantom->parsed()) return cmd_phantom(opt, std::cerr);
    if (synth->parsed()) return cmd_synth(opt, std::cerr);
    if (train->parsed()) return cmd_train(opt, std::cerr);
    if (testset->parsed()) return cmd_testset(opt, std::cerr);
    if (infer->parsed()) return cmd_infer(opt, volume, lung, case_id, std::cerr);
    if (evaluate->parsed()) return cmd_eval(opt, truth, predictions, std::cerr);
    if (pipeline->parsed())
      return cmd_pipeline(opt, healthy ? std::optional<fs::path>(*healthy) : std::nullopt, std::cerr);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return kExitConfig;
}
