#include "normseg/app/commands.hpp"

#include <fstream>
#include <sstream>

#include "normseg/app/workflow.hpp"
#include "normseg/errors.hpp"

namespace normseg::app {

namespace fs = std::filesystem;

namespace {

fs::path out_dir(const CommandOptions& opt, const fs::path& fallback) { return opt.out ? *opt.out : fallback; }

void save_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing", path.string());
  out << text;
}

}  // namespace

int cmd_phantom(const CommandOptions& opt, std::ostream& log) {
  const fs::path dir = out_dir(opt, opt.config.paths.healthy);
  const auto corpus = make_healthy_corpus(opt.config);
  write_healthy_corpus(dir, corpus);
  log << "wrote " << corpus.size() << " healthy cases to " << dir.string() << '\n';
  return kExitOk;
}

int cmd_synth(const CommandOptions& opt, std::ostream& log) {
  const RunConfig& cfg = opt.config;
  const fs::path dir = out_dir(opt, cfg.paths.corpus);
  if (cfg.corpus.pairs == 0) {
    fs::create_directories(dir);
    log << "warning: corpus.pairs = 0, writing an empty corpus\n";
    return kExitOk;
  }
  const auto healthy = read_healthy_corpus(cfg.paths.healthy);
  if (healthy.empty()) throw IoError("no healthy cases (*_ct.vol3) found", cfg.paths.healthy.string());
  std::vector<lung::ThoraxCase> cases;
  for (const auto& h : healthy) cases.push_back(prepare_training_case(h, cfg));
  const auto pairs = synthesize(cases, cfg);
  write_corpus(dir, pairs);
  log << "wrote " << pairs.size() << " training pairs to " << dir.string() << '\n';
  return kExitOk;
}

int cmd_train(const CommandOptions& opt, std::ostream& log) {
  const RunConfig& cfg = opt.config;
  const fs::path dir = out_dir(opt, cfg.paths.models);
  const auto pairs = read_corpus(cfg.paths.corpus);
  if (pairs.empty()) throw IoError("training corpus is empty", cfg.paths.corpus.string());
  std::vector<TrainLogRow> rows;
  const auto models = train_ensemble(pairs, cfg, &rows);
  write_models(dir, models);
  write_train_log(dir / "train_log.csv", rows);
  log << "trained " << models.size() << " models on " << pairs.size() << " pairs into " << dir.string() << '\n';
  return kExitOk;
}

int cmd_testset(const CommandOptions& opt, std::ostream& log) {
  const fs::path dir = out_dir(opt, opt.config.paths.reports / "testset");
  const auto cases = make_held_out(opt.config);
  write_held_out(dir, cases);
  log << "wrote " << cases.size() << " held-out cases to " << dir.string() << '\n';
  return kExitOk;
}

int cmd_infer(const CommandOptions& opt, const fs::path& volume, const fs::path& lung, const std::string& case_id,
              std::ostream& log) {
  const RunConfig& cfg = opt.config;
  const auto models = read_models(cfg.paths.models);
  const Volume3 v = read_volume(volume);
  const Mask3 m = read_mask(lung);
  require_same_dims(v.dims(), m.dims(), "infer");
  const Inference inf = infer_case(models, v, m, cfg);
  const fs::path dir = out_dir(opt, cfg.paths.reports);
  write_inference(dir, case_id, inf, opt.emit_intermediates);
  log << case_id << ": " << inf.seg.final_mask.count() << " lesion voxels predicted with " << models.size()
      << " models\n";
  return kExitOk;
}

int cmd_eval(const CommandOptions& opt, const fs::path& truth, const fs::path& predictions, std::ostream& log) {
  const RunConfig& cfg = opt.config;
  const auto cases = read_held_out(truth);
  if (cases.empty()) throw IoError("no held-out cases (*_thorax.vol3) found", truth.string());
  std::vector<eval::CaseReport> reports, baseline;
  for (const auto& c : cases) {
    const fs::path pred_path = predictions / (c.id + "_pred.vol3");
    auto rep = eval::make_report(c.id, read_mask(pred_path), c.lesion, c.lung);
    const fs::path prob_path = predictions / (c.id + "_healthy_prob.vol3");
    if (fs::exists(prob_path))
      rep.bright = eval::bright_voxel_eval(read_volume(prob_path), c.lesion, c.thorax, c.lung, cfg.tau,
                                           cfg.net.prob_threshold);
    reports.push_back(std::move(rep));
    baseline.push_back(eval::make_report(c.id, mask_and(bright_mask(c.thorax, cfg.tau), c.lung), c.lesion, c.lung));
  }
  const fs::path dir = out_dir(opt, cfg.paths.reports);
  fs::create_directories(dir);
  std::ostringstream cases_csv, base_csv, summary;
  eval::write_case_csv(cases_csv, reports);
  eval::write_case_csv(base_csv, baseline);
  const auto s = eval::aggregate(reports);
  eval::write_summary_csv(summary, s, "prediction");
  save_text(dir / "cases.csv", cases_csv.str());
  save_text(dir / "baseline_cases.csv", base_csv.str());
  save_text(dir / "summary.csv", summary.str());
  save_text(dir / "dice_hist.svg", eval::dice_histogram_svg(reports));
  log << "evaluated " << reports.size() << " cases; mean DSC " << s.dsc.mean.value_or(0.0) << '\n';
  return kExitOk;
}

int cmd_pipeline(const CommandOptions& opt, const std::optional<fs::path>& healthy, std::ostream& log) {
  const RunConfig& cfg = opt.config;
  const fs::path dir = out_dir(opt, cfg.paths.reports);
  fs::create_directories(dir);
  save_text(dir / "config.txt", format_config(cfg));
  std::vector<HealthyInput> given;
  if (healthy) {
    given = read_healthy_corpus(*healthy);
    if (given.empty()) throw IoError("no healthy cases (*_ct.vol3) found", healthy->string());
  }
  const auto result = run_pipeline(cfg, [&](const std::string& s) { log << "[pipeline] " << s << '\n' << std::flush; },
                                   healthy ? &given : nullptr);
  write_models(dir / "models", result.models);
  write_train_log(dir / "models" / "train_log.csv", result.log);
  write_benchmark(dir, result.benchmark, cfg);
  const auto summary = eval::aggregate(result.benchmark.configured(cfg.post.variant));
  log << "mean DSC " << summary.dsc.mean.value_or(0.0) << " (intensity baseline "
      << result.benchmark.intensity_summary.dsc.mean.value_or(0.0) << ") over " << cfg.benchmark.cases
      << " held-out cases\n";
  const auto gates = check_gates(result.benchmark, cfg);
  for (const auto& m : gates.messages) log << "gate failed: " << m << '\n';
  return gates.passed ? kExitOk : kExitGate;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const ParseError*>(&e) ||
      dynamic_cast<const fs::filesystem_error*>(&e))
    return kExitIo;
  return kExitConfig;
}

}  // namespace normseg::app
