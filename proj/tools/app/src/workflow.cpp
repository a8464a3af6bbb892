#include "normseg/app/workflow.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "normseg/errors.hpp"
#include "normseg/phantom.hpp"
#include "normseg/rng.hpp"

namespace normseg::app {

namespace fs = std::filesystem;

namespace {

// Stream ids under the master seed.
constexpr std::uint64_t kHealthyStream = 10;
constexpr std::uint64_t kPairStream = 20;
constexpr std::uint64_t kModelStream = 30;
constexpr std::uint64_t kHeldOutPhantomStream = 40;
constexpr std::uint64_t kHeldOutLesionStream = 41;

template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(worker_count()), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::string indexed(const char* stem, std::size_t i, int width = 3) {
  std::string digits = std::to_string(i);
  if (digits.size() < static_cast<std::size_t>(width)) digits.insert(0, width - digits.size(), '0');
  return std::string(stem) + digits;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory: " + ec.message(), dir.string());
}

/// Sorted ids of files named `<id><suffix>` in `dir`.
std::vector<std::string> ids_with_suffix(const fs::path& dir, const std::string& suffix) {
  if (!fs::is_directory(dir)) throw IoError("directory not found", dir.string());
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.size() > suffix.size() && name.ends_with(suffix)) ids.push_back(name.substr(0, name.size() - suffix.size()));
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing", path.string());
  out << text;
  if (!out) throw IoError("write failed", path.string());
}

}  // namespace

int worker_count() {
  if (const char* v = std::getenv("NORMSEG_WORKERS")) {
    const int n = std::atoi(v);
    if (n >= 1) return std::min(n, 64);
  }
  return 1;
}

std::vector<HealthyInput> make_healthy_corpus(const RunConfig& cfg) {
  std::vector<HealthyInput> out(static_cast<std::size_t>(cfg.corpus.healthy_cases));
  parallel_for(out.size(), [&](std::size_t i) {
    auto hc = phantom::make_healthy_case(cfg.corpus.phantom, derive_seed(cfg.master_seed, {kHealthyStream, i}));
    out[i] = {indexed("case_", i), std::move(hc.raw_hu), std::move(hc.segmented)};
  });
  return out;
}

void write_healthy_corpus(const fs::path& dir, const std::vector<HealthyInput>& corpus) {
  ensure_dir(dir);
  for (const auto& c : corpus) {
    write_volume(dir / (c.id + "_ct.vol3"), c.raw_hu);
    write_mask(dir / (c.id + "_lung.vol3"), c.segmented);
  }
}

std::vector<HealthyInput> read_healthy_corpus(const fs::path& dir) {
  std::vector<HealthyInput> out;
  for (const auto& id : ids_with_suffix(dir, "_ct.vol3"))
    out.push_back({id, read_volume(dir / (id + "_ct.vol3")), read_mask(dir / (id + "_lung.vol3"))});
  return out;
}

lung::ThoraxCase prepare_training_case(const HealthyInput& in, const RunConfig& cfg) {
  const Volume3 windowed = in.raw_hu.windowed() ? in.raw_hu : hu_window(in.raw_hu);
  if (!cfg.edge_removal) return lung::prepare_case(windowed, in.segmented);
  lung::EdgeRemovalConfig er;
  er.tau = cfg.tau;
  return lung::remove_erroneous_edges(windowed, in.segmented, er);
}

std::vector<forge::TrainPair> synthesize(const std::vector<lung::ThoraxCase>& cases, const RunConfig& cfg) {
  const auto n = static_cast<std::size_t>(cfg.corpus.pairs);
  if (n == 0) return {};
  if (cases.empty()) throw ConfigError("synthesis needs at least one healthy case");
  double largest = 0.0;
  for (const auto& c : cases) largest = std::max(largest, static_cast<double>(c.clean_lung_mask.count()));
  forge::GeneratorConfig gen = cfg.generator;
  gen.ref_mask_volume = std::max(1.0, cfg.corpus.reference_scale * largest);
  std::vector<forge::TrainPair> pairs(n);
  parallel_for(n, [&](std::size_t j) {
    pairs[j] = forge::generate_pair(cases[j % cases.size()], gen, cfg.tau, cfg.gt_mode,
                                    derive_seed(cfg.master_seed, {kPairStream, j}));
  });
  return pairs;
}

void write_corpus(const fs::path& dir, const std::vector<forge::TrainPair>& pairs) {
  ensure_dir(dir);
  for (std::size_t j = 0; j < pairs.size(); ++j) {
    const std::string id = indexed("pair_", j);
    write_volume(dir / (id + "_input.vol3"), pairs[j].input);
    write_mask(dir / (id + "_gt.vol3"), pairs[j].gt);
    write_mask(dir / (id + "_lung.vol3"), pairs[j].lung);
    write_text(dir / (id + ".txt"), forge::describe(pairs[j], id));
  }
}

std::vector<forge::TrainPair> read_corpus(const fs::path& dir) {
  std::vector<forge::TrainPair> pairs;
  for (const auto& id : ids_with_suffix(dir, "_input.vol3")) {
    forge::TrainPair p;
    p.input = read_volume(dir / (id + "_input.vol3"));
    p.gt = read_mask(dir / (id + "_gt.vol3"));
    p.lung = read_mask(dir / (id + "_lung.vol3"));
    require_same_dims(p.input.dims(), p.gt.dims(), "read_corpus");
    require_same_dims(p.input.dims(), p.lung.dims(), "read_corpus");
    p.lesion_shape = Mask3(p.input.dims());
    pairs.push_back(std::move(p));
  }
  return pairs;
}

std::vector<net::TinyNet<float>> train_ensemble(const std::vector<forge::TrainPair>& pairs, const RunConfig& cfg,
                                                std::vector<TrainLogRow>* log) {
  const auto n = static_cast<std::size_t>(cfg.net.ensemble_size);
  std::vector<net::TinyNet<float>> models(n);
  std::vector<std::vector<TrainLogRow>> logs(n);
  parallel_for(n, [&](std::size_t m) {
    models[m] = net::train(pairs, cfg.net, derive_seed(cfg.master_seed, {kModelStream, m}), [&](int it, double loss) {
      logs[m].push_back({static_cast<int>(m), it, loss});
    });
  });
  if (log)
    for (const auto& l : logs) log->insert(log->end(), l.begin(), l.end());
  return models;
}

void write_models(const fs::path& dir, const std::vector<net::TinyNet<float>>& models) {
  ensure_dir(dir);
  for (std::size_t m = 0; m < models.size(); ++m) net::save_model(dir / (indexed("model_", m, 2) + ".tnet"), models[m]);
}

std::vector<net::TinyNet<float>> read_models(const fs::path& dir) {
  std::vector<net::TinyNet<float>> models;
  for (const auto& id : ids_with_suffix(dir, ".tnet")) models.push_back(net::load_model(dir / (id + ".tnet")));
  if (models.empty()) throw IoError("no model files (*.tnet) found", dir.string());
  return models;
}

void write_train_log(const fs::path& path, const std::vector<TrainLogRow>& log) {
  std::ostringstream os;
  os << "model,iteration,loss\n";
  os.precision(9);
  for (const auto& r : log) os << r.model << ',' << r.iteration << ',' << r.loss << '\n';
  write_text(path, os.str());
}

std::vector<HeldOutCase> make_held_out(const RunConfig& cfg) {
  std::vector<HeldOutCase> out(static_cast<std::size_t>(cfg.benchmark.cases));
  parallel_for(out.size(), [&](std::size_t i) {
    auto hc =
        phantom::make_healthy_case(cfg.corpus.phantom, derive_seed(cfg.master_seed, {kHeldOutPhantomStream, i}));
    const lung::ThoraxCase tc = lung::prepare_case(hu_window(hc.raw_hu), hc.lung);
    forge::GeneratorConfig gen = cfg.benchmark.generator;
    gen.ref_mask_volume = std::max(1.0, static_cast<double>(hc.lung.count()) / cfg.benchmark.lambda);
    forge::TrainPair p = forge::generate_pair(tc, gen, cfg.tau, forge::GtMode::kLesions,
                                              derive_seed(cfg.master_seed, {kHeldOutLesionStream, i}));
    out[i] = {indexed("test_", i), apply_mask(p.input, p.lung), p.lung, mask_and(p.lesion_shape, p.lung)};
  });
  return out;
}

void write_held_out(const fs::path& dir, const std::vector<HeldOutCase>& cases) {
  ensure_dir(dir);
  for (const auto& c : cases) {
    write_volume(dir / (c.id + "_thorax.vol3"), c.thorax);
    write_mask(dir / (c.id + "_lung.vol3"), c.lung);
    write_mask(dir / (c.id + "_lesion.vol3"), c.lesion);
  }
}

std::vector<HeldOutCase> read_held_out(const fs::path& dir) {
  std::vector<HeldOutCase> out;
  for (const auto& id : ids_with_suffix(dir, "_thorax.vol3"))
    out.push_back({id, read_volume(dir / (id + "_thorax.vol3")), read_mask(dir / (id + "_lung.vol3")),
                   read_mask(dir / (id + "_lesion.vol3"))});
  return out;
}

Inference infer_case(const std::vector<net::TinyNet<float>>& models, const Volume3& thorax, const Mask3& lung,
                     const RunConfig& cfg) {
  if (models.empty()) throw ConfigError("inference needs at least one model");
  const Volume3 input = apply_mask(thorax.windowed() ? thorax : hu_window(thorax), lung);
  std::vector<double> sum(input.size(), 0.0);
  std::vector<Mask3> healthy;
  for (const auto& m : models) {
    const Volume3 prob = net::predict_probability(m, input, lung);
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += prob[i];
    healthy.push_back(net::healthy_from_probability(prob, lung, cfg.net.prob_threshold));
  }
  std::vector<float> mean(sum.size());
  for (std::size_t i = 0; i < sum.size(); ++i) mean[i] = static_cast<float>(sum[i] / static_cast<double>(models.size()));
  const int quorum = std::min(cfg.net.vote_quorum, static_cast<int>(models.size()));
  Inference inf{Volume3(input.dims(), input.spacing(), std::move(mean), true), net::ensemble_vote(healthy, quorum), {}};
  inf.seg = post::segment_detailed(input, lung, inf.voted, cfg.post);
  return inf;
}

void write_inference(const fs::path& dir, const std::string& id, const Inference& inf, bool intermediates) {
  ensure_dir(dir);
  write_volume(dir / (id + "_healthy_prob.vol3"), inf.healthy_prob);
  write_mask(dir / (id + "_healthy.vol3"), inf.voted);
  write_mask(dir / (id + "_pred.vol3"), inf.seg.final_mask);
  if (!intermediates) return;
  write_mask(dir / (id + "_d.vol3"), inf.seg.d);
  write_mask(dir / (id + "_e.vol3"), inf.seg.e);
  write_mask(dir / (id + "_f.vol3"), inf.seg.f);
  write_mask(dir / (id + "_g.vol3"), inf.seg.g);
}

const std::vector<eval::CaseReport>& BenchmarkResult::configured(post::Variant v) const {
  switch (v) {
    case post::Variant::kNoGrowing:
      return no_growing;
    case post::Variant::kGAsPrediction:
      return g_as_prediction;
    case post::Variant::kFull:
      break;
  }
  return full;
}

BenchmarkResult run_benchmark(const std::vector<net::TinyNet<float>>& models, const std::vector<HeldOutCase>& cases,
                              const RunConfig& cfg) {
  BenchmarkResult r;
  const std::size_t n = cases.size();
  r.full.resize(n);
  r.no_growing.resize(n);
  r.g_as_prediction.resize(n);
  r.intensity.resize(n);
  parallel_for(n, [&](std::size_t i) {
    const HeldOutCase& c = cases[i];
    const Inference inf = infer_case(models, c.thorax, c.lung, cfg);
    const auto variant_mask = [&](post::Variant v) {
      post::PostprocessConfig pc = cfg.post;
      pc.variant = v;
      return mask_and(post::finalize(inf.seg.e, inf.seg.g, pc), c.lung);
    };
    const auto bright = eval::bright_voxel_eval(inf.healthy_prob, c.lesion, c.thorax, c.lung, cfg.tau,
                                                cfg.net.prob_threshold);
    r.full[i] = eval::make_report(c.id, variant_mask(post::Variant::kFull), c.lesion, c.lung);
    r.no_growing[i] = eval::make_report(c.id, variant_mask(post::Variant::kNoGrowing), c.lesion, c.lung);
    r.g_as_prediction[i] = eval::make_report(c.id, variant_mask(post::Variant::kGAsPrediction), c.lesion, c.lung);
    for (auto* rep : {&r.full[i], &r.no_growing[i], &r.g_as_prediction[i]}) rep->bright = bright;
    r.intensity[i] = eval::make_report(c.id, mask_and(bright_mask(c.thorax, cfg.tau), c.lung), c.lesion, c.lung);
  });
  r.full_summary = eval::aggregate(r.full);
  r.no_growing_summary = eval::aggregate(r.no_growing);
  r.g_summary = eval::aggregate(r.g_as_prediction);
  r.intensity_summary = eval::aggregate(r.intensity);
  return r;
}

void write_benchmark(const fs::path& dir, const BenchmarkResult& result, const RunConfig& cfg) {
  ensure_dir(dir);
  std::ostringstream cases, baseline, summary;
  eval::write_case_csv(cases, result.configured(cfg.post.variant));
  eval::write_case_csv(baseline, result.intensity);
  eval::write_summary_csv(summary, result.full_summary, "full");
  std::ostringstream more;
  eval::write_summary_csv(more, result.no_growing_summary, "no_growing");
  eval::write_summary_csv(more, result.g_summary, "g_as_prediction");
  eval::write_summary_csv(more, result.intensity_summary, "intensity");
  // Single header for the combined table.
  std::string rest = more.str();
  std::string merged;
  std::istringstream lines(rest);
  for (std::string line; std::getline(lines, line);)
    if (!line.starts_with("label,")) merged += line + '\n';
  write_text(dir / "cases.csv", cases.str());
  write_text(dir / "baseline_cases.csv", baseline.str());
  write_text(dir / "summary.csv", summary.str() + merged);
  write_text(dir / "dice_hist.svg", eval::dice_histogram_svg(result.configured(cfg.post.variant)));
}

GateOutcome check_gates(const BenchmarkResult& result, const RunConfig& cfg) {
  GateOutcome g;
  const auto summary = eval::aggregate(result.configured(cfg.post.variant));
  const double dsc = summary.dsc.mean.value_or(0.0);
  const double base = result.intensity_summary.dsc.mean.value_or(0.0);
  if (cfg.benchmark.dsc_min && !(dsc >= *cfg.benchmark.dsc_min)) {
    g.passed = false;
    g.messages.push_back("mean DSC " + std::to_string(dsc) + " below dsc_min " + std::to_string(*cfg.benchmark.dsc_min));
  }
  if (cfg.benchmark.margin_min && !(dsc - base >= *cfg.benchmark.margin_min)) {
    g.passed = false;
    g.messages.push_back("margin over intensity baseline " + std::to_string(dsc - base) + " below margin_min " +
                         std::to_string(*cfg.benchmark.margin_min));
  }
  return g;
}

PipelineResult run_pipeline(const RunConfig& cfg, const Progress& progress, const std::vector<HealthyInput>* healthy) {
  const auto note = [&](const std::string& s) {
    if (progress) progress(s);
  };
  PipelineResult out;
  std::vector<HealthyInput> generated;
  if (!healthy) {
    note("generating " + std::to_string(cfg.corpus.healthy_cases) + " healthy phantoms");
    generated = make_healthy_corpus(cfg);
    healthy = &generated;
  }
  std::vector<lung::ThoraxCase> cases;
  for (const auto& h : *healthy) cases.push_back(prepare_training_case(h, cfg));
  note("synthesizing " + std::to_string(cfg.corpus.pairs) + " training pairs");
  const auto pairs = synthesize(cases, cfg);
  out.pairs = pairs.size();
  if (pairs.empty()) throw ConfigError("pipeline needs a non-empty training corpus");
  note("training " + std::to_string(cfg.net.ensemble_size) + " models");
  out.models = train_ensemble(pairs, cfg, &out.log);
  note("building " + std::to_string(cfg.benchmark.cases) + " held-out cases");
  const auto held_out = make_held_out(cfg);
  note("running inference and evaluation");
  out.benchmark = run_benchmark(out.models, held_out, cfg);
  return out;
}

}  // namespace normseg::app
