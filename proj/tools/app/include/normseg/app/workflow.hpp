#pragma once

// Stages of a run: healthy corpus, pair synthesis, ensemble training,
// held-out benchmark cases, inference and evaluation. Every stage is a pure
// function of its inputs and the RunConfig; disk I/O lives alongside.

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "normseg/app/config.hpp"
#include "normseg/evalkit.hpp"
#include "normseg/lesionforge.hpp"
#include "normseg/lunglab.hpp"
#include "normseg/normnet.hpp"
#include "normseg/postseg.hpp"

namespace normseg::app {

/// Workers for data-parallel stages, from NORMSEG_WORKERS (default 1). Never affects results.
int worker_count();

struct HealthyInput {
  std::string id;
  Volume3 raw_hu;
  Mask3 segmented;
};

std::vector<HealthyInput> make_healthy_corpus(const RunConfig& cfg);
void write_healthy_corpus(const std::filesystem::path& dir, const std::vector<HealthyInput>& corpus);
std::vector<HealthyInput> read_healthy_corpus(const std::filesystem::path& dir);

/// Windowing plus (optionally) erroneous-edge removal.
lung::ThoraxCase prepare_training_case(const HealthyInput& in, const RunConfig& cfg);

/// Pair j is drawn from case j mod n with its own derived seed.
std::vector<forge::TrainPair> synthesize(const std::vector<lung::ThoraxCase>& cases, const RunConfig& cfg);
void write_corpus(const std::filesystem::path& dir, const std::vector<forge::TrainPair>& pairs);
std::vector<forge::TrainPair> read_corpus(const std::filesystem::path& dir);

struct TrainLogRow {
  int model;
  int iteration;
  double loss;
};

std::vector<net::TinyNet<float>> train_ensemble(const std::vector<forge::TrainPair>& pairs, const RunConfig& cfg,
                                                std::vector<TrainLogRow>* log = nullptr);
void write_models(const std::filesystem::path& dir, const std::vector<net::TinyNet<float>>& models);
std::vector<net::TinyNet<float>> read_models(const std::filesystem::path& dir);
void write_train_log(const std::filesystem::path& path, const std::vector<TrainLogRow>& log);

struct HeldOutCase {
  std::string id;
  Volume3 thorax;  // A (.) M, windowed
  Mask3 lung;
  Mask3 lesion;    // G & M
};

std::vector<HeldOutCase> make_held_out(const RunConfig& cfg);
void write_held_out(const std::filesystem::path& dir, const std::vector<HeldOutCase>& cases);
std::vector<HeldOutCase> read_held_out(const std::filesystem::path& dir);

struct Inference {
  Volume3 healthy_prob;  // ensemble mean
  Mask3 voted;
  post::Segmentation seg;
};

Inference infer_case(const std::vector<net::TinyNet<float>>& models, const Volume3& thorax, const Mask3& lung,
                     const RunConfig& cfg);
void write_inference(const std::filesystem::path& dir, const std::string& id, const Inference& inf,
                     bool intermediates);

struct BenchmarkResult {
  std::vector<eval::CaseReport> full;
  std::vector<eval::CaseReport> no_growing;
  std::vector<eval::CaseReport> g_as_prediction;
  std::vector<eval::CaseReport> intensity;  // bright lung voxels as lesion
  eval::ReportSummary full_summary;
  eval::ReportSummary no_growing_summary;
  eval::ReportSummary g_summary;
  eval::ReportSummary intensity_summary;
  /// Reports for the configured post-processing variant.
  const std::vector<eval::CaseReport>& configured(post::Variant v) const;
};

BenchmarkResult run_benchmark(const std::vector<net::TinyNet<float>>& models, const std::vector<HeldOutCase>& cases,
                              const RunConfig& cfg);
void write_benchmark(const std::filesystem::path& dir, const BenchmarkResult& result, const RunConfig& cfg);

struct GateOutcome {
  bool passed = true;
  std::vector<std::string> messages;
};

GateOutcome check_gates(const BenchmarkResult& result, const RunConfig& cfg);

using Progress = std::function<void(const std::string&)>;

struct PipelineResult {
  std::size_t pairs = 0;
  std::vector<net::TinyNet<float>> models;
  std::vector<TrainLogRow> log;
  BenchmarkResult benchmark;
};

/// Healthy corpus (phantoms unless given) -> pairs -> ensemble -> held-out benchmark, in memory.
PipelineResult run_pipeline(const RunConfig& cfg, const Progress& progress = {},
                            const std::vector<HealthyInput>* healthy = nullptr);

}  // namespace normseg::app
