#pragma once

// Overlap metrics, bright-voxel classification metrics and report writers.

#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "normseg/vol3.hpp"

namespace normseg::eval {

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
  bool operator==(const ConfusionCounts&) const = default;
};

/// Counts over the voxels of `region`.
ConfusionCounts confusion(const Mask3& pred, const Mask3& gt, const Mask3& region);

// Empty optional marks 0/0.
std::optional<double> dsc(const ConfusionCounts& c);
std::optional<double> psc(const ConfusionCounts& c);
std::optional<double> sen(const ConfusionCounts& c);
std::optional<double> specificity(const ConfusionCounts& c);

/// Area under the ROC curve for scores of positives vs negatives, ties counted half.
std::optional<double> auc_midrank(std::span<const double> scores, std::span<const std::uint8_t> positive);

struct BrightVoxelReport {
  std::size_t voxels = 0;
  std::size_t healthy = 0;
  std::optional<double> precision;
  std::optional<double> sensitivity;
  std::optional<double> specificity;
  std::optional<double> auc;
};

/// Healthy-vs-lesion classification of lung voxels with thorax >= tau, using
/// healthy probability as the score; healthy is the positive class.
BrightVoxelReport bright_voxel_eval(const Volume3& healthy_prob, const Mask3& gt_lesion, const Volume3& thorax,
                                    const Mask3& lung, double tau, double threshold = 0.95);

struct CaseReport {
  std::string case_id;
  ConfusionCounts counts;
  std::optional<double> dsc;
  std::optional<double> psc;
  std::optional<double> sen;
  std::optional<BrightVoxelReport> bright;
};

CaseReport make_report(std::string case_id, const Mask3& pred, const Mask3& gt, const Mask3& region);

struct Summary {
  std::size_t defined = 0;
  std::optional<double> mean;
  std::optional<double> stddev;  // population
};

Summary summarize(std::span<const std::optional<double>> values);

struct ReportSummary {
  Summary dsc;
  Summary psc;
  Summary sen;
  Summary auc;
};

/// Reports are reduced in case-id order.
ReportSummary aggregate(std::vector<CaseReport> reports);

void write_case_csv(std::ostream& out, const std::vector<CaseReport>& reports);
void write_summary_csv(std::ostream& out, const ReportSummary& s, const std::string& label);
/// Histogram of per-case Dice over [0,1] in `bins` bars.
std::string dice_histogram_svg(const std::vector<CaseReport>& reports, int bins = 10);

}  // namespace normseg::eval
