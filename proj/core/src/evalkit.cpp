#include "normseg/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "normseg/errors.hpp"

namespace normseg::eval {

namespace {

std::optional<double> ratio(std::uint64_t num, std::uint64_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

std::string fmt(const std::optional<double>& v) {
  if (!v) return "NA";
  std::ostringstream os;
  os << std::setprecision(6) << *v;
  return os.str();
}

}  // namespace

ConfusionCounts confusion(const Mask3& pred, const Mask3& gt, const Mask3& region) {
  require_same_dims(pred.dims(), gt.dims(), "confusion");
  require_same_dims(pred.dims(), region.dims(), "confusion");
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!region[i]) continue;
    const bool p = pred[i], g = gt[i];
    if (p && g)
      ++c.tp;
    else if (p)
      ++c.fp;
    else if (g)
      ++c.fn;
    else
      ++c.tn;
  }
  return c;
}

std::optional<double> dsc(const ConfusionCounts& c) { return ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn); }
std::optional<double> psc(const ConfusionCounts& c) { return ratio(c.tp, c.tp + c.fp); }
std::optional<double> sen(const ConfusionCounts& c) { return ratio(c.tp, c.tp + c.fn); }
std::optional<double> specificity(const ConfusionCounts& c) { return ratio(c.tn, c.tn + c.fp); }

std::optional<double> auc_midrank(std::span<const double> scores, std::span<const std::uint8_t> positive) {
  if (scores.size() != positive.size()) throw ShapeError("auc_midrank: score and label counts differ");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::uint64_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (positive[order[k]]) {
        rank_sum += midrank;
        ++n_pos;
      }
    i = j;
  }
  const std::uint64_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  const double np = static_cast<double>(n_pos);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

BrightVoxelReport bright_voxel_eval(const Volume3& healthy_prob, const Mask3& gt_lesion, const Volume3& thorax,
                                    const Mask3& lung, double tau, double threshold) {
  require_same_dims(healthy_prob.dims(), gt_lesion.dims(), "bright_voxel_eval");
  require_same_dims(healthy_prob.dims(), thorax.dims(), "bright_voxel_eval");
  require_same_dims(healthy_prob.dims(), lung.dims(), "bright_voxel_eval");
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;
  ConfusionCounts c;
  for (std::size_t i = 0; i < lung.size(); ++i) {
    if (!lung[i] || static_cast<double>(thorax[i]) < tau) continue;
    const double s = healthy_prob[i];
    const bool healthy = !gt_lesion[i];
    const bool called = s > threshold;
    scores.push_back(s);
    labels.push_back(healthy ? 1 : 0);
    if (called && healthy)
      ++c.tp;
    else if (called)
      ++c.fp;
    else if (healthy)
      ++c.fn;
    else
      ++c.tn;
  }
  BrightVoxelReport r;
  r.voxels = scores.size();
  r.healthy = static_cast<std::size_t>(c.tp + c.fn);
  r.precision = psc(c);
  r.sensitivity = sen(c);
  r.specificity = specificity(c);
  r.auc = auc_midrank(scores, labels);
  return r;
}

CaseReport make_report(std::string case_id, const Mask3& pred, const Mask3& gt, const Mask3& region) {
  CaseReport r;
  r.case_id = std::move(case_id);
  r.counts = confusion(pred, gt, region);
  r.dsc = dsc(r.counts);
  r.psc = psc(r.counts);
  r.sen = sen(r.counts);
  return r;
}

Summary summarize(std::span<const std::optional<double>> values) {
  Summary s;
  double sum = 0.0;
  for (const auto& v : values)
    if (v) {
      sum += *v;
      ++s.defined;
    }
  if (s.defined == 0) return s;
  const double mean = sum / static_cast<double>(s.defined);
  double ss = 0.0;
  for (const auto& v : values)
    if (v) ss += (*v - mean) * (*v - mean);
  s.mean = mean;
  s.stddev = std::sqrt(ss / static_cast<double>(s.defined));
  return s;
}

ReportSummary aggregate(std::vector<CaseReport> reports) {
  std::stable_sort(reports.begin(), reports.end(),
                   [](const CaseReport& a, const CaseReport& b) { return a.case_id < b.case_id; });
  std::vector<std::optional<double>> d, p, s, a;
  for (const auto& r : reports) {
    d.push_back(r.dsc);
    p.push_back(r.psc);
    s.push_back(r.sen);
    a.push_back(r.bright ? r.bright->auc : std::nullopt);
  }
  return {summarize(d), summarize(p), summarize(s), summarize(a)};
}

void write_case_csv(std::ostream& out, const std::vector<CaseReport>& reports) {
  out << "case_id,tp,fp,fn,tn,dsc,psc,sen,bright_voxels,bright_precision,bright_sensitivity,bright_specificity,"
         "bright_auc\n";
  for (const auto& r : reports) {
    out << r.case_id << ',' << r.counts.tp << ',' << r.counts.fp << ',' << r.counts.fn << ',' << r.counts.tn << ','
        << fmt(r.dsc) << ',' << fmt(r.psc) << ',' << fmt(r.sen);
    if (r.bright)
      out << ',' << r.bright->voxels << ',' << fmt(r.bright->precision) << ',' << fmt(r.bright->sensitivity) << ','
          << fmt(r.bright->specificity) << ',' << fmt(r.bright->auc);
    else
      out << ",0,NA,NA,NA,NA";
    out << '\n';
  }
}

void write_summary_csv(std::ostream& out, const ReportSummary& s, const std::string& label) {
  out << "label,metric,defined,mean,std\n";
  const std::pair<const char*, const Summary*> rows[] = {{"dsc", &s.dsc}, {"psc", &s.psc}, {"sen", &s.sen},
                                                         {"bright_auc", &s.auc}};
  for (const auto& [name, m] : rows)
    out << label << ',' << name << ',' << m->defined << ',' << fmt(m->mean) << ',' << fmt(m->stddev) << '\n';
}

std::string dice_histogram_svg(const std::vector<CaseReport>& reports, int bins) {
  if (bins < 1) throw ParameterError("dice_histogram_svg: bins must be >= 1");
  std::vector<int> counts(bins, 0);
  for (const auto& r : reports)
    if (r.dsc) ++counts[std::min(bins - 1, static_cast<int>(*r.dsc * bins))];
  const int peak = std::max(1, *std::max_element(counts.begin(), counts.end()));
  const int width = 40 * bins + 40, height = 240, base = 200;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  os << "<line x1=\"20\" y1=\"" << base << "\" x2=\"" << width - 20 << "\" y2=\"" << base << "\" stroke=\"black\"/>\n";
  for (int b = 0; b < bins; ++b) {
    const int h = 180 * counts[b] / peak;
    os << "<rect x=\"" << 20 + 40 * b + 2 << "\" y=\"" << base - h << "\" width=\"36\" height=\"" << h
       << "\" fill=\"steelblue\"><title>" << counts[b] << "</title></rect>\n";
    os << "<text x=\"" << 20 + 40 * b << "\" y=\"" << base + 16 << "\" font-size=\"10\">"
       << std::setprecision(2) << static_cast<double>(b) / bins << "</text>\n";
  }
  os << "<text x=\"" << width / 2 - 30 << "\" y=\"" << base + 34 << "\" font-size=\"12\">per-case Dice</text>\n";
  os << "</svg>\n";
  return os.str();
}

}  // namespace normseg::eval
