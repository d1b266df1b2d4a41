#include "quadscan/eval.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <set>

#include "json.hpp"

namespace quadscan::eval {

double iou(const BBox& a, const BBox& b) {
  if (!a.valid() || !b.valid()) return 0.0;
  const double iw = std::min(a.x2(), b.x2()) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2(), b.y2()) - std::max(a.y1, b.y1);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

double center_distance(const BBox& a, const BBox& b) {
  return std::hypot(a.cx() - b.cx(), a.cy() - b.cy());
}

double success_threshold(std::size_t i) { return static_cast<double>(i) / 20.0; }

EvalReport score(std::span<const TrackResult> results) {
  if (results.empty()) throw DataError("score: no results");
  EvalReport rep;
  for (const auto& r : results) {
    if (r.predicted.size() != r.truth.size()) {
      throw DataError("score: sequence '" + r.id + "' has " + std::to_string(r.predicted.size()) +
                      " predictions for " + std::to_string(r.truth.size()) + " ground-truth boxes");
    }
    if (r.truth.empty()) throw DataError("score: sequence '" + r.id + "' is empty");
    const double n = static_cast<double>(r.truth.size());
    std::array<double, kPrecisionPoints> prec{};
    std::array<double, kSuccessPoints> succ{};
    for (std::size_t f = 0; f < r.truth.size(); ++f) {
      const double d = center_distance(r.predicted[f], r.truth[f]);
      const double o = iou(r.predicted[f], r.truth[f]);
      for (std::size_t t = 0; t < kPrecisionPoints; ++t) prec[t] += d <= static_cast<double>(t) ? 1 : 0;
      for (std::size_t t = 0; t + 1 < kSuccessPoints; ++t) succ[t] += o > success_threshold(t) ? 1 : 0;
      succ[kSuccessPoints - 1] += o >= 1.0 ? 1 : 0;
    }
    for (std::size_t t = 0; t < kPrecisionPoints; ++t) rep.precision[t] += prec[t] / n;
    for (std::size_t t = 0; t < kSuccessPoints; ++t) rep.success[t] += succ[t] / n;
  }
  const double s = static_cast<double>(results.size());
  for (auto& v : rep.precision) v /= s;
  for (auto& v : rep.success) v /= s;
  rep.sequences = results.size();
  rep.pr = rep.precision[static_cast<std::size_t>(kPrecisionThreshold)];
  double area = 0;
  for (double v : rep.success) area += v;
  rep.sr = area / static_cast<double>(kSuccessPoints);
  return rep;
}

Breakdown attribute_breakdown(std::span<const TrackResult> results,
                              const std::vector<std::string>& known) {
  std::set<std::string> tags;
  for (const auto& r : results) tags.insert(r.tags.begin(), r.tags.end());
  Breakdown b;
  for (const auto& tag : tags) {
    std::vector<TrackResult> subset;
    for (const auto& r : results) {
      if (std::find(r.tags.begin(), r.tags.end(), tag) != r.tags.end()) subset.push_back(r);
    }
    b.by_tag[tag] = score(subset);
    if (!known.empty() && std::find(known.begin(), known.end(), tag) == known.end()) {
      b.unknown.push_back(tag);
    }
  }
  return b;
}

void write_curves_csv(std::ostream& os, const EvalReport& report) {
  os << "kind,threshold,value\n";
  char buf[96];
  for (std::size_t t = 0; t < kPrecisionPoints; ++t) {
    std::snprintf(buf, sizeof buf, "precision,%zu,%.6f\n", t, report.precision[t]);
    os << buf;
  }
  for (std::size_t t = 0; t < kSuccessPoints; ++t) {
    std::snprintf(buf, sizeof buf, "success,%.2f,%.6f\n", success_threshold(t), report.success[t]);
    os << buf;
  }
}

void write_summary_json(std::ostream& os, const EvalReport& overall, const Breakdown& breakdown) {
  nlohmann::ordered_json j;
  j["sequences"] = overall.sequences;
  j["pr"] = overall.pr;
  j["sr"] = overall.sr;
  j["precision_threshold_px"] = kPrecisionThreshold;
  auto& tags = j["attributes"] = nlohmann::ordered_json::object();
  for (const auto& [tag, rep] : breakdown.by_tag) {
    tags[tag] = {{"sequences", rep.sequences}, {"pr", rep.pr}, {"sr", rep.sr}};
  }
  j["unknown_attributes"] = breakdown.unknown;
  os << j.dump(2) << '\n';
}

}  // namespace quadscan::eval
