#pragma once

#include <array>
#include <iosfwd>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "quadscan/bbox.hpp"

namespace quadscan::eval {

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Intersection over union; 0 when either box is degenerate.
double iou(const BBox& a, const BBox& b);
double center_distance(const BBox& a, const BBox& b);

struct TrackResult {
  std::string id;
  std::vector<BBox> predicted;
  std::vector<BBox> truth;
  std::vector<std::string> tags;
};

inline constexpr std::size_t kPrecisionPoints = 51;  // 0..50 px
inline constexpr std::size_t kSuccessPoints = 21;    // 0, 0.05, .., 1
inline constexpr double kPrecisionThreshold = 20.0;

double success_threshold(std::size_t i);

struct EvalReport {
  double pr = 0.0;
  double sr = 0.0;
  std::array<double, kPrecisionPoints> precision{};
  std::array<double, kSuccessPoints> success{};
  std::size_t sequences = 0;
};

/// Per-sequence curves averaged with equal sequence weight. A frame is a
/// precision hit when its center distance is <= the threshold and a success
/// hit when its IoU is > the threshold (>= at the final threshold 1.0).
EvalReport score(std::span<const TrackResult> results);

struct Breakdown {
  std::map<std::string, EvalReport> by_tag;  // tags seen on at least one sequence
  std::vector<std::string> unknown;          // tags outside `known`, sorted
};

/// Scores the subset of sequences carrying each tag. When `known` is
/// non-empty, tags outside it are still scored and also listed in `unknown`.
Breakdown attribute_breakdown(std::span<const TrackResult> results,
                              const std::vector<std::string>& known = {});

/// Curves as CSV: kind,threshold,value.
void write_curves_csv(std::ostream& os, const EvalReport& report);
/// Summary JSON with overall PR/SR and the per-tag table.
void write_summary_json(std::ostream& os, const EvalReport& overall, const Breakdown& breakdown);

}  // namespace quadscan::eval
