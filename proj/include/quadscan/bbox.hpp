#pragma once

#include <algorithm>
#include <cmath>

namespace quadscan {

/// Axis-aligned box: top-left corner plus width and height, in pixels.
struct BBox {
  double x1 = 0, y1 = 0, w = 0, h = 0;

  double x2() const { return x1 + w; }
  double y2() const { return y1 + h; }
  double cx() const { return x1 + 0.5 * w; }
  double cy() const { return y1 + 0.5 * h; }
  double area() const { return std::max(0.0, w) * std::max(0.0, h); }
  bool valid() const { return w > 0 && h > 0 && std::isfinite(x1) && std::isfinite(y1); }

  static BBox from_center(double cx, double cy, double w, double h) {
    return {cx - 0.5 * w, cy - 0.5 * h, w, h};
  }
  bool operator==(const BBox&) const = default;
};

}  // namespace quadscan
