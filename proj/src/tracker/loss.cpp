#include <algorithm>
#include <cmath>

#include "quadscan/ops.hpp"
#include "quadscan/tracker.hpp"

namespace quadscan::tracker {

using detail::finalize;
using detail::grad_buffer;
using detail::wants_grad;

namespace {

constexpr double kProbFloor = 1e-4;

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

struct GiouParts {
  double value;
  std::array<double, 4> grad;  // d giou / d (x1, y1, x2, y2) of the first box
};

// GIoU of two corner-form boxes with its gradient in the first box.
GiouParts giou_xyxy(const double* p, const double* t) {
  const double pw = p[2] - p[0], ph = p[3] - p[1];
  const double tw = t[2] - t[0], th = t[3] - t[1];
  const double ap = pw * ph, at = tw * th;

  const double ix1 = std::max(p[0], t[0]), iy1 = std::max(p[1], t[1]);
  const double ix2 = std::min(p[2], t[2]), iy2 = std::min(p[3], t[3]);
  const double iw = std::max(0.0, ix2 - ix1), ih = std::max(0.0, iy2 - iy1);
  const double inter = iw * ih;
  const double uni = ap + at - inter;

  const double cx1 = std::min(p[0], t[0]), cy1 = std::min(p[1], t[1]);
  const double cx2 = std::max(p[2], t[2]), cy2 = std::max(p[3], t[3]);
  const double cw = cx2 - cx1, ch = cy2 - cy1;
  const double enc = cw * ch;

  GiouParts r{0.0, {0, 0, 0, 0}};
  if (uni <= 0 || enc <= 0) return r;
  r.value = inter / uni - (enc - uni) / enc;

  // giou = I/U - 1 + U/E
  const double dI = 1.0 / uni;
  const double dU = -inter / (uni * uni) + 1.0 / enc;
  const double dE = -uni / (enc * enc);

  std::array<double, 4> d_ap{-ph, -pw, ph, pw};
  std::array<double, 4> d_inter{0, 0, 0, 0};
  if (iw > 0 && ih > 0) {
    if (p[0] > t[0]) d_inter[0] = -ih;
    if (p[1] > t[1]) d_inter[1] = -iw;
    if (p[2] < t[2]) d_inter[2] = ih;
    if (p[3] < t[3]) d_inter[3] = iw;
  }
  std::array<double, 4> d_enc{0, 0, 0, 0};
  if (p[0] < t[0]) d_enc[0] = -ch;
  if (p[1] < t[1]) d_enc[1] = -cw;
  if (p[2] > t[2]) d_enc[2] = ch;
  if (p[3] > t[3]) d_enc[3] = cw;

  for (int k = 0; k < 4; ++k) {
    const double d_uni = d_ap[k] - d_inter[k];
    r.grad[k] = dI * d_inter[k] + dU * d_uni + dE * d_enc[k];
  }
  return r;
}

}  // namespace

std::size_t argmax_cell(const HeadOutput& out, std::size_t b) {
  const std::size_t nx = out.grid * out.grid;
  auto heat = out.heat_logits.data().subspan(b * nx, nx);
  return static_cast<std::size_t>(std::max_element(heat.begin(), heat.end()) - heat.begin());
}

BBox decode(const HeadOutput& out, std::size_t b, std::size_t search_px) {
  const std::size_t nx = out.grid * out.grid;
  const std::size_t cell = argmax_cell(out, b);
  const std::size_t row = b * nx + cell;
  const double cell_px = static_cast<double>(search_px) / static_cast<double>(out.grid);
  const double cx = (static_cast<double>(cell % out.grid) + 0.5 + out.offset.at(2 * row)) * cell_px;
  const double cy = (static_cast<double>(cell / out.grid) + 0.5 + out.offset.at(2 * row + 1)) * cell_px;
  const double w = out.size.at(2 * row) * static_cast<double>(search_px);
  const double h = out.size.at(2 * row + 1) * static_cast<double>(search_px);
  return BBox::from_center(cx, cy, w, h);
}

CellTarget encode(const BBox& crop_box, std::size_t grid, std::size_t search_px) {
  const double cell_px = static_cast<double>(search_px) / static_cast<double>(grid);
  const double gx = crop_box.cx() / cell_px, gy = crop_box.cy() / cell_px;
  const double hi = static_cast<double>(grid - 1);
  const double c = std::clamp(std::floor(gx), 0.0, hi), r = std::clamp(std::floor(gy), 0.0, hi);
  CellTarget t;
  t.cell = static_cast<std::size_t>(r) * grid + static_cast<std::size_t>(c);
  t.off_x = gx - (c + 0.5);
  t.off_y = gy - (r + 0.5);
  t.size_w = crop_box.w / static_cast<double>(search_px);
  t.size_h = crop_box.h / static_cast<double>(search_px);
  return t;
}

std::vector<double> gaussian_target(const BBox& crop_box, const TrackerConfig& config) {
  const std::size_t G = config.search_side();
  const CellTarget t = encode(crop_box, G, config.search_px);
  const long radius = std::max<long>(1, static_cast<long>(config.template_side() / 4));
  const double sigma = (2.0 * static_cast<double>(radius) + 1.0) / 6.0;
  const long r0 = static_cast<long>(t.cell / G), c0 = static_cast<long>(t.cell % G);
  std::vector<double> heat(G * G, 0.0);
  for (long r = std::max(0L, r0 - radius); r <= std::min<long>(G - 1, r0 + radius); ++r) {
    for (long c = std::max(0L, c0 - radius); c <= std::min<long>(G - 1, c0 + radius); ++c) {
      const double d2 = static_cast<double>((r - r0) * (r - r0) + (c - c0) * (c - c0));
      heat[static_cast<std::size_t>(r) * G + static_cast<std::size_t>(c)] = std::exp(-d2 / (2 * sigma * sigma));
    }
  }
  return heat;
}

Tensor focal_loss(const Tensor& logits, std::span<const double> target, double alpha, double beta) {
  const std::size_t n = logits.numel();
  if (target.size() != n) throw ShapeError("focal_loss: target size does not match the logits");
  std::size_t positives = 0;
  for (double t : target) positives += t == 1.0 ? 1 : 0;
  const double norm = static_cast<double>(std::max<std::size_t>(1, positives));

  double loss = 0.0;
  std::vector<double> dlogit(n, 0.0);
  auto x = logits.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double raw = stable_sigmoid(x[i]);
    const double p = std::clamp(raw, kProbFloor, 1.0 - kProbFloor);
    const bool clamped = p != raw;
    double dp;
    if (target[i] == 1.0) {
      const double q = std::pow(1 - p, alpha);
      loss -= q * std::log(p);
      dp = alpha * std::pow(1 - p, alpha - 1) * std::log(p) - q / p;
    } else {
      const double neg = std::pow(1 - target[i], beta);
      const double q = std::pow(p, alpha);
      loss -= neg * q * std::log(1 - p);
      dp = -neg * (alpha * std::pow(p, alpha - 1) * std::log(1 - p) - q / (1 - p));
    }
    dlogit[i] = clamped ? 0.0 : dp * p * (1 - p) / norm;
  }
  Tensor out = Tensor::scalar(loss / norm);
  finalize(out);
  if (wants_grad({&logits})) {
    GradTape::active()->record({logits}, out, [logits, o = out.impl(), d = std::move(dlogit)] {
      const double g = o->grad[0];
      auto& gx = grad_buffer(logits);
      for (std::size_t i = 0; i < d.size(); ++i) gx[i] += g * d[i];
    });
  }
  return out;
}

double giou(const BBox& a, const BBox& b) {
  const double p[4] = {a.x1, a.y1, a.x2(), a.y2()};
  const double t[4] = {b.x1, b.y1, b.x2(), b.y2()};
  return giou_xyxy(p, t).value;
}

Tensor giou_loss(const Tensor& pred_xyxy, std::span<const double> target_xyxy) {
  if (pred_xyxy.ndim() != 2 || pred_xyxy.dim(1) != 4 || target_xyxy.size() != pred_xyxy.numel()) {
    throw ShapeError("giou_loss: expected [B x 4] predictions with matching targets");
  }
  const std::size_t B = pred_xyxy.dim(0);
  auto p = pred_xyxy.data();
  double loss = 0.0;
  std::vector<double> d(4 * B);
  for (std::size_t b = 0; b < B; ++b) {
    const GiouParts g = giou_xyxy(p.data() + 4 * b, target_xyxy.data() + 4 * b);
    loss += 1.0 - g.value;
    for (int k = 0; k < 4; ++k) d[4 * b + k] = -g.grad[k] / static_cast<double>(B);
  }
  Tensor out = Tensor::scalar(loss / static_cast<double>(B));
  finalize(out);
  if (wants_grad({&pred_xyxy})) {
    GradTape::active()->record({pred_xyxy}, out, [pred_xyxy, o = out.impl(), d = std::move(d)] {
      const double g = o->grad[0];
      auto& gx = grad_buffer(pred_xyxy);
      for (std::size_t i = 0; i < d.size(); ++i) gx[i] += g * d[i];
    });
  }
  return out;
}

LossTerms compute_loss(const HeadOutput& out, std::span<const BBox> crop_boxes, const TrackerConfig& config) {
  const std::size_t B = out.batch, G = out.grid, nx = G * G;
  if (crop_boxes.size() != B) throw ShapeError("compute_loss: one box per sample is required");
  const double S = static_cast<double>(config.search_px), g = static_cast<double>(G);

  std::vector<double> heat(B * nx);
  std::vector<std::int64_t> sel(B);
  std::vector<double> base(4 * B), gt(4 * B);
  for (std::size_t b = 0; b < B; ++b) {
    const auto t = gaussian_target(crop_boxes[b], config);
    std::copy(t.begin(), t.end(), heat.begin() + static_cast<std::ptrdiff_t>(b * nx));
    const std::size_t cell = argmax_cell(out, b);
    sel[b] = static_cast<std::int64_t>(b * nx + cell);
    const double cx = (static_cast<double>(cell % G) + 0.5) / g, cy = (static_cast<double>(cell / G) + 0.5) / g;
    base[4 * b + 0] = cx;
    base[4 * b + 1] = cy;
    base[4 * b + 2] = cx;
    base[4 * b + 3] = cy;
    const BBox& c = crop_boxes[b];
    gt[4 * b + 0] = c.x1 / S;
    gt[4 * b + 1] = c.y1 / S;
    gt[4 * b + 2] = c.x2() / S;
    gt[4 * b + 3] = c.y2() / S;
  }

  const auto& w = config.loss;
  Tensor cls = focal_loss(out.heat_logits, heat, w.focal_alpha, w.focal_beta);

  // Normalized corners: centre = (cell + 0.5 + offset) / G, half extent = size / 2.
  Tensor off_to_xyxy = Tensor::from({2, 4}, {1 / g, 0, 1 / g, 0, 0, 1 / g, 0, 1 / g});
  Tensor size_to_xyxy = Tensor::from({2, 4}, {-0.5, 0, 0.5, 0, 0, -0.5, 0, 0.5});
  Tensor pred = ops::add(ops::add(ops::matmul(ops::gather_rows(out.offset, sel), off_to_xyxy),
                                  ops::matmul(ops::gather_rows(out.size, sel), size_to_xyxy)),
                         Tensor::from({B, 4}, std::move(base)));
  Tensor liou = giou_loss(pred, gt);
  Tensor l1 = ops::mean(ops::abs(ops::sub(pred, Tensor::from({B, 4}, std::move(gt)))));

  LossTerms terms;
  terms.total = ops::add(ops::add(cls, ops::scale(liou, w.iou)), ops::scale(l1, w.l1));
  terms.cls = cls.item();
  terms.iou = liou.item();
  terms.l1 = l1.item();
  return terms;
}

}  // namespace quadscan::tracker
