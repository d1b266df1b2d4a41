#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "quadscan/bbox.hpp"
#include "quadscan/mfm.hpp"
#include "quadscan/optim.hpp"
#include "quadscan/scan_order.hpp"
#include "quadscan/synthdata.hpp"

namespace quadscan::tracker {

/// Streams in canonical order. The language stream's search half starts as a
/// copy of the RGB search tokens.
enum class Modality { rgb, tir, event, lang };
inline constexpr std::array<Modality, 4> kAllModalities{Modality::rgb, Modality::tir,
                                                        Modality::event, Modality::lang};
std::string_view modality_name(Modality m);

struct ModalitySet {
  std::array<bool, 4> on{true, true, true, true};

  static ModalitySet all() { return {}; }
  /// Comma-separated list; accepts rgb, t/tir/thermal, e/event, l/lang/language.
  static ModalitySet parse(std::string_view list);
  bool has(Modality m) const { return on[static_cast<std::size_t>(m)]; }
  std::size_t count() const;
  std::vector<Modality> list() const;
  std::string to_string() const;
  bool operator==(const ModalitySet&) const = default;
};

struct LossWeights {
  double iou = 2.0;
  double l1 = 5.0;
  double focal_alpha = 2.0;
  double focal_beta = 4.0;
};

struct TrackerConfig {
  std::size_t template_px = 32;  // template crop resampled to this side
  std::size_t search_px = 64;    // search crop side, always 2 * template_px
  std::size_t patch = 8;
  std::size_t dim = 16;
  std::size_t depth = 2;
  std::size_t heads = 2;
  std::size_t mlp_ratio = 2;
  std::size_t head_hidden = 16;
  ModalitySet modalities;
  mfm::PathSet mfm_paths = mfm::PathSet::all();
  std::size_t mfm_expand = 2;
  std::size_t mfm_state = 8;
  std::size_t mfm_conv = 4;
  std::vector<std::size_t> mfm_blocks{0, 1};  // backbone blocks followed by an MFM block
  double template_factor = 2.0;               // template side = factor * sqrt(w * h)
  LossWeights loss;

  std::size_t template_side() const { return template_px / patch; }
  std::size_t search_side() const { return search_px / patch; }
  TokenGeometry geometry() const;
  mfm::MfmConfig mfm_config() const;
  /// Throws ConfigError on inconsistent sizes.
  void validate() const;
};

/// Fixed closed vocabulary of the synthetic sentences; index 0 is <unk>.
const std::vector<std::string>& vocabulary();
std::vector<int> tokenize(std::string_view sentence);

/// Float raster with values normalized per modality: RGB and thermal to
/// [0, 1], events to {-1, 0, 1}.
struct Plane {
  std::size_t width = 0, height = 0, channels = 0;
  std::vector<float> values;

  float at(std::size_t x, std::size_t y, std::size_t c) const {
    return values[(y * width + x) * channels + c];
  }
};
Plane to_plane(const synth::Image& img, Modality m);

/// Square crop of side `side` (frame pixels) centred at (cx, cy), bilinearly
/// resampled to out_px x out_px. Pixels outside the frame read as zero.
Plane crop(const synth::Image& img, Modality m, double cx, double cy, double side,
           std::size_t out_px);

struct CropWindow {
  double cx = 0, cy = 0, side = 0;  // in frame pixels
  std::size_t out_px = 0;

  double scale() const { return static_cast<double>(out_px) / side; }
  BBox to_crop(const BBox& frame_box) const;
  BBox to_frame(const BBox& crop_box) const;
};

/// One model input: template and search crops of the three visual modalities
/// plus the sentence tokens.
struct CropSample {
  std::array<Plane, 3> templ;
  std::array<Plane, 3> search;
  std::vector<int> words;
};

CropSample make_sample(const synth::Sequence& seq, std::size_t template_frame,
                       const CropWindow& template_window, std::size_t search_frame,
                       const CropWindow& search_window);
CropWindow template_window(const BBox& box, const TrackerConfig& config);
/// Search window centred at (cx, cy) for a target of the given size.
CropWindow search_window(double cx, double cy, double w, double h, const TrackerConfig& config);

struct HeadOutput {
  Tensor heat_logits;  // [B * Nx x 1]
  Tensor offset;       // [B * Nx x 2], cell units relative to the cell centre
  Tensor size;         // [B * Nx x 2], fraction of the search side, in (0, 1)
  std::size_t batch = 0;
  std::size_t grid = 0;  // search side in cells
};

/// Argmax cell of sample b's heatmap; ties go to the lowest row-major index.
std::size_t argmax_cell(const HeadOutput& out, std::size_t b);
/// Box in search-crop pixels decoded from sample b.
BBox decode(const HeadOutput& out, std::size_t b, std::size_t search_px);

struct CellTarget {
  std::size_t cell = 0;
  double off_x = 0, off_y = 0;
  double size_w = 0, size_h = 0;
};
/// Inverse of decode for a box in search-crop pixels.
CellTarget encode(const BBox& crop_box, std::size_t grid, std::size_t search_px);

/// Gaussian target heatmap over grid x grid cells, peak 1 at the box's cell,
/// radius max(1, template_side / 4) cells.
std::vector<double> gaussian_target(const BBox& crop_box, const TrackerConfig& config);

/// Penalty-reduced focal loss over sigmoid(logits), normalized by the number
/// of peak cells. logits is [R x 1], target has R entries.
Tensor focal_loss(const Tensor& logits, std::span<const double> target, double alpha, double beta);
/// Mean of 1 - GIoU between rows of pred [B x 4] and target (x1, y1, x2, y2).
Tensor giou_loss(const Tensor& pred_xyxy, std::span<const double> target_xyxy);
double giou(const BBox& a, const BBox& b);

struct LossTerms {
  Tensor total;
  double cls = 0, iou = 0, l1 = 0;
};
/// cls + w.iou * (1 - GIoU) + w.l1 * L1 on normalized (x1, y1, x2, y2), with
/// the box read at each sample's predicted argmax cell.
LossTerms compute_loss(const HeadOutput& out, std::span<const BBox> crop_boxes,
                       const TrackerConfig& config);

/// Patch/language embeddings, shared transformer blocks with MFM blocks after
/// the configured indices, modality merge and a center head.
class TrackerModel {
 public:
  explicit TrackerModel(TrackerConfig config, std::uint64_t seed = 1);

  const TrackerConfig& config() const { return config_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  /// Canonical [B * M * N x C] token matrix.
  Tensor embed(std::span<const CropSample* const> batch) const;
  Tensor backbone(const Tensor& tokens, std::size_t batch) const;
  HeadOutput head(const Tensor& tokens, std::size_t batch) const;
  HeadOutput forward(std::span<const CropSample* const> batch) const;

  /// Mean of the search halves of every stream, [B * Nx x C].
  Tensor merge(const Tensor& tokens, std::size_t batch) const;

 private:
  struct Block {
    Tensor ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
  };
  Tensor vit_block(const Tensor& x, const Block& blk) const;

  TrackerConfig config_;
  ParamStore store_;
  Tensor patch_w_, patch_b_, pos_z_, pos_x_, words_;
  std::vector<Block> blocks_;
  std::vector<std::optional<mfm::MfmBlock>> mfm_;
  Tensor norm_g_, norm_b_;
  std::array<Tensor, 3> conv_w_, conv_b_, out_w_, out_b_;  // heat, offset, size
};

}  // namespace quadscan::tracker
