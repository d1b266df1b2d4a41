#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "quadscan/tracker.hpp"

namespace quadscan::tracker {

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch = 8;
  std::size_t samples_per_epoch = 256;
  double lr = 3e-4;
  double weight_decay = 1e-4;
  std::size_t decay_epoch = 24;  // lr is multiplied by decay_factor from this epoch on
  double decay_factor = 0.1;
  double clip_norm = 1.0;        // 0 disables clipping
  double center_jitter = 0.2;    // search centre shift, fraction of the search side
  double scale_jitter = 0.15;    // search side scaled by exp(U(-s, s))
  std::uint64_t seed = 1;
  Precision precision = Precision::f32;

  /// "toy" or "paper"; throws ConfigError otherwise.
  static TrainConfig preset(std::string_view name);
};

struct LossRecord {
  std::size_t epoch = 0, step = 0;
  double lr = 0, total = 0, cls = 0, iou = 0, l1 = 0;
};

struct TrainReport {
  std::vector<LossRecord> curve;  // one entry per optimizer step
  long skipped_steps = 0;
};

/// Trains in place on random (template frame 0, search frame t) pairs. A
/// non-finite loss throws NumericError naming the step and the loss terms.
TrainReport train(TrackerModel& model, std::span<const synth::Sequence> data, const TrainConfig& config,
                  const std::function<void(const LossRecord&)>& on_step = {});

void write_loss_csv(std::ostream& os, const TrainReport& report);

/// Frame 0 is initialized with its ground truth; every later frame is searched
/// around the previous prediction.
std::vector<BBox> track_sequence(const TrackerModel& model, const synth::Sequence& seq);

/// Tracks every sequence, spreading them over `threads` workers (0 reads
/// QUADSCAN_THREADS, default 1). Results keep the input order.
std::vector<std::vector<BBox>> track_all(const TrackerModel& model, std::span<const synth::Sequence> seqs,
                                         std::size_t threads = 0);

std::size_t thread_count_from_env();

}  // namespace quadscan::tracker
