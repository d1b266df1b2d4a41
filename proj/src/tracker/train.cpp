#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ostream>
#include <sstream>
#include <thread>

#include "quadscan/training.hpp"

namespace quadscan::tracker {

namespace {

struct Draw {
  CropSample sample;
  BBox crop_box;
};

Draw draw_sample(const synth::Sequence& seq, const TrackerConfig& mc, const TrainConfig& tc, Rng& rng) {
  const auto frame = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(seq.frames()) - 1));
  const BBox& gt = seq.boxes[frame];
  const CropWindow tw = template_window(seq.boxes[0], mc);
  CropWindow sw = search_window(gt.cx(), gt.cy(), gt.w, gt.h, mc);
  sw.side *= std::exp(rng.uniform(-tc.scale_jitter, tc.scale_jitter));
  sw.cx += rng.uniform(-tc.center_jitter, tc.center_jitter) * sw.side;
  sw.cy += rng.uniform(-tc.center_jitter, tc.center_jitter) * sw.side;
  return {make_sample(seq, 0, tw, frame, sw), sw.to_crop(gt)};
}

std::string describe(const LossRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "epoch %zu step %zu lr %.3g: total %.6g cls %.6g iou %.6g l1 %.6g", r.epoch,
                r.step, r.lr, r.total, r.cls, r.iou, r.l1);
  return buf;
}

}  // namespace

TrainConfig TrainConfig::preset(std::string_view name) {
  TrainConfig c;
  if (name == "toy") return c;
  if (name == "paper") {
    c.epochs = 15;
    c.batch = 24;
    c.lr = 1e-5;
    c.weight_decay = 1e-4;
    c.decay_epoch = 6;
    c.decay_factor = 0.1;
    return c;
  }
  throw ConfigError("unknown training preset '" + std::string(name) + "' (expected toy or paper)");
}

TrainReport train(TrackerModel& model, std::span<const synth::Sequence> data, const TrainConfig& config,
                  const std::function<void(const LossRecord&)>& on_step) {
  if (data.empty()) throw ConfigError("train: no training sequences");
  if (config.batch == 0 || config.epochs == 0) throw ConfigError("train: batch and epochs must be positive");
  const TrackerConfig& mc = model.config();
  Rng rng(config.seed);
  AdamW opt({config.lr, config.weight_decay});
  const std::size_t steps = (config.samples_per_epoch + config.batch - 1) / config.batch;

  TrainReport report;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = config.lr * (epoch >= config.decay_epoch ? config.decay_factor : 1.0);
    opt.set_lr(lr);
    for (std::size_t step = 0; step < steps; ++step) {
      std::vector<Draw> draws;
      draws.reserve(config.batch);
      for (std::size_t i = 0; i < config.batch; ++i) {
        const auto& seq = data[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(data.size()) - 1))];
        draws.push_back(draw_sample(seq, mc, config, rng));
      }
      std::vector<const CropSample*> ptrs;
      std::vector<BBox> boxes;
      for (const auto& d : draws) {
        ptrs.push_back(&d.sample);
        boxes.push_back(d.crop_box);
      }

      LossRecord rec{epoch, step, lr, 0, 0, 0, 0};
      {
        GradTape tape(config.precision);
        const HeadOutput out = model.forward(ptrs);
        const LossTerms terms = compute_loss(out, boxes, mc);
        rec.total = terms.total.item();
        rec.cls = terms.cls;
        rec.iou = terms.iou;
        rec.l1 = terms.l1;
        if (!std::isfinite(rec.total)) {
          std::ostringstream msg;
          msg << "non-finite training loss at " << describe(rec) << "; samples:";
          for (const auto& b : boxes) msg << " [" << b.x1 << ',' << b.y1 << ',' << b.w << ',' << b.h << ']';
          throw NumericError(msg.str());
        }
        tape.backward(terms.total);
      }
      if (config.clip_norm > 0) clip_grad_norm(model.params(), config.clip_norm);
      if (!opt.step(model.params())) ++report.skipped_steps;
      model.params().zero_grad();
      report.curve.push_back(rec);
      if (on_step) on_step(rec);
    }
  }
  return report;
}

void write_loss_csv(std::ostream& os, const TrainReport& report) {
  os << "epoch,step,lr,total,cls,iou,l1\n";
  char buf[256];
  for (const auto& r : report.curve) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.9g,%.17g,%.17g,%.17g,%.17g\n", r.epoch, r.step, r.lr, r.total, r.cls,
                  r.iou, r.l1);
    os << buf;
  }
}

std::vector<BBox> track_sequence(const TrackerModel& model, const synth::Sequence& seq) {
  const TrackerConfig& mc = model.config();
  const std::size_t T = seq.frames();
  std::vector<BBox> pred;
  if (T == 0) return pred;
  pred.reserve(T);
  const BBox init = seq.boxes.front();
  pred.push_back(init);

  const CropWindow tw = template_window(init, mc);
  CropSample sample = make_sample(seq, 0, tw, 0, search_window(init.cx(), init.cy(), init.w, init.h, mc));
  const double fw = static_cast<double>(seq.rgb[0].width), fh = static_cast<double>(seq.rgb[0].height);
  for (std::size_t t = 1; t < T; ++t) {
    const BBox& prev = pred.back();
    const CropWindow sw = search_window(prev.cx(), prev.cy(), prev.w, prev.h, mc);
    for (std::size_t m = 0; m < 3; ++m) {
      const synth::Image& img = m == 0 ? seq.rgb[t] : (m == 1 ? seq.tir[t] : seq.event[t]);
      sample.search[m] = crop(img, kAllModalities[m], sw.cx, sw.cy, sw.side, sw.out_px);
    }
    const CropSample* one[1] = {&sample};
    const BBox local = decode(model.forward(one), 0, mc.search_px);
    BBox box = sw.to_frame(local);
    // Keep the box inside the frame and within a factor of two of the initial size.
    const double w = std::clamp(box.w, 0.5 * init.w, 2.0 * init.w);
    const double h = std::clamp(box.h, 0.5 * init.h, 2.0 * init.h);
    const double cx = std::clamp(box.cx(), 0.0, fw), cy = std::clamp(box.cy(), 0.0, fh);
    pred.push_back(BBox::from_center(cx, cy, w, h));
  }
  return pred;
}

std::size_t thread_count_from_env() {
  const char* env = std::getenv("QUADSCAN_THREADS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1) throw ConfigError("QUADSCAN_THREADS must be a positive integer, got '" + std::string(env) + "'");
  return static_cast<std::size_t>(n);
}

std::vector<std::vector<BBox>> track_all(const TrackerModel& model, std::span<const synth::Sequence> seqs,
                                         std::size_t threads) {
  if (threads == 0) threads = thread_count_from_env();
  threads = std::max<std::size_t>(1, std::min(threads, seqs.size()));
  std::vector<std::vector<BBox>> out(seqs.size());
  if (threads == 1) {
    for (std::size_t i = 0; i < seqs.size(); ++i) out[i] = track_sequence(model, seqs[i]);
    return out;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < seqs.size(); i += threads) out[i] = track_sequence(model, seqs[i]);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

}  // namespace quadscan::tracker
