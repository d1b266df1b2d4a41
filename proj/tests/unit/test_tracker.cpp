#include <cmath>

#include "doctest.h"
#include "gradcheck.hpp"
#include "quadscan/eval.hpp"
#include "quadscan/ops.hpp"
#include "quadscan/training.hpp"

using namespace quadscan;
using namespace quadscan::tracker;
using quadscan::testing::gradcheck;
using quadscan::testing::random_tensor;

namespace {

synth::Sequence toy_sequence(synth::Scenario s, std::uint64_t seed, std::size_t frames = 6) {
  synth::ScenarioConfig c;
  c.scenario = s;
  c.frames = frames;
  return synth::generate(c, seed);
}

CropSample sample_at(const synth::Sequence& seq, std::size_t frame, const TrackerConfig& cfg) {
  const BBox& gt = seq.boxes[frame];
  return make_sample(seq, 0, template_window(seq.boxes[0], cfg), frame,
                     search_window(gt.cx() + 3, gt.cy() - 2, gt.w, gt.h, cfg));
}

HeadOutput blank_head(std::size_t batch, std::size_t grid) {
  const std::size_t n = batch * grid * grid;
  return {Tensor::zeros({n, 1}), Tensor::zeros({n, 2}), Tensor::full({n, 2}, 0.5), batch, grid};
}

// Rows of stream m in the canonical layout for a single sample.
std::vector<double> stream_rows(const Tensor& t, std::size_t m, std::size_t N, std::size_t C) {
  auto d = t.data();
  return {d.begin() + static_cast<std::ptrdiff_t>(m * N * C), d.begin() + static_cast<std::ptrdiff_t>((m + 1) * N * C)};
}

double focal_oracle(const std::vector<double>& logits, const std::vector<double>& target) {
  double sum = 0, pos = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    double p = 1.0 / (1.0 + std::exp(-logits[i]));
    p = std::min(std::max(p, 1e-4), 1 - 1e-4);
    if (target[i] == 1.0) {
      sum += (1 - p) * (1 - p) * std::log(p);
      pos += 1;
    } else {
      sum += std::pow(1 - target[i], 4) * p * p * std::log(1 - p);
    }
  }
  return -sum / std::max(pos, 1.0);
}

}  // namespace

TEST_CASE("modality lists") {
  CHECK(ModalitySet::parse("rgb,t,e,l") == ModalitySet::all());
  const auto s = ModalitySet::parse("rgb, thermal");
  CHECK(s.count() == 2);
  CHECK(s.to_string() == "rgb,tir");
  CHECK(ModalitySet::parse("l").list() == std::vector<Modality>{Modality::lang});
  CHECK_THROWS_AS(ModalitySet::parse("rgb,depth"), ConfigError);
  CHECK_THROWS_AS(ModalitySet::parse(""), ConfigError);
}

TEST_CASE("config validation") {
  TrackerConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.geometry().template_tokens == 16);
  CHECK(c.geometry().search_tokens == 64);
  CHECK(c.geometry().tokens_per_modality() == 80);
  c.mfm_blocks = {2};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrackerConfig{};
  c.search_px = 48;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("tokenizer") {
  CHECK(tokenize("The RED, square.") == tokenize("the red square"));
  const auto ids = tokenize("the red square moving left");
  REQUIRE(ids.size() == 5);
  CHECK(vocabulary()[static_cast<std::size_t>(ids[1])] == "red");
  CHECK(tokenize("the purple blob")[1] == 0);
}

TEST_CASE("crop of the full frame at native scale reproduces the frame") {
  const auto seq = toy_sequence(synth::Scenario::plain, 3, 2);
  const auto& img = seq.rgb[0];
  const Plane full = to_plane(img, Modality::rgb);
  const Plane c = crop(img, Modality::rgb, 64, 64, 128, 128);
  REQUIRE(c.values.size() == full.values.size());
  for (std::size_t i = 0; i < c.values.size(); ++i) REQUIRE(c.values[i] == doctest::Approx(full.values[i]).epsilon(1e-6));
  // A half-scale crop averages 2x2 blocks.
  const Plane half = crop(img, Modality::rgb, 64, 64, 128, 64);
  CHECK(half.at(5, 7, 1) == doctest::Approx((full.at(10, 14, 1) + full.at(11, 14, 1) + full.at(10, 15, 1) +
                                             full.at(11, 15, 1)) / 4).epsilon(1e-5));
  // Far outside the frame everything reads as zero.
  const Plane out = crop(img, Modality::tir, -500, -500, 32, 8);
  for (float v : out.values) CHECK(v == 0.0f);
}

TEST_CASE("event planes are signed") {
  synth::Image ev = synth::Image::filled(2, 1, 1, synth::kEventNone);
  ev.at(0, 0) = synth::kEventOn;
  ev.at(1, 0) = synth::kEventOff;
  const Plane p = to_plane(ev, Modality::event);
  CHECK(p.at(0, 0, 0) == 1.0f);
  CHECK(p.at(1, 0, 0) == -1.0f);
}

TEST_CASE("crop windows map boxes both ways") {
  const CropWindow w{50, 40, 32, 64};
  const BBox b{45, 30, 8, 12};
  const BBox c = w.to_crop(b);
  CHECK(c.x1 == doctest::Approx((45 - 34) * 2.0));
  CHECK(c.w == doctest::Approx(16));
  const BBox back = w.to_frame(c);
  CHECK(back.x1 == doctest::Approx(b.x1));
  CHECK(back.h == doctest::Approx(b.h));
}

TEST_CASE("decode hand case") {
  auto out = blank_head(1, 8);
  out.heat_logits.mutable_data()[2 * 8 + 3] = 1.0;
  for (auto& v : out.size.mutable_data()) v = 0.25;
  const BBox b = decode(out, 0, 64);
  CHECK(b.cx() == 28.0);
  CHECK(b.cy() == 20.0);
  CHECK(b.w == 16.0);
  CHECK(b.h == 16.0);
}

TEST_CASE("argmax ties go to the lowest index") {
  auto out = blank_head(2, 8);
  auto heat = out.heat_logits.mutable_data();
  heat[64 + 10] = 3.0;
  heat[64 + 40] = 3.0;
  CHECK(argmax_cell(out, 0) == 0);
  CHECK(argmax_cell(out, 1) == 10);
}

TEST_CASE("encode inverts decode") {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const BBox box = BBox::from_center(rng.uniform(0.5, 63.5), rng.uniform(0.5, 63.5), rng.uniform(4, 40),
                                       rng.uniform(4, 40));
    const CellTarget t = encode(box, 8, 64);
    CHECK(std::fabs(t.off_x) <= 0.5);
    CHECK(std::fabs(t.off_y) <= 0.5);
    auto out = blank_head(1, 8);
    out.heat_logits.mutable_data()[t.cell] = 1.0;
    out.offset.mutable_data()[2 * t.cell] = t.off_x;
    out.offset.mutable_data()[2 * t.cell + 1] = t.off_y;
    out.size.mutable_data()[2 * t.cell] = t.size_w;
    out.size.mutable_data()[2 * t.cell + 1] = t.size_h;
    const BBox d = decode(out, 0, 64);
    CHECK(d.x1 == doctest::Approx(box.x1).epsilon(1e-12));
    CHECK(d.y1 == doctest::Approx(box.y1).epsilon(1e-12));
    CHECK(d.w == doctest::Approx(box.w).epsilon(1e-12));
    CHECK(d.h == doctest::Approx(box.h).epsilon(1e-12));
  }
}

TEST_CASE("gaussian target") {
  TrackerConfig cfg;
  const BBox box = BBox::from_center(28, 20, 16, 16);
  const auto heat = gaussian_target(box, cfg);
  REQUIRE(heat.size() == 64);
  CHECK(heat[2 * 8 + 3] == 1.0);
  CHECK(std::count(heat.begin(), heat.end(), 1.0) == 1);
  // Radius one cell: the 3x3 neighbourhood is positive and nothing else.
  std::size_t nonzero = 0;
  for (std::size_t i = 0; i < heat.size(); ++i) {
    if (heat[i] > 0) {
      ++nonzero;
      CHECK(std::abs(static_cast<int>(i / 8) - 2) <= 1);
      CHECK(std::abs(static_cast<int>(i % 8) - 3) <= 1);
    }
  }
  CHECK(nonzero == 9);
  CHECK(heat[2 * 8 + 4] == doctest::Approx(std::exp(-1.0 / (2 * 0.5 * 0.5))));
}

TEST_CASE("giou hand case and bounds") {
  CHECK(giou({0, 0, 2, 2}, {2, 2, 2, 2}) == doctest::Approx(-0.5).epsilon(1e-15));
  const std::vector<double> target{2, 2, 4, 4};
  const Tensor pred = Tensor::from({1, 4}, {0, 0, 2, 2});
  CHECK(giou_loss(pred, target).item() == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(giou({1, 1, 3, 3}, {1, 1, 3, 3}) == doctest::Approx(1.0));
  Rng rng(8);
  for (int i = 0; i < 2000; ++i) {
    const BBox a{rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(0.1, 8), rng.uniform(0.1, 8)};
    const BBox b{rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(0.1, 8), rng.uniform(0.1, 8)};
    const double g = giou(a, b);
    CHECK(g > -1.0);
    CHECK(g <= 1.0);
    CHECK(g <= eval::iou(a, b) + 1e-12);
    CHECK(g == doctest::Approx(giou(b, a)).epsilon(1e-12));
  }
}

TEST_CASE("focal loss matches a direct evaluation") {
  Rng rng(2);
  std::vector<double> logits(64), target(64, 0.0);
  for (auto& v : logits) v = rng.uniform(-6, 6);
  logits[5] = 20.0;  // clamped
  target[9] = 1.0;
  target[8] = 0.6;
  target[10] = 0.3;
  const Tensor x = Tensor::from({64, 1}, logits);
  CHECK(focal_loss(x, target, 2, 4).item() == doctest::Approx(focal_oracle(logits, target)).epsilon(1e-13));
}

TEST_CASE("focal and giou gradients match finite differences") {
  Rng rng(6);
  Tensor logits = random_tensor({32, 1}, rng, -3, 3);
  std::vector<double> target(32, 0.0);
  target[3] = 1.0;
  target[4] = 0.5;
  target[11] = 1.0;
  auto r1 = gradcheck([&] { return focal_loss(logits, target, 2, 4); }, {logits});
  CHECK(r1.max_rel_error < 1e-4);

  // Overlapping and disjoint pairs, away from coordinate ties.
  Tensor pred = Tensor::from({3, 4}, {0.1, 0.2, 0.6, 0.7, 0.3, 0.1, 0.5, 0.45, 0.0, 0.0, 0.2, 0.3});
  const std::vector<double> tgt{0.2, 0.15, 0.55, 0.8, 0.25, 0.3, 0.6, 0.7, 0.5, 0.6, 0.9, 0.95};
  auto r2 = gradcheck([&] { return giou_loss(pred, tgt); }, {pred});
  CAPTURE(r2.worst);
  CHECK(r2.max_rel_error < 1e-4);
}

TEST_CASE("embedding shapes follow the modality set") {
  const auto seq = toy_sequence(synth::Scenario::plain, 1, 3);
  for (const char* mods : {"rgb", "rgb,t", "rgb,e", "rgb,l", "t,e", "rgb,t,e,l"}) {
    CAPTURE(mods);
    TrackerConfig cfg;
    cfg.modalities = ModalitySet::parse(mods);
    cfg.mfm_blocks = {1};
    TrackerModel model(cfg, 3);
    const CropSample s = sample_at(seq, 2, cfg);
    const CropSample* batch[2] = {&s, &s};
    const Tensor tokens = model.embed(batch);
    CHECK(tokens.dim(0) == 2 * cfg.modalities.count() * 80);
    CHECK(tokens.dim(1) == cfg.dim);
    const HeadOutput out = model.head(model.backbone(tokens, 2), 2);
    CHECK(out.heat_logits.dim(0) == 128);
    CHECK(out.offset.dim(1) == 2);
    CHECK(out.size.dim(1) == 2);
    for (double v : out.size.data()) {
      CHECK(v > 0);
      CHECK(v < 1);
    }
  }
}

TEST_CASE("zero crops embed to the position table") {
  TrackerConfig cfg;
  cfg.modalities = ModalitySet::parse("rgb,t");
  TrackerModel model(cfg, 5);
  CropSample s;
  for (std::size_t m = 0; m < 3; ++m) {
    const std::size_t ch = m == 0 ? 3 : 1;
    s.templ[m] = {32, 32, ch, std::vector<float>(32 * 32 * ch, 0.0f)};
    s.search[m] = {64, 64, ch, std::vector<float>(64 * 64 * ch, 0.0f)};
  }
  const CropSample* batch[1] = {&s};
  const Tensor tokens = model.embed(batch);
  const Tensor pos_z = model.params().get("embed.pos_z"), pos_x = model.params().get("embed.pos_x");
  const std::size_t C = cfg.dim;
  for (std::size_t m = 0; m < 2; ++m) {
    for (std::size_t n = 0; n < 80; ++n) {
      for (std::size_t c = 0; c < C; ++c) {
        const double want = n < 16 ? pos_z.at(n * C + c) : pos_x.at((n - 16) * C + c);
        REQUIRE(tokens.at(((m * 80) + n) * C + c) == want);
      }
    }
  }
}

TEST_CASE("language stream: template from the sentence, search from RGB") {
  TrackerConfig cfg;
  cfg.modalities = ModalitySet::parse("rgb,l");
  TrackerModel model(cfg, 2);
  const auto seq = toy_sequence(synth::Scenario::plain, 4, 2);
  const CropSample s = sample_at(seq, 1, cfg);
  const CropSample* batch[1] = {&s};
  const Tensor tokens = model.embed(batch);
  const std::size_t C = cfg.dim;
  for (std::size_t n = 16; n < 80; ++n) {
    for (std::size_t c = 0; c < C; ++c) REQUIRE(tokens.at((80 + n) * C + c) == tokens.at(n * C + c));
  }
  // Every template row is the same sentence vector plus its position.
  const Tensor pos_z = model.params().get("embed.pos_z");
  const double base = tokens.at(80 * C) - pos_z.at(0);
  for (std::size_t n = 0; n < 16; ++n) CHECK(tokens.at((80 + n) * C) - pos_z.at(n * C) == doctest::Approx(base));
}

TEST_CASE("streams are isolated without MFM and coupled with it") {
  const auto seq = toy_sequence(synth::Scenario::plain, 12, 3);
  TrackerConfig cfg;
  cfg.modalities = ModalitySet::parse("rgb,t");
  const CropSample a = sample_at(seq, 2, cfg);
  CropSample b = a;
  for (auto& v : b.search[1].values) v = 1.0f - v;
  for (auto& v : b.templ[1].values) v *= 0.5f;
  const CropSample* pa[1] = {&a};
  const CropSample* pb[1] = {&b};
  const std::size_t N = 80, C = cfg.dim;

  SUBCASE("no MFM") {
    cfg.mfm_blocks = {};
    TrackerModel model(cfg, 9);
    const Tensor ya = model.backbone(model.embed(pa), 1);
    const Tensor yb = model.backbone(model.embed(pb), 1);
    CHECK(stream_rows(ya, 0, N, C) == stream_rows(yb, 0, N, C));
    CHECK(stream_rows(ya, 1, N, C) != stream_rows(yb, 1, N, C));
  }
  SUBCASE("one MFM block") {
    cfg.mfm_blocks = {0};
    TrackerModel model(cfg, 9);
    const Tensor ya = model.backbone(model.embed(pa), 1);
    const Tensor yb = model.backbone(model.embed(pb), 1);
    const auto ra = stream_rows(ya, 0, N, C), rb = stream_rows(yb, 0, N, C);
    double diff = 0;
    for (std::size_t i = 0; i < ra.size(); ++i) diff = std::max(diff, std::fabs(ra[i] - rb[i]));
    CHECK(diff > 1e-6);
  }
}

TEST_CASE("parameter counts grow with the fusion variant") {
  auto count = [](std::vector<std::size_t> blocks, mfm::Variant v) {
    TrackerConfig cfg;
    cfg.mfm_blocks = std::move(blocks);
    cfg.mfm_paths = mfm::variant_paths(v);
    return TrackerModel(cfg, 1).params().parameter_count();
  };
  const auto base = count({}, mfm::Variant::full);
  const auto mamba = count({0, 1}, mfm::Variant::mamba);
  const auto v2 = count({0, 1}, mfm::Variant::mamba_v2);
  const auto v3 = count({0, 1}, mfm::Variant::mamba_v3);
  const auto full = count({0, 1}, mfm::Variant::full);
  CHECK(full > v3);
  CHECK(v3 >= v2);
  CHECK(v2 > mamba);
  CHECK(mamba > base);
}

TEST_CASE("loss decomposes into its weighted terms") {
  const auto seq = toy_sequence(synth::Scenario::similar_distractors, 2, 5);
  TrackerConfig cfg;
  TrackerModel model(cfg, 4);
  std::vector<CropSample> samples;
  std::vector<BBox> boxes;
  for (std::size_t f = 1; f < 4; ++f) {
    const BBox& gt = seq.boxes[f];
    const CropWindow sw = search_window(gt.cx() + 4, gt.cy() + 1, gt.w, gt.h, cfg);
    samples.push_back(make_sample(seq, 0, template_window(seq.boxes[0], cfg), f, sw));
    boxes.push_back(sw.to_crop(gt));
  }
  std::vector<const CropSample*> ptrs;
  for (auto& s : samples) ptrs.push_back(&s);
  const HeadOutput out = model.forward(ptrs);
  const LossTerms t = compute_loss(out, boxes, cfg);
  CHECK(std::fabs(t.total.item() - (t.cls + 2 * t.iou + 5 * t.l1)) < 1e-7);
  CHECK(t.cls > 0);
  CHECK(t.iou > 0);
  CHECK(t.iou < 2);

  // L1 oracle on normalized corners at the predicted cell.
  double l1 = 0;
  for (std::size_t b = 0; b < 3; ++b) {
    const BBox p = decode(out, b, 64);
    const double pc[4] = {p.x1, p.y1, p.x2(), p.y2()};
    const double gc[4] = {boxes[b].x1, boxes[b].y1, boxes[b].x2(), boxes[b].y2()};
    for (int k = 0; k < 4; ++k) l1 += std::fabs(pc[k] - gc[k]) / 64.0;
  }
  CHECK(t.l1 == doctest::Approx(l1 / 12.0).epsilon(1e-12));
}

TEST_CASE("full pipeline gradient") {
  const auto seq = toy_sequence(synth::Scenario::low_light, 21, 4);
  TrackerConfig cfg;
  cfg.depth = 2;
  cfg.mfm_blocks = {1};
  TrackerModel model(cfg, 13);
  const BBox& gt = seq.boxes[2];
  const CropWindow sw = search_window(gt.cx() + 5, gt.cy() - 3, gt.w, gt.h, cfg);
  const CropSample s = make_sample(seq, 0, template_window(seq.boxes[0], cfg), 2, sw);
  const CropSample* batch[1] = {&s};
  const std::vector<BBox> boxes{sw.to_crop(gt)};
  std::vector<Tensor> params;
  for (auto& e : model.params().entries()) params.push_back(e.value);
  auto r = gradcheck([&] { return compute_loss(model.forward(batch), boxes, cfg).total; }, params, 1e-5, 2, 1e-4);
  CAPTURE(r.worst);
  CAPTURE(r.checked);
  CHECK(r.max_rel_error < 1e-3);
}

TEST_CASE("forward and training are deterministic") {
  std::vector<synth::Sequence> data{toy_sequence(synth::Scenario::plain, 1, 5),
                                    toy_sequence(synth::Scenario::low_light, 2, 5)};
  TrackerConfig cfg;
  cfg.dim = 8;
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch = 2;
  tc.samples_per_epoch = 4;
  TrackerModel m1(cfg, 7), m2(cfg, 7);
  const auto r1 = train(m1, data, tc);
  const auto r2 = train(m2, data, tc);
  REQUIRE(r1.curve.size() == 4);
  for (std::size_t i = 0; i < r1.curve.size(); ++i) CHECK(r1.curve[i].total == r2.curve[i].total);
  for (std::size_t i = 0; i < m1.params().entries().size(); ++i) {
    const auto a = m1.params().entries()[i].value.data(), b = m2.params().entries()[i].value.data();
    CHECK(std::equal(a.begin(), a.end(), b.begin()));
  }
}

TEST_CASE("a non-finite loss aborts training with a diagnostic") {
  std::vector<synth::Sequence> data{toy_sequence(synth::Scenario::plain, 1, 3)};
  TrackerConfig cfg;
  cfg.dim = 8;
  TrackerModel model(cfg, 1);
  model.params().get("head.heat.out_b").mutable_data()[0] = std::nan("");
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch = 1;
  tc.samples_per_epoch = 1;
  try {
    train(model, data, tc);
    FAIL("expected a NumericError");
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("non-finite") != std::string::npos);
    CHECK(msg.find("epoch 0 step 0") != std::string::npos);
  }
}

TEST_CASE("training presets") {
  const auto paper = TrainConfig::preset("paper");
  CHECK(paper.epochs == 15);
  CHECK(paper.batch == 24);
  CHECK(paper.lr == 1e-5);
  CHECK(paper.decay_epoch == 6);
  CHECK(paper.decay_factor == 0.1);
  CHECK(paper.weight_decay == 1e-4);
  const auto toy = TrainConfig::preset("toy");
  CHECK(toy.epochs == 30);
  CHECK(toy.batch == 8);
  CHECK(toy.lr == 3e-4);
  CHECK_THROWS_AS(TrainConfig::preset("huge"), ConfigError);
}

TEST_CASE("tracking starts from the ground truth and keeps frame count") {
  const auto seq = toy_sequence(synth::Scenario::plain, 31, 4);
  TrackerConfig cfg;
  cfg.dim = 8;
  TrackerModel model(cfg, 3);
  const auto pred = track_sequence(model, seq);
  REQUIRE(pred.size() == seq.frames());
  CHECK(pred[0] == seq.boxes[0]);
  for (const auto& b : pred) CHECK(b.valid());
  const std::vector<synth::Sequence> seqs{seq, seq, seq};
  const auto many = track_all(model, seqs, 2);
  for (const auto& p : many) CHECK(p == pred);
}
