#include <algorithm>
#include <cctype>
#include <cmath>

#include "quadscan/ops.hpp"
#include "quadscan/tracker.hpp"

namespace quadscan::tracker {

namespace {

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from(std::move(shape), std::move(v));
}

Tensor normal_tensor(Shape shape, double stddev, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = stddev * rng.normal();
  return Tensor::from(std::move(shape), std::move(v));
}

double inv_sqrt(std::size_t n) { return 1.0 / std::sqrt(static_cast<double>(n)); }

float normalized(const synth::Image& img, Modality m, std::size_t x, std::size_t y, std::size_t c) {
  const std::uint8_t v = img.at(x, y, c);
  if (m == Modality::event) {
    return v > synth::kEventNone ? 1.0f : (v < synth::kEventNone ? -1.0f : 0.0f);
  }
  return static_cast<float>(v) / 255.0f;
}

}  // namespace

std::string_view modality_name(Modality m) {
  switch (m) {
    case Modality::rgb: return "rgb";
    case Modality::tir: return "tir";
    case Modality::event: return "event";
    case Modality::lang: return "lang";
  }
  return "?";
}

ModalitySet ModalitySet::parse(std::string_view list) {
  ModalitySet s{{false, false, false, false}};
  std::size_t start = 0;
  while (start <= list.size()) {
    auto end = list.find(',', start);
    if (end == std::string_view::npos) end = list.size();
    std::string item(list.substr(start, end - start));
    item.erase(std::remove_if(item.begin(), item.end(), [](unsigned char c) { return std::isspace(c); }),
               item.end());
    if (!item.empty()) {
      Modality m;
      if (item == "rgb" || item == "r") m = Modality::rgb;
      else if (item == "t" || item == "tir" || item == "thermal") m = Modality::tir;
      else if (item == "e" || item == "event") m = Modality::event;
      else if (item == "l" || item == "lang" || item == "language") m = Modality::lang;
      else throw ConfigError("unknown modality '" + item + "'");
      s.on[static_cast<std::size_t>(m)] = true;
    }
    start = end + 1;
  }
  if (s.count() == 0) throw ConfigError("modality list is empty");
  return s;
}

std::size_t ModalitySet::count() const {
  return static_cast<std::size_t>(std::count(on.begin(), on.end(), true));
}

std::vector<Modality> ModalitySet::list() const {
  std::vector<Modality> out;
  for (auto m : kAllModalities) {
    if (has(m)) out.push_back(m);
  }
  return out;
}

std::string ModalitySet::to_string() const {
  std::string s;
  for (auto m : list()) {
    if (!s.empty()) s += ',';
    s += modality_name(m);
  }
  return s;
}

TokenGeometry TrackerConfig::geometry() const {
  const std::size_t nz = template_side() * template_side();
  return {modalities.count(), nz, 4 * nz};
}

mfm::MfmConfig TrackerConfig::mfm_config() const {
  return {dim, mfm_expand, mfm_state, mfm_conv, mfm_paths};
}

void TrackerConfig::validate() const {
  if (patch == 0 || template_px == 0 || template_px % patch != 0) {
    throw ConfigError("template_px must be a positive multiple of the patch size");
  }
  if (search_px != 2 * template_px) throw ConfigError("search_px must be twice template_px");
  if (dim == 0 || heads == 0 || dim % heads != 0) throw ConfigError("dim must be a positive multiple of heads");
  if (depth == 0) throw ConfigError("depth must be at least 1");
  if (modalities.count() == 0) throw ConfigError("no modality enabled");
  for (auto b : mfm_blocks) {
    if (b >= depth) throw ConfigError("mfm block index " + std::to_string(b) + " exceeds depth");
  }
  if (!mfm_blocks.empty() && mfm_paths.count() == 0) throw ConfigError("mfm blocks need at least one path");
  if (template_factor <= 0) throw ConfigError("template_factor must be positive");
}

const std::vector<std::string>& vocabulary() {
  static const std::vector<std::string> words{
      "<unk>", "the",     "moving", "red",    "green",     "blue",  "yellow", "cyan", "magenta",
      "orange", "white",  "square", "rectangle", "left",   "right", "up",     "down", "nowhere"};
  return words;
}

std::vector<int> tokenize(std::string_view sentence) {
  const auto& vocab = vocabulary();
  std::vector<int> ids;
  std::string word;
  auto flush = [&] {
    if (word.empty()) return;
    auto it = std::find(vocab.begin(), vocab.end(), word);
    ids.push_back(it == vocab.end() ? 0 : static_cast<int>(it - vocab.begin()));
    word.clear();
  };
  for (char ch : sentence) {
    if (std::isalpha(static_cast<unsigned char>(ch))) {
      word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    } else {
      flush();
    }
  }
  flush();
  return ids;
}

Plane to_plane(const synth::Image& img, Modality m) {
  Plane p{img.width, img.height, img.channels, std::vector<float>(img.pixels.size())};
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      for (std::size_t c = 0; c < img.channels; ++c) {
        p.values[(y * img.width + x) * img.channels + c] = normalized(img, m, x, y, c);
      }
    }
  }
  return p;
}

Plane crop(const synth::Image& img, Modality m, double cx, double cy, double side, std::size_t out_px) {
  Plane p{out_px, out_px, img.channels, std::vector<float>(out_px * out_px * img.channels, 0.0f)};
  const double step = side / static_cast<double>(out_px);
  const double left = cx - 0.5 * side, top = cy - 0.5 * side;
  const auto W = static_cast<long>(img.width), H = static_cast<long>(img.height);
  for (std::size_t j = 0; j < out_px; ++j) {
    const double sy = top + (static_cast<double>(j) + 0.5) * step - 0.5;
    const long y0 = static_cast<long>(std::floor(sy));
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t i = 0; i < out_px; ++i) {
      const double sx = left + (static_cast<double>(i) + 0.5) * step - 0.5;
      const long x0 = static_cast<long>(std::floor(sx));
      const double fx = sx - static_cast<double>(x0);
      for (std::size_t c = 0; c < img.channels; ++c) {
        double acc = 0.0;
        for (int dy = 0; dy <= 1; ++dy) {
          const long yy = y0 + dy;
          if (yy < 0 || yy >= H) continue;
          const double wy = dy ? fy : 1.0 - fy;
          for (int dx = 0; dx <= 1; ++dx) {
            const long xx = x0 + dx;
            if (xx < 0 || xx >= W) continue;
            const double wx = dx ? fx : 1.0 - fx;
            acc += wy * wx * normalized(img, m, static_cast<std::size_t>(xx), static_cast<std::size_t>(yy), c);
          }
        }
        p.values[(j * out_px + i) * img.channels + c] = static_cast<float>(acc);
      }
    }
  }
  return p;
}

BBox CropWindow::to_crop(const BBox& b) const {
  const double s = scale();
  return {(b.x1 - (cx - 0.5 * side)) * s, (b.y1 - (cy - 0.5 * side)) * s, b.w * s, b.h * s};
}

BBox CropWindow::to_frame(const BBox& b) const {
  const double s = 1.0 / scale();
  return {b.x1 * s + cx - 0.5 * side, b.y1 * s + cy - 0.5 * side, b.w * s, b.h * s};
}

CropWindow template_window(const BBox& box, const TrackerConfig& config) {
  const double side = config.template_factor * std::sqrt(std::max(box.area(), 1.0));
  return {box.cx(), box.cy(), side, config.template_px};
}

CropWindow search_window(double cx, double cy, double w, double h, const TrackerConfig& config) {
  const double side = config.template_factor * std::sqrt(std::max(w * h, 1.0)) *
                      static_cast<double>(config.search_px) / static_cast<double>(config.template_px);
  return {cx, cy, side, config.search_px};
}

CropSample make_sample(const synth::Sequence& seq, std::size_t template_frame,
                       const CropWindow& tw, std::size_t search_frame, const CropWindow& sw) {
  CropSample s;
  const synth::Image* frames[3] = {&seq.rgb[template_frame], &seq.tir[template_frame],
                                   &seq.event[template_frame]};
  const synth::Image* search[3] = {&seq.rgb[search_frame], &seq.tir[search_frame],
                                   &seq.event[search_frame]};
  for (std::size_t m = 0; m < 3; ++m) {
    const auto mod = kAllModalities[m];
    s.templ[m] = crop(*frames[m], mod, tw.cx, tw.cy, tw.side, tw.out_px);
    s.search[m] = crop(*search[m], mod, sw.cx, sw.cy, sw.side, sw.out_px);
  }
  s.words = tokenize(seq.language);
  return s;
}

TrackerModel::TrackerModel(TrackerConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  const std::size_t C = config_.dim, F = 3 * config_.patch * config_.patch;
  const std::size_t nz = config_.template_side() * config_.template_side();
  const std::size_t nx = config_.search_side() * config_.search_side();
  patch_w_ = store_.add("embed.patch_w", uniform_tensor({F, C}, inv_sqrt(F), rng));
  patch_b_ = store_.add("embed.patch_b", Tensor::zeros({C}));
  pos_z_ = store_.add("embed.pos_z", normal_tensor({nz, C}, 0.02, rng));
  pos_x_ = store_.add("embed.pos_x", normal_tensor({nx, C}, 0.02, rng));
  words_ = store_.add("embed.words", uniform_tensor({vocabulary().size(), C}, 0.5, rng));

  const std::size_t hidden = config_.mlp_ratio * C;
  for (std::size_t i = 0; i < config_.depth; ++i) {
    const std::string p = "block" + std::to_string(i) + ".";
    Block b;
    b.ln1_g = store_.add(p + "ln1_g", Tensor::full({C}, 1.0));
    b.ln1_b = store_.add(p + "ln1_b", Tensor::zeros({C}));
    b.wq = store_.add(p + "wq", uniform_tensor({C, C}, inv_sqrt(C), rng));
    b.bq = store_.add(p + "bq", Tensor::zeros({C}));
    b.wk = store_.add(p + "wk", uniform_tensor({C, C}, inv_sqrt(C), rng));
    b.bk = store_.add(p + "bk", Tensor::zeros({C}));
    b.wv = store_.add(p + "wv", uniform_tensor({C, C}, inv_sqrt(C), rng));
    b.bv = store_.add(p + "bv", Tensor::zeros({C}));
    b.wo = store_.add(p + "wo", uniform_tensor({C, C}, inv_sqrt(C), rng));
    b.bo = store_.add(p + "bo", Tensor::zeros({C}));
    b.ln2_g = store_.add(p + "ln2_g", Tensor::full({C}, 1.0));
    b.ln2_b = store_.add(p + "ln2_b", Tensor::zeros({C}));
    b.w1 = store_.add(p + "w1", uniform_tensor({C, hidden}, inv_sqrt(C), rng));
    b.b1 = store_.add(p + "b1", Tensor::zeros({hidden}));
    b.w2 = store_.add(p + "w2", uniform_tensor({hidden, C}, inv_sqrt(hidden), rng));
    b.b2 = store_.add(p + "b2", Tensor::zeros({C}));
    blocks_.push_back(std::move(b));
  }
  mfm_.resize(config_.depth);
  for (auto i : config_.mfm_blocks) {
    if (!mfm_[i]) mfm_[i] = mfm::MfmBlock::create(store_, "mfm" + std::to_string(i), config_.mfm_config(), rng);
  }

  norm_g_ = store_.add("head.norm_g", Tensor::full({C}, 1.0));
  norm_b_ = store_.add("head.norm_b", Tensor::zeros({C}));
  const std::size_t Hh = config_.head_hidden;
  const char* names[3] = {"heat", "offset", "size"};
  const std::size_t outs[3] = {1, 2, 2};
  // Heat starts near a 0.1 prior, size near a quarter of the search side.
  const double out_bias[3] = {-2.19, 0.0, -1.0986};
  for (std::size_t k = 0; k < 3; ++k) {
    const std::string p = std::string("head.") + names[k] + ".";
    conv_w_[k] = store_.add(p + "conv_w", uniform_tensor({9 * C, Hh}, inv_sqrt(9 * C), rng));
    conv_b_[k] = store_.add(p + "conv_b", Tensor::zeros({Hh}));
    out_w_[k] = store_.add(p + "out_w", uniform_tensor({Hh, outs[k]}, (k == 0 ? 1.0 : 0.1) * inv_sqrt(Hh), rng));
    out_b_[k] = store_.add(p + "out_b", Tensor::full({outs[k]}, out_bias[k]));
  }
}

Tensor TrackerModel::embed(std::span<const CropSample* const> batch) const {
  const auto& cfg = config_;
  const std::size_t B = batch.size(), P = cfg.patch, C = cfg.dim;
  const std::size_t sz = cfg.template_side(), sx = cfg.search_side();
  const std::size_t Nz = sz * sz, N = Nz + sx * sx, F = 3 * P * P;
  if (B == 0) throw ShapeError("embed: empty batch");

  // Visual streams to embed; RGB is also needed as the language stream's search half.
  std::vector<std::size_t> vis;
  if (cfg.modalities.has(Modality::rgb) || cfg.modalities.has(Modality::lang)) vis.push_back(0);
  if (cfg.modalities.has(Modality::tir)) vis.push_back(1);
  if (cfg.modalities.has(Modality::event)) vis.push_back(2);
  const std::size_t V = vis.size();

  Tensor table;
  std::size_t lang_base = 0;
  std::vector<Tensor> parts;
  if (V > 0) {
    std::vector<double> feats(B * V * N * F);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t vi = 0; vi < V; ++vi) {
        const Plane& tp = batch[b]->templ[vis[vi]];
        const Plane& sp = batch[b]->search[vis[vi]];
        if (tp.width != cfg.template_px || sp.width != cfg.search_px) {
          throw ShapeError("embed: crop resolution does not match the configured geometry");
        }
        for (std::size_t n = 0; n < N; ++n) {
          const bool is_t = n < Nz;
          const Plane& pl = is_t ? tp : sp;
          const std::size_t side = is_t ? sz : sx, k = is_t ? n : n - Nz;
          const std::size_t pr = k / side, pc = k % side;
          double* row = feats.data() + ((b * V + vi) * N + n) * F;
          for (std::size_t py = 0; py < P; ++py) {
            for (std::size_t px = 0; px < P; ++px) {
              for (std::size_t ch = 0; ch < 3; ++ch) {
                *row++ = pl.at(pc * P + px, pr * P + py, pl.channels == 3 ? ch : 0);
              }
            }
          }
        }
      }
    }
    Tensor e = ops::linear(Tensor::from({B * V * N, F}, std::move(feats)), patch_w_, patch_b_);
    const Tensor pos_parts[2] = {pos_z_, pos_x_};
    Tensor pos = ops::concat_rows(pos_parts);
    parts.push_back(ops::reshape(ops::add(ops::reshape(e, {B * V, N, C}), pos), {B * V * N, C}));
    lang_base = B * V * N;
  }
  if (cfg.modalities.has(Modality::lang)) {
    const std::size_t vocab = vocabulary().size();
    std::vector<double> bag(B * vocab, 0.0);
    for (std::size_t b = 0; b < B; ++b) {
      const auto& w = batch[b]->words;
      for (int id : w) bag[b * vocab + static_cast<std::size_t>(id)] += 1.0 / static_cast<double>(w.size());
    }
    Tensor sentence = ops::matmul(Tensor::from({B, vocab}, std::move(bag)), words_);
    std::vector<std::int64_t> rep(B * Nz);
    for (std::size_t i = 0; i < rep.size(); ++i) rep[i] = static_cast<std::int64_t>(i / Nz);
    Tensor zl = ops::add(ops::reshape(ops::gather_rows(sentence, rep), {B, Nz, C}), pos_z_);
    parts.push_back(ops::reshape(zl, {B * Nz, C}));
  }
  table = parts.size() == 1 ? parts[0] : ops::concat_rows(parts);

  std::vector<std::int64_t> idx;
  idx.reserve(B * cfg.modalities.count() * N);
  for (std::size_t b = 0; b < B; ++b) {
    for (auto m : cfg.modalities.list()) {
      if (m == Modality::lang) {
        for (std::size_t n = 0; n < N; ++n) {
          idx.push_back(static_cast<std::int64_t>(n < Nz ? lang_base + b * Nz + n : (b * V) * N + n));
        }
      } else {
        const auto vi = static_cast<std::size_t>(
            std::find(vis.begin(), vis.end(), static_cast<std::size_t>(m)) - vis.begin());
        for (std::size_t n = 0; n < N; ++n) idx.push_back(static_cast<std::int64_t>((b * V + vi) * N + n));
      }
    }
  }
  return ops::gather_rows(table, idx);
}

Tensor TrackerModel::vit_block(const Tensor& x, const Block& blk) const {
  const std::size_t N = config_.geometry().tokens_per_modality();
  Tensor a = ops::layernorm(x, blk.ln1_g, blk.ln1_b);
  Tensor att = ops::grouped_attention(ops::linear(a, blk.wq, blk.bq), ops::linear(a, blk.wk, blk.bk),
                                      ops::linear(a, blk.wv, blk.bv), N, config_.heads);
  Tensor h = ops::add(x, ops::linear(att, blk.wo, blk.bo));
  Tensor m = ops::layernorm(h, blk.ln2_g, blk.ln2_b);
  return ops::add(h, ops::linear(ops::silu(ops::linear(m, blk.w1, blk.b1)), blk.w2, blk.b2));
}

Tensor TrackerModel::backbone(const Tensor& tokens, std::size_t batch) const {
  const TokenGeometry geo = config_.geometry();
  if (tokens.ndim() != 2 || tokens.dim(0) != batch * geo.total_tokens()) {
    throw ShapeError("backbone: token matrix does not match the batch geometry");
  }
  Tensor x = tokens;
  for (std::size_t i = 0; i < config_.depth; ++i) {
    x = vit_block(x, blocks_[i]);
    if (mfm_[i]) x = mfm::mfm_forward(x, geo, *mfm_[i]);
  }
  return x;
}

Tensor TrackerModel::merge(const Tensor& tokens, std::size_t batch) const {
  const TokenGeometry geo = config_.geometry();
  const std::size_t M = geo.modalities, N = geo.tokens_per_modality();
  const std::size_t Nz = geo.template_tokens, Nx = geo.search_tokens;
  Tensor sum;
  for (std::size_t m = 0; m < M; ++m) {
    std::vector<std::int64_t> idx(batch * Nx);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t j = 0; j < Nx; ++j) idx[b * Nx + j] = static_cast<std::int64_t>((b * M + m) * N + Nz + j);
    }
    Tensor part = ops::gather_rows(tokens, idx);
    sum = sum.defined() ? ops::add(sum, part) : part;
  }
  return M == 1 ? sum : ops::scale(sum, 1.0 / static_cast<double>(M));
}

HeadOutput TrackerModel::head(const Tensor& tokens, std::size_t batch) const {
  const std::size_t G = config_.search_side(), Nx = G * G, C = config_.dim;
  Tensor f = ops::layernorm(merge(tokens, batch), norm_g_, norm_b_);
  // 3x3 neighbourhood of every cell, zero outside the grid.
  std::vector<std::int64_t> idx;
  idx.reserve(batch * Nx * 9);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t r = 0; r < G; ++r) {
      for (std::size_t c = 0; c < G; ++c) {
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const long rr = static_cast<long>(r) + dy, cc = static_cast<long>(c) + dx;
            const bool inside = rr >= 0 && cc >= 0 && rr < static_cast<long>(G) && cc < static_cast<long>(G);
            idx.push_back(inside ? static_cast<std::int64_t>(b * Nx + static_cast<std::size_t>(rr) * G +
                                                             static_cast<std::size_t>(cc))
                                 : -1);
          }
        }
      }
    }
  }
  Tensor cols = ops::reshape(ops::gather_rows(f, idx), {batch * Nx, 9 * C});
  Tensor outs[3];
  for (std::size_t k = 0; k < 3; ++k) {
    Tensor h = ops::silu(ops::linear(cols, conv_w_[k], conv_b_[k]));
    outs[k] = ops::linear(h, out_w_[k], out_b_[k]);
  }
  return {outs[0], outs[1], ops::sigmoid(outs[2]), batch, G};
}

HeadOutput TrackerModel::forward(std::span<const CropSample* const> batch) const {
  return head(backbone(embed(batch), batch.size()), batch.size());
}

}  // namespace quadscan::tracker
