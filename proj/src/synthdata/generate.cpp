#include <algorithm>
#include <cmath>

#include "quadscan/rng.hpp"
#include "quadscan/synthdata.hpp"
#include "quadscan/tensor.hpp"

namespace quadscan::synth {

namespace {

struct Color {
  const char* name;
  std::uint8_t r, g, b;
};

constexpr Color kPalette[] = {
    {"red", 220, 40, 40},    {"green", 40, 200, 60},   {"blue", 50, 80, 230},
    {"yellow", 230, 220, 50}, {"cyan", 40, 210, 210},   {"magenta", 210, 50, 200},
    {"orange", 240, 140, 30}, {"white", 235, 235, 235},
};
constexpr std::size_t kColors = sizeof(kPalette) / sizeof(kPalette[0]);

struct Object {
  std::size_t color = 0;
  double w = 0, h = 0;
  double temperature = 0;
  std::vector<double> xs, ys;  // top-left per frame
};

std::uint8_t clamp_u8(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

// Moves with a bounce at the frame border. `jitter` is per-frame positional noise.
void simulate(Object& o, double x, double y, double vx, double vy, double jitter,
              const ScenarioConfig& cfg, Rng& rng) {
  const double max_x = static_cast<double>(cfg.width) - o.w;
  const double max_y = static_cast<double>(cfg.height) - o.h;
  for (std::size_t t = 0; t < cfg.frames; ++t) {
    if (t > 0) {
      x += vx + (jitter > 0 ? jitter * rng.normal() : 0.0);
      y += vy + (jitter > 0 ? jitter * rng.normal() : 0.0);
      if (x < 0) x = -x, vx = -vx;
      if (x > max_x) x = 2 * max_x - x, vx = -vx;
      if (y < 0) y = -y, vy = -vy;
      if (y > max_y) y = 2 * max_y - y, vy = -vy;
      x = std::clamp(x, 0.0, max_x);
      y = std::clamp(y, 0.0, max_y);
    }
    o.xs.push_back(x);
    o.ys.push_back(y);
  }
}

void draw_rgb(Image& img, const Object& o, std::size_t t) {
  const auto x0 = static_cast<std::size_t>(std::lround(o.xs[t]));
  const auto y0 = static_cast<std::size_t>(std::lround(o.ys[t]));
  const auto w = static_cast<std::size_t>(o.w), h = static_cast<std::size_t>(o.h);
  const Color& c = kPalette[o.color];
  for (std::size_t y = y0; y < std::min(y0 + h, img.height); ++y) {
    for (std::size_t x = x0; x < std::min(x0 + w, img.width); ++x) {
      // 4-pixel checker texture anchored at the object corner.
      const double shade = (((x - x0) / 4 + (y - y0) / 4) % 2 == 0) ? 1.0 : 0.7;
      img.at(x, y, 0) = clamp_u8(c.r * shade);
      img.at(x, y, 1) = clamp_u8(c.g * shade);
      img.at(x, y, 2) = clamp_u8(c.b * shade);
    }
  }
}

void paint_temperature(std::vector<double>& field, std::size_t width, std::size_t height,
                       const Object& o, std::size_t t) {
  const auto x0 = static_cast<std::size_t>(std::lround(o.xs[t]));
  const auto y0 = static_cast<std::size_t>(std::lround(o.ys[t]));
  const auto w = static_cast<std::size_t>(o.w), h = static_cast<std::size_t>(o.h);
  for (std::size_t y = y0; y < std::min(y0 + h, height); ++y) {
    for (std::size_t x = x0; x < std::min(x0 + w, width); ++x) field[y * width + x] = o.temperature;
  }
}

std::vector<double> box_blur3(const std::vector<double>& f, std::size_t width, std::size_t height) {
  std::vector<double> out(f.size());
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      double s = 0;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const auto yy = static_cast<std::size_t>(std::clamp<long>(static_cast<long>(y) + dy, 0, static_cast<long>(height) - 1));
          const auto xx = static_cast<std::size_t>(std::clamp<long>(static_cast<long>(x) + dx, 0, static_cast<long>(width) - 1));
          s += f[yy * width + xx];
        }
      }
      out[y * width + x] = s / 9.0;
    }
  }
  return out;
}

Object make_object(std::size_t color, bool square, Rng& rng) {
  Object o;
  o.color = color;
  if (square) {
    o.w = o.h = static_cast<double>(rng.integer(12, 18));
  } else {
    o.w = static_cast<double>(rng.integer(14, 20));
    o.h = static_cast<double>(rng.integer(10, 13));
  }
  return o;
}

std::size_t other_color(std::size_t avoid, Rng& rng) {
  auto c = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(kColors) - 2));
  return c >= avoid ? c + 1 : c;
}

}  // namespace

std::string_view scenario_name(Scenario s) {
  switch (s) {
    case Scenario::plain: return "plain";
    case Scenario::overexposed_rgb: return "overexposed-rgb";
    case Scenario::low_light: return "low-light";
    case Scenario::similar_distractors: return "similar-distractors";
    case Scenario::static_target: return "static-target";
  }
  return "?";
}

Scenario parse_scenario(std::string_view name) {
  for (auto s : kAllScenarios) {
    if (scenario_name(s) == name) return s;
  }
  throw ConfigError("unknown scenario '" + std::string(name) + "'");
}

int luma(const Image& rgb, std::size_t x, std::size_t y) {
  return (299 * rgb.at(x, y, 0) + 587 * rgb.at(x, y, 1) + 114 * rgb.at(x, y, 2)) / 1000;
}

Image events_between(const Image& previous, const Image& current, int threshold) {
  if (previous.width != current.width || previous.height != current.height ||
      previous.channels != 3 || current.channels != 3) {
    throw ShapeError("events_between: frames must be RGB of equal size");
  }
  Image ev = Image::filled(current.width, current.height, 1, kEventNone);
  for (std::size_t y = 0; y < current.height; ++y) {
    for (std::size_t x = 0; x < current.width; ++x) {
      const int d = luma(current, x, y) - luma(previous, x, y);
      if (d >= threshold) ev.at(x, y) = kEventOn;
      else if (d <= -threshold) ev.at(x, y) = kEventOff;
    }
  }
  return ev;
}

Sequence generate(const ScenarioConfig& cfg, std::uint64_t seed) {
  if (cfg.frames == 0 || cfg.width < 48 || cfg.height < 48) {
    throw ConfigError("generate: need at least one frame and a 48x48 canvas");
  }
  if (cfg.event_threshold < 1 || cfg.event_threshold > 255) {
    throw ConfigError("generate: event threshold must be in [1, 255]");
  }
  Rng rng(seed);
  const std::size_t W = cfg.width, H = cfg.height, T = cfg.frames;
  const Scenario sc = cfg.scenario;
  const bool is_static = sc == Scenario::static_target;

  // Fixed-pattern background: identical in every frame.
  Image background = Image::filled(W, H, 3);
  std::vector<double> cold(W * H);
  {
    double base[3];
    for (auto& b : base) b = rng.uniform(40, 90);
    const double tbase = rng.uniform(30, 50);
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        const double ramp = 12.0 * static_cast<double>(x + y) / static_cast<double>(W + H);
        for (std::size_t c = 0; c < 3; ++c) {
          background.at(x, y, c) = clamp_u8(base[c] + ramp + rng.uniform(-8, 8));
        }
        cold[y * W + x] = tbase + 0.5 * ramp;
      }
    }
  }
  std::vector<double> thermal_pattern(W * H);
  for (auto& v : thermal_pattern) v = rng.uniform(-3, 3);

  // Target.
  const std::size_t color = static_cast<std::size_t>(rng.integer(0, kColors - 1));
  const bool square = rng.uniform() < 0.5;
  Object target = make_object(color, square, rng);
  target.temperature = rng.uniform(200, 235);
  const char* directions[4] = {"left", "right", "up", "down"};
  const auto dir = static_cast<std::size_t>(rng.integer(0, 3));
  const double speed = is_static ? 0.0 : rng.uniform(1.0, 2.2);
  const double cross = is_static ? 0.0 : rng.uniform(-0.4, 0.4);
  double vx = 0, vy = 0;
  switch (dir) {
    case 0: vx = -speed, vy = cross; break;
    case 1: vx = speed, vy = cross; break;
    case 2: vy = -speed, vx = cross; break;
    default: vy = speed, vx = cross; break;
  }
  {
    const double x = rng.uniform(8, static_cast<double>(W) - target.w - 8);
    const double y = rng.uniform(8, static_cast<double>(H) - target.h - 8);
    simulate(target, x, y, vx, vy, is_static ? 0.0 : 0.25, cfg, rng);
  }

  // Distractors.
  std::vector<Object> distractors;
  if (sc == Scenario::similar_distractors) {
    const auto n = rng.integer(2, 3);
    for (std::int64_t i = 0; i < n; ++i) {
      Object d = target;
      d.xs.clear();
      d.ys.clear();
      // Parked beside the target's future path, one body width plus a gap away.
      const auto k = static_cast<std::size_t>(rng.integer(static_cast<std::int64_t>(T / 3), static_cast<std::int64_t>(T - 1)));
      const double side = rng.uniform() < 0.5 ? -1.0 : 1.0;
      double x = target.xs[k], y = target.ys[k];
      if (dir < 2) y += side * (target.h + 6);
      else x += side * (target.w + 6);
      x = std::clamp(x, 0.0, static_cast<double>(W) - d.w);
      y = std::clamp(y, 0.0, static_cast<double>(H) - d.h);
      simulate(d, x, y, 0, 0, 0, cfg, rng);
      distractors.push_back(std::move(d));
    }
  } else {
    const auto n = rng.integer(0, 2);
    for (std::int64_t i = 0; i < n; ++i) {
      Object d = make_object(other_color(color, rng), rng.uniform() < 0.5, rng);
      d.temperature = rng.uniform(90, 150);
      const bool moves = !is_static && rng.uniform() < 0.5;
      const double x = rng.uniform(0, static_cast<double>(W) - d.w);
      const double y = rng.uniform(0, static_cast<double>(H) - d.h);
      simulate(d, x, y, moves ? rng.uniform(-1.5, 1.5) : 0.0, moves ? rng.uniform(-1.5, 1.5) : 0.0,
               0.0, cfg, rng);
      distractors.push_back(std::move(d));
    }
  }

  Sequence seq;
  seq.name = std::string(scenario_name(sc));
  seq.language = std::string("the ") + kPalette[color].name + (square ? " square" : " rectangle") +
                 " moving " + (is_static ? "nowhere" : directions[dir]);
  switch (sc) {
    case Scenario::plain: break;
    case Scenario::overexposed_rgb: seq.attributes = {"OE"}; break;
    case Scenario::low_light: seq.attributes = {"LI"}; break;
    case Scenario::similar_distractors: seq.attributes = {"SA"}; break;
    case Scenario::static_target: seq.attributes = {"NM"}; break;
  }

  Rng noise(Rng::derive(seed, 1));
  for (std::size_t t = 0; t < T; ++t) {
    Image rgb = background;
    std::vector<double> temp = cold;
    for (const auto& d : distractors) {
      draw_rgb(rgb, d, t);
      paint_temperature(temp, W, H, d, t);
    }
    draw_rgb(rgb, target, t);
    paint_temperature(temp, W, H, target, t);

    if (sc == Scenario::overexposed_rgb) {
      std::fill(rgb.pixels.begin(), rgb.pixels.end(), std::uint8_t{255});
    } else if (sc == Scenario::low_light) {
      for (auto& p : rgb.pixels) p = clamp_u8(0.02 * p + 10.0 * noise.normal());
    }

    const auto blurred = box_blur3(temp, W, H);
    Image tir = Image::filled(W, H, 1);
    for (std::size_t i = 0; i < W * H; ++i) tir.pixels[i] = clamp_u8(blurred[i] + thermal_pattern[i]);

    seq.event.push_back(t == 0 ? Image::filled(W, H, 1, kEventNone)
                               : events_between(seq.rgb.back(), rgb, cfg.event_threshold));
    seq.rgb.push_back(std::move(rgb));
    seq.tir.push_back(std::move(tir));
    seq.boxes.push_back({std::round(target.xs[t]), std::round(target.ys[t]), target.w, target.h});
  }
  return seq;
}

}  // namespace quadscan::synth
