#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "quadscan/bbox.hpp"

namespace quadscan::synth {

/// Malformed file on disk; the message names the file and, where it applies,
/// the line.
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// 8-bit interleaved raster.
struct Image {
  std::size_t width = 0, height = 0, channels = 0;
  std::vector<std::uint8_t> pixels;

  static Image filled(std::size_t width, std::size_t height, std::size_t channels,
                      std::uint8_t value = 0);
  std::uint8_t& at(std::size_t x, std::size_t y, std::size_t c = 0) {
    return pixels[(y * width + x) * channels + c];
  }
  std::uint8_t at(std::size_t x, std::size_t y, std::size_t c = 0) const {
    return pixels[(y * width + x) * channels + c];
  }
  bool operator==(const Image&) const = default;
};

/// Binary PPM (P6) for 3 channels, binary PGM (P5) for 1 channel, maxval 255.
void write_pnm(const std::filesystem::path& path, const Image& image);
Image read_pnm(const std::filesystem::path& path);

enum class Scenario { plain, overexposed_rgb, low_light, similar_distractors, static_target };
inline constexpr std::array<Scenario, 5> kAllScenarios{
    Scenario::plain, Scenario::overexposed_rgb, Scenario::low_light,
    Scenario::similar_distractors, Scenario::static_target};

std::string_view scenario_name(Scenario s);
/// Throws ConfigError naming the unknown scenario.
Scenario parse_scenario(std::string_view name);

struct ScenarioConfig {
  Scenario scenario = Scenario::plain;
  std::size_t frames = 30;
  std::size_t width = 128;
  std::size_t height = 128;
  int event_threshold = 12;
};

/// Event polarity raster: 128 = no event, 255 = brighter, 1 = darker.
inline constexpr std::uint8_t kEventNone = 128;
inline constexpr std::uint8_t kEventOn = 255;
inline constexpr std::uint8_t kEventOff = 1;

struct Sequence {
  std::string name;
  std::vector<Image> rgb;    // 3 channels
  std::vector<Image> tir;    // 1 channel
  std::vector<Image> event;  // 1 channel, polarity coded
  std::vector<BBox> boxes;
  std::string language;
  std::vector<std::string> attributes;

  std::size_t frames() const { return boxes.size(); }
  bool operator==(const Sequence&) const = default;
};

/// Luma used for event generation: (299 r + 587 g + 114 b) / 1000.
int luma(const Image& rgb, std::size_t x, std::size_t y);
/// Polarity of the luma change between two RGB frames, thresholded.
Image events_between(const Image& previous, const Image& current, int threshold);

Sequence generate(const ScenarioConfig& config, std::uint64_t seed);

/// Layout: rgb/%06d.ppm, tir/%06d.pgm, event/%06d.pgm (frames numbered from
/// 1), groundtruth.txt, language.txt, attributes.txt.
void write_sequence(const std::filesystem::path& dir, const Sequence& seq);
Sequence read_sequence(const std::filesystem::path& dir);
/// Parses one "x1,y1,w,h" annotation line.
BBox parse_box_line(std::string_view line, const std::string& where);

/// Per-scenario sequence counts and split settings, read from `key = value`
/// lines: one key per scenario name plus test_fraction, frames,
/// event_threshold.
struct CorpusSpec {
  std::array<std::size_t, 5> counts{4, 4, 4, 4, 4};
  double test_fraction = 0.2;
  std::size_t frames = 30;
  int event_threshold = 12;

  std::size_t total() const;
  static CorpusSpec parse(std::string_view text);
  /// "default", "tiny" or "complementarity"; anything else is read as a file.
  static CorpusSpec named_or_file(const std::string& name);
};

struct Manifest {
  std::vector<std::string> train, test;  // sequence directory names, sorted
};

/// Generates every sequence under `out` and writes train.txt / test.txt.
/// The split is stratified per scenario.
Manifest make_corpus(const CorpusSpec& spec, std::uint64_t seed, const std::filesystem::path& out);
/// Regenerates the corpus member called `name` (e.g. "low-light_003") in
/// memory; identical to what make_corpus writes.
Sequence corpus_member(const CorpusSpec& spec, std::uint64_t seed, const std::string& name);
/// Split only, without touching the disk.
Manifest plan_split(const CorpusSpec& spec, std::uint64_t seed);
std::vector<std::string> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<std::string>& names);

}  // namespace quadscan::synth
