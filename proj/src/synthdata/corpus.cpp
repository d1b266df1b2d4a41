#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "quadscan/rng.hpp"
#include "quadscan/synthdata.hpp"
#include "quadscan/tensor.hpp"

namespace quadscan::synth {

namespace fs = std::filesystem;

namespace {

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::string sequence_name(Scenario s, std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "_%03zu", i);
  return std::string(scenario_name(s)) + buf;
}

// Largest-remainder allocation of round(total * fraction) test slots over the
// scenarios, ties going to the earlier scenario.
std::array<std::size_t, 5> test_quota(const CorpusSpec& spec) {
  const double f = spec.test_fraction;
  const auto want = static_cast<std::size_t>(std::llround(static_cast<double>(spec.total()) * f));
  std::array<std::size_t, 5> quota{};
  std::array<double, 5> rem{};
  std::size_t given = 0;
  for (std::size_t s = 0; s < 5; ++s) {
    const double exact = static_cast<double>(spec.counts[s]) * f;
    quota[s] = static_cast<std::size_t>(std::floor(exact));
    rem[s] = exact - std::floor(exact);
    given += quota[s];
  }
  std::array<std::size_t, 5> order{0, 1, 2, 3, 4};
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return rem[a] > rem[b]; });
  for (std::size_t k = 0; given < want && k < 5; ++k) {
    const auto s = order[k];
    if (quota[s] < spec.counts[s]) ++quota[s], ++given;
  }
  return quota;
}

}  // namespace

std::size_t CorpusSpec::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::size_t{0});
}

CorpusSpec CorpusSpec::parse(std::string_view text) {
  CorpusSpec spec;
  spec.counts.fill(0);
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("corpus spec line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      std::size_t used = 0;
      if (key == "test_fraction") {
        spec.test_fraction = std::stod(value, &used);
        if (spec.test_fraction < 0 || spec.test_fraction > 1) throw ConfigError("test_fraction must be in [0, 1]");
      } else if (key == "frames") {
        spec.frames = std::stoul(value, &used);
        if (spec.frames < 2) throw ConfigError("frames must be at least 2");
      } else if (key == "event_threshold") {
        spec.event_threshold = std::stoi(value, &used);
      } else {
        const auto s = parse_scenario(key);
        if (!value.empty() && value.front() == '-') throw ConfigError("count must be non-negative");
        spec.counts[static_cast<std::size_t>(s)] = std::stoul(value, &used);
      }
      if (used != value.size()) throw ConfigError("trailing characters in '" + value + "'");
    } catch (const ConfigError& e) {
      throw ConfigError("corpus spec line " + std::to_string(lineno) + ": " + e.what());
    } catch (const std::exception&) {
      throw ConfigError("corpus spec line " + std::to_string(lineno) + ": bad value '" + value + "'");
    }
  }
  if (spec.total() == 0) throw ConfigError("corpus spec: every scenario count is zero");
  return spec;
}

CorpusSpec CorpusSpec::named_or_file(const std::string& name) {
  if (name == "default") {
    return parse("plain = 4\noverexposed-rgb = 4\nlow-light = 4\nsimilar-distractors = 4\n"
                 "static-target = 4\ntest_fraction = 0.2\nframes = 30\n");
  }
  if (name == "tiny") {
    return parse("plain = 1\noverexposed-rgb = 1\nlow-light = 1\nsimilar-distractors = 1\n"
                 "static-target = 1\ntest_fraction = 0.4\nframes = 6\n");
  }
  if (name == "complementarity") {
    return parse("plain = 16\noverexposed-rgb = 32\nlow-light = 32\nsimilar-distractors = 32\n"
                 "static-target = 16\ntest_fraction = 0.5\nframes = 20\n");
  }
  std::ifstream in(name);
  if (!in) throw ConfigError("corpus spec '" + name + "' is neither a known name nor a readable file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

Manifest plan_split(const CorpusSpec& spec, std::uint64_t seed) {
  if (spec.total() == 0) throw ConfigError("corpus spec: every scenario count is zero");
  const auto quota = test_quota(spec);
  Manifest m;
  for (std::size_t s = 0; s < 5; ++s) {
    std::vector<std::size_t> idx(spec.counts[s]);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(Rng::derive(seed, 1000 + s));
    for (std::size_t i = idx.size(); i > 1; --i) {
      std::swap(idx[i - 1], idx[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(i - 1)))]);
    }
    for (std::size_t k = 0; k < idx.size(); ++k) {
      (k < quota[s] ? m.test : m.train).push_back(sequence_name(kAllScenarios[s], idx[k]));
    }
  }
  std::sort(m.train.begin(), m.train.end());
  std::sort(m.test.begin(), m.test.end());
  return m;
}

Sequence corpus_member(const CorpusSpec& spec, std::uint64_t seed, const std::string& name) {
  const auto us = name.rfind('_');
  if (us == std::string::npos) throw ConfigError("corpus member '" + name + "': malformed name");
  const Scenario sc = parse_scenario(name.substr(0, us));
  const auto s = static_cast<std::size_t>(sc);
  std::size_t i = 0;
  try {
    i = std::stoul(name.substr(us + 1));
  } catch (const std::exception&) {
    throw ConfigError("corpus member '" + name + "': malformed index");
  }
  if (i >= spec.counts[s]) throw ConfigError("corpus member '" + name + "': index out of range");
  ScenarioConfig cfg;
  cfg.scenario = sc;
  cfg.frames = spec.frames;
  cfg.event_threshold = spec.event_threshold;
  Sequence seq = generate(cfg, Rng::derive(Rng::derive(seed, s), i));
  seq.name = name;
  return seq;
}

Manifest make_corpus(const CorpusSpec& spec, std::uint64_t seed, const fs::path& out) {
  Manifest m = plan_split(spec, seed);
  fs::create_directories(out);
  for (std::size_t s = 0; s < 5; ++s) {
    for (std::size_t i = 0; i < spec.counts[s]; ++i) {
      const auto name = sequence_name(kAllScenarios[s], i);
      write_sequence(out / name, corpus_member(spec, seed, name));
    }
  }
  write_manifest(out / "train.txt", m.train);
  write_manifest(out / "test.txt", m.test);
  return m;
}

}  // namespace quadscan::synth
