#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "quadscan/cli.hpp"

namespace quadscan::cli {

namespace {

std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

const char* const kTrainingKeys[] = {"epochs", "batch", "lr", "weight_decay", "decay_epoch",
                                     "samples_per_epoch", "clip_norm"};

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

const std::vector<KeyInfo>& known_keys() {
  static const std::vector<KeyInfo> keys{
      {"seed", "1", "master seed; every random stream derives from it"},
      {"out", "", "output directory (gen, train, eval) or CSV file (bench-fusion)"},
      {"spec", "default", "corpus spec: default, tiny, complementarity or a spec file"},
      {"data", "", "corpus directory holding train.txt and test.txt"},
      {"model", "", "training run directory to evaluate"},
      {"split", "test", "manifest evaluated by eval: train or test"},
      {"preset", "toy", "training preset: toy or paper"},
      {"modalities", "rgb,tir,event,lang", "enabled streams"},
      {"mfm_paths", "forward,backward,region,token", "scan paths inside every MFM block"},
      {"mfm_blocks", "0,1", "backbone blocks followed by an MFM block, or none"},
      {"dim", "16", "token width"},
      {"depth", "2", "backbone blocks"},
      {"heads", "2", "attention heads"},
      {"epochs", "", "training epochs"},
      {"batch", "", "samples per step"},
      {"lr", "", "AdamW learning rate"},
      {"weight_decay", "", "AdamW weight decay"},
      {"decay_epoch", "", "epoch from which lr is scaled by 0.1"},
      {"samples_per_epoch", "", "training pairs drawn per epoch"},
      {"clip_norm", "", "gradient norm clip, 0 disables"},
      {"lengths", "80,160,320,640", "tokens per modality measured by bench-fusion"},
      {"bench_modalities", "4", "streams fused by bench-fusion"},
      {"scan_modalities", "4", "streams in the scan-dump geometry"},
      {"scan_template_tokens", "16", "template tokens per stream in the scan-dump geometry"},
  };
  return keys;
}

RunConfig::RunConfig() {
  for (const auto& k : known_keys()) values_[k.name] = {k.default_value, "default"};
}

void RunConfig::set(const std::string& key, const std::string& value, const std::string& source) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError(source + ": unknown key '" + key + "'");
  it->second = {value, source};
}

void RunConfig::load_text(std::string_view text, const std::string& origin) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    const std::string where = origin + ":" + std::to_string(no);
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    if (key.empty()) throw ConfigError(where + ": missing key");
    set(key, trim(std::string_view(body).substr(eq + 1)), where);
  }
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot open config file");
  std::ostringstream ss;
  ss << in.rdbuf();
  load_text(ss.str(), path.string());
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown key '" + key + "'");
  return it->second.value;
}

const std::string& RunConfig::source(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown key '" + key + "'");
  return it->second.source;
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  const std::string& v = get(key);
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(source(key) + ": " + key + " must be a non-negative integer, got '" + v + "'");
  }
  return out;
}

std::size_t RunConfig::get_size(const std::string& key) const { return static_cast<std::size_t>(get_u64(key)); }

double RunConfig::get_double(const std::string& key) const {
  const std::string& v = get(key);
  double out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(source(key) + ": " + key + " must be a number, got '" + v + "'");
  }
  return out;
}

std::vector<std::size_t> RunConfig::get_sizes(const std::string& key) const {
  const std::string& v = get(key);
  std::vector<std::size_t> out;
  if (trim(v) == "none") return out;
  std::size_t start = 0;
  while (start <= v.size()) {
    auto end = v.find(',', start);
    if (end == std::string::npos) end = v.size();
    const std::string item = trim(std::string_view(v).substr(start, end - start));
    std::size_t n = 0;
    auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), n);
    if (item.empty() || ec != std::errc() || ptr != item.data() + item.size()) {
      throw ConfigError(source(key) + ": " + key + " must be a comma-separated list of integers, got '" + v + "'");
    }
    out.push_back(n);
    start = end + 1;
  }
  return out;
}

void RunConfig::resolve_training() {
  const std::string name = get("preset");
  const auto p = tracker::TrainConfig::preset(name);
  const std::string src = "preset " + name;
  const std::string values[] = {std::to_string(p.epochs),        std::to_string(p.batch),
                                format_double(p.lr),             format_double(p.weight_decay),
                                std::to_string(p.decay_epoch),   std::to_string(p.samples_per_epoch),
                                format_double(p.clip_norm)};
  for (std::size_t i = 0; i < std::size(kTrainingKeys); ++i) {
    if (!is_set(kTrainingKeys[i])) set(kTrainingKeys[i], values[i], src);
  }
}

tracker::TrackerConfig RunConfig::tracker_config() const {
  tracker::TrackerConfig c;
  c.modalities = tracker::ModalitySet::parse(get("modalities"));
  c.mfm_paths = mfm::PathSet::parse(get("mfm_paths"));
  c.mfm_blocks = get_sizes("mfm_blocks");
  c.dim = get_size("dim");
  c.depth = get_size("depth");
  c.heads = get_size("heads");
  c.validate();
  return c;
}

tracker::TrainConfig RunConfig::train_config() const {
  auto c = tracker::TrainConfig::preset(get("preset"));
  if (is_set("epochs")) c.epochs = get_size("epochs");
  if (is_set("batch")) c.batch = get_size("batch");
  if (is_set("lr")) c.lr = get_double("lr");
  if (is_set("weight_decay")) c.weight_decay = get_double("weight_decay");
  if (is_set("decay_epoch")) c.decay_epoch = get_size("decay_epoch");
  if (is_set("samples_per_epoch")) c.samples_per_epoch = get_size("samples_per_epoch");
  if (is_set("clip_norm")) c.clip_norm = get_double("clip_norm");
  c.seed = Rng::derive(get_u64("seed"), 1);
  return c;
}

std::string RunConfig::dump() const {
  std::string s;
  for (const auto& k : known_keys()) {
    const auto& e = values_.at(k.name);
    s += k.name + " = " + e.value + "  # " + e.source + "\n";
  }
  return s;
}

}  // namespace quadscan::cli
