#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "quadscan/training.hpp"

namespace quadscan::cli {

struct KeyInfo {
  std::string name;
  std::string default_value;  // empty means "taken from the training preset" or "unset"
  std::string help;
};

/// Every key RunConfig accepts, in dump order.
const std::vector<KeyInfo>& known_keys();

/// `key = value` settings with '#' comments. Later sources override earlier
/// ones; each value remembers where it came from.
class RunConfig {
 public:
  RunConfig();

  void load_file(const std::filesystem::path& path);
  void load_text(std::string_view text, const std::string& origin);
  /// Throws ConfigError for unknown keys.
  void set(const std::string& key, const std::string& value, const std::string& source);

  const std::string& get(const std::string& key) const;
  const std::string& source(const std::string& key) const;
  bool is_set(const std::string& key) const { return !get(key).empty(); }

  std::uint64_t get_u64(const std::string& key) const;
  std::size_t get_size(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::vector<std::size_t> get_sizes(const std::string& key) const;

  /// Fills unset training keys from the named preset.
  void resolve_training();
  tracker::TrackerConfig tracker_config() const;
  tracker::TrainConfig train_config() const;

  /// One `key = value  # source` line per key.
  std::string dump() const;

 private:
  struct Entry {
    std::string value;
    std::string source;
  };
  std::map<std::string, Entry> values_;
};

/// Entry point behind the quadscan tool. Returns the process exit code:
/// 0 success, 1 runtime failure, 2 usage or configuration error.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace quadscan::cli
