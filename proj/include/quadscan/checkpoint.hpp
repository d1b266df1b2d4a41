#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "quadscan/optim.hpp"

namespace quadscan::checkpoint {

// Layout, all integers little-endian u32:
//   "QTCK" version { name_len name ndim dims... f32 payload }*
inline constexpr char kMagic[4] = {'Q', 'T', 'C', 'K'};
inline constexpr std::uint32_t kVersion = 1;

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Record {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;
};

void write(std::ostream& os, const std::vector<Record>& records);
std::vector<Record> read(std::istream& is);

void save(const std::filesystem::path& path, const ParamStore& params);

/// Loads values into existing entries; every entry must be present with the
/// same shape.
void load(const std::filesystem::path& path, ParamStore& params);

std::vector<Record> to_records(const ParamStore& params);

}  // namespace quadscan::checkpoint
