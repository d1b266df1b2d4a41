#include "quadscan/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace quadscan::checkpoint {

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

bool get_u32(std::istream& is, std::uint32_t& v) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
  v = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
      (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  return true;
}

std::uint32_t need_u32(std::istream& is, const char* what) {
  std::uint32_t v = 0;
  if (!get_u32(is, v)) throw FormatError(std::string("checkpoint: truncated ") + what);
  return v;
}

}  // namespace

void write(std::ostream& os, const std::vector<Record>& records) {
  os.write(kMagic, 4);
  put_u32(os, kVersion);
  for (const auto& r : records) {
    put_u32(os, static_cast<std::uint32_t>(r.name.size()));
    os.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
    put_u32(os, static_cast<std::uint32_t>(r.dims.size()));
    std::size_t n = 1;
    for (auto d : r.dims) {
      put_u32(os, d);
      n *= d;
    }
    if (n != r.values.size()) throw FormatError("checkpoint: record '" + r.name + "' size mismatch");
    for (float f : r.values) put_u32(os, std::bit_cast<std::uint32_t>(f));
  }
  if (!os) throw FormatError("checkpoint: write failed");
}

std::vector<Record> read(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("checkpoint: bad magic");
  }
  const auto version = need_u32(is, "version");
  if (version != kVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  std::vector<Record> records;
  std::uint32_t name_len = 0;
  while (get_u32(is, name_len)) {
    Record r;
    r.name.resize(name_len);
    if (!is.read(r.name.data(), name_len)) throw FormatError("checkpoint: truncated name");
    const auto ndim = need_u32(is, "ndim");
    std::size_t n = 1;
    for (std::uint32_t i = 0; i < ndim; ++i) {
      r.dims.push_back(need_u32(is, "dims"));
      n *= r.dims.back();
    }
    r.values.resize(n);
    for (auto& f : r.values) f = std::bit_cast<float>(need_u32(is, "payload"));
    records.push_back(std::move(r));
  }
  return records;
}

std::vector<Record> to_records(const ParamStore& params) {
  std::vector<Record> out;
  for (const auto& e : params.entries()) {
    Record r;
    r.name = e.name;
    for (auto d : e.value.shape()) r.dims.push_back(static_cast<std::uint32_t>(d));
    r.values.reserve(e.value.numel());
    for (double v : e.value.data()) r.values.push_back(static_cast<float>(v));
    out.push_back(std::move(r));
  }
  return out;
}

void save(const std::filesystem::path& path, const ParamStore& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("checkpoint: cannot open " + path.string());
  write(os, to_records(params));
}

void load(const std::filesystem::path& path, ParamStore& params) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("checkpoint: cannot open " + path.string());
  const auto records = read(is);
  for (auto& e : params.entries()) {
    const Record* match = nullptr;
    for (const auto& r : records) {
      if (r.name == e.name) match = &r;
    }
    if (match == nullptr) throw FormatError("checkpoint: missing parameter '" + e.name + "'");
    Shape shape(match->dims.begin(), match->dims.end());
    if (shape != e.value.shape()) {
      throw FormatError("checkpoint: parameter '" + e.name + "' has shape " + shape_str(shape) +
                        ", expected " + shape_str(e.value.shape()));
    }
    auto dst = e.value.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = match->values[i];
  }
}

}  // namespace quadscan::checkpoint
