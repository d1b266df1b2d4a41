#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "quadscan/synthdata.hpp"

namespace quadscan::synth {

namespace fs = std::filesystem;

namespace {

std::string frame_name(std::size_t index, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu.%s", index + 1, ext);
  return buf;
}

// Reads the next whitespace-delimited header token, skipping '#' comments.
std::string header_token(std::istream& is) {
  std::string tok;
  int c;
  while ((c = is.get()) != EOF) {
    if (c == '#') {
      while ((c = is.get()) != EOF && c != '\n') {}
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path.string() + ": cannot open");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    out.push_back(line);
  }
  return out;
}

std::string format_coord(double v) {
  char buf[32];
  if (v == std::floor(v) && std::fabs(v) < 1e9) {
    std::snprintf(buf, sizeof buf, "%.0f", v);
  } else {
    std::snprintf(buf, sizeof buf, "%.4f", v);
  }
  return buf;
}

}  // namespace

Image Image::filled(std::size_t width, std::size_t height, std::size_t channels,
                    std::uint8_t value) {
  return {width, height, channels, std::vector<std::uint8_t>(width * height * channels, value)};
}

void write_pnm(const fs::path& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3) {
    throw std::invalid_argument("write_pnm: only 1 or 3 channels are supported");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  out << (image.channels == 3 ? "P6" : "P5") << '\n'
      << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

Image read_pnm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path.string() + ": cannot open");
  const std::string magic = header_token(in);
  std::size_t channels = 0;
  if (magic == "P6") channels = 3;
  else if (magic == "P5") channels = 1;
  else throw ParseError(path.string() + ": not a binary PPM/PGM (magic '" + magic + "')");

  std::size_t dims[3];
  for (auto& d : dims) {
    const std::string tok = header_token(in);
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), d);
    if (ec != std::errc() || ptr != tok.data() + tok.size()) {
      throw ParseError(path.string() + ": bad header field '" + tok + "'");
    }
  }
  if (dims[2] != 255) throw ParseError(path.string() + ": maxval must be 255");
  Image img = Image::filled(dims[0], dims[1], channels);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) {
    throw ParseError(path.string() + ": truncated pixel data");
  }
  return img;
}

BBox parse_box_line(std::string_view line, const std::string& where) {
  double v[4];
  std::size_t start = 0;
  for (int i = 0; i < 4; ++i) {
    const auto end = i < 3 ? line.find(',', start) : line.size();
    if (end == std::string_view::npos) throw ParseError(where + ": expected 4 comma-separated values");
    std::string field(line.substr(start, end - start));
    while (!field.empty() && std::isspace(static_cast<unsigned char>(field.back()))) field.pop_back();
    std::size_t lead = 0;
    while (lead < field.size() && std::isspace(static_cast<unsigned char>(field[lead]))) ++lead;
    field.erase(0, lead);
    char* stop = nullptr;
    v[i] = std::strtod(field.c_str(), &stop);
    if (field.empty() || stop != field.c_str() + field.size()) {
      throw ParseError(where + ": bad number '" + field + "'");
    }
    start = end + 1;
  }
  return {v[0], v[1], v[2], v[3]};
}

void write_sequence(const fs::path& dir, const Sequence& seq) {
  const std::size_t n = seq.frames();
  if (seq.rgb.size() != n || seq.tir.size() != n || seq.event.size() != n) {
    throw std::invalid_argument("write_sequence: frame counts differ between modalities");
  }
  fs::create_directories(dir / "rgb");
  fs::create_directories(dir / "tir");
  fs::create_directories(dir / "event");
  for (std::size_t i = 0; i < n; ++i) {
    write_pnm(dir / "rgb" / frame_name(i, "ppm"), seq.rgb[i]);
    write_pnm(dir / "tir" / frame_name(i, "pgm"), seq.tir[i]);
    write_pnm(dir / "event" / frame_name(i, "pgm"), seq.event[i]);
  }
  std::ofstream gt(dir / "groundtruth.txt", std::ios::binary);
  for (const auto& b : seq.boxes) {
    gt << format_coord(b.x1) << ',' << format_coord(b.y1) << ',' << format_coord(b.w) << ','
       << format_coord(b.h) << '\n';
  }
  std::ofstream(dir / "language.txt", std::ios::binary) << seq.language << '\n';
  std::ofstream attrs(dir / "attributes.txt", std::ios::binary);
  for (const auto& a : seq.attributes) attrs << a << '\n';
}

Sequence read_sequence(const fs::path& dir) {
  Sequence seq;
  seq.name = dir.filename().string();
  if (seq.name.empty()) seq.name = dir.parent_path().filename().string();

  const fs::path gt_path = dir / "groundtruth.txt";
  const auto gt_lines = lines_of(read_text(gt_path));
  for (std::size_t i = 0; i < gt_lines.size(); ++i) {
    if (gt_lines[i].empty()) continue;
    seq.boxes.push_back(parse_box_line(gt_lines[i], gt_path.string() + ":" + std::to_string(i + 1)));
  }
  if (seq.boxes.empty()) throw ParseError(gt_path.string() + ": no annotations");

  const fs::path lang_path = dir / "language.txt";
  const auto lang_lines = lines_of(read_text(lang_path));
  if (lang_lines.empty() || lang_lines.front().empty()) {
    throw ParseError(lang_path.string() + ":1: empty sentence");
  }
  seq.language = lang_lines.front();

  const fs::path attr_path = dir / "attributes.txt";
  if (fs::exists(attr_path)) {
    for (auto& line : lines_of(read_text(attr_path))) {
      if (!line.empty()) seq.attributes.push_back(line);
    }
  }

  for (std::size_t i = 0; i < seq.boxes.size(); ++i) {
    seq.rgb.push_back(read_pnm(dir / "rgb" / frame_name(i, "ppm")));
    seq.tir.push_back(read_pnm(dir / "tir" / frame_name(i, "pgm")));
    seq.event.push_back(read_pnm(dir / "event" / frame_name(i, "pgm")));
    if (seq.rgb.back().channels != 3 || seq.tir.back().channels != 1 || seq.event.back().channels != 1) {
      throw ParseError(dir.string() + ": frame " + std::to_string(i + 1) + " has the wrong channel count");
    }
  }
  return seq;
}

std::vector<std::string> read_manifest(const fs::path& path) {
  std::vector<std::string> names;
  for (auto& line : lines_of(read_text(path))) {
    if (!line.empty()) names.push_back(line);
  }
  return names;
}

void write_manifest(const fs::path& path, const std::vector<std::string>& names) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  for (const auto& n : names) out << n << '\n';
}

}  // namespace quadscan::synth
