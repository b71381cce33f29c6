#include "fmpnet/dataset_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "fmpnet/errors.hpp"

namespace fmpnet {
namespace {

static_assert(std::endian::native == std::endian::little, "FMDS1 I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const char* field) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T)))
    throw FormatError(std::string("FMDS1: truncated stream while reading ") + field);
  return v;
}

}  // namespace

void write_fmds(std::ostream& os, const Dataset& d) {
  if (d.grid.num_classes() > std::numeric_limits<std::uint16_t>::max())
    throw FormatError("FMDS1: too many classes");
  os.write("FMDS", 4);
  put<std::uint16_t>(os, kFmdsVersion);
  put<std::uint16_t>(os, static_cast<std::uint16_t>(d.grid.num_classes()));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(d.frame_length));
  put<double>(os, d.fs);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(d.frames.size()));
  for (const auto& f : d.frames) {
    if (static_cast<int>(f.samples.size()) != d.frame_length)
      throw FormatError("FMDS1: frame length does not match dataset length");
    put<std::uint16_t>(os, static_cast<std::uint16_t>(f.label));
    // std::complex<float> is layout-compatible with float[2]
    os.write(reinterpret_cast<const char*>(f.samples.data()),
             static_cast<std::streamsize>(f.samples.size() * sizeof(f.samples[0])));
  }
  if (!os) throw IoError("FMDS1: write failed");
}

void write_fmds(const std::filesystem::path& path, const Dataset& d) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  write_fmds(os, d);
}

Dataset read_fmds(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "FMDS", 4) != 0)
    throw FormatError("FMDS1: bad magic (expected \"FMDS\")");
  const auto version = get<std::uint16_t>(is, "version");
  if (version != kFmdsVersion)
    throw FormatError("FMDS1: unsupported version " + std::to_string(version));
  const auto classes = get<std::uint16_t>(is, "C");
  if (classes == 0) throw FormatError("FMDS1: header field C is zero");
  const auto length = get<std::uint32_t>(is, "L");
  if (length == 0 || length > (1u << 26)) throw FormatError("FMDS1: header field L is invalid");
  const auto fs = get<double>(is, "fs");
  if (!(fs > 0.0) || !std::isfinite(fs)) throw FormatError("FMDS1: header field fs is invalid");
  const auto count = get<std::uint32_t>(is, "count");

  Dataset d;
  d.frame_length = static_cast<int>(length);
  d.fs = fs;
  d.snr_db = std::numeric_limits<double>::quiet_NaN();
  d.grid = make_grid(classes, 1);
  d.frames.resize(count);
  for (auto& f : d.frames) {
    f.label = get<std::uint16_t>(is, "label");
    if (f.label >= classes)
      throw FormatError("FMDS1: frame label " + std::to_string(f.label) + " >= C");
    f.fs = fs;
    f.samples.resize(length);
    if (!is.read(reinterpret_cast<char*>(f.samples.data()),
                 static_cast<std::streamsize>(length * sizeof(f.samples[0]))))
      throw FormatError("FMDS1: truncated stream while reading samples");
    for (const auto& v : f.samples)
      if (!std::isfinite(v.real()) || !std::isfinite(v.imag()))
        throw FormatError("FMDS1: non-finite sample value");
  }
  return d;
}

Dataset read_fmds(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return read_fmds(is);
}

std::string grid_to_json(const GridMap& grid) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& loc : grid.locations)
    arr.push_back({{"class", loc.class_index}, {"x", loc.x}, {"y", loc.y}});
  return arr.dump(2);
}

GridMap grid_from_json(const std::string& text) {
  GridMap g;
  try {
    const auto arr = nlohmann::json::parse(text);
    if (!arr.is_array()) throw FormatError("grid JSON: top level must be an array");
    for (const auto& e : arr)
      g.locations.push_back({e.at("class").get<int>(), e.at("x").get<double>(), e.at("y").get<double>()});
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("grid JSON: ") + e.what());
  }
  validate(g);
  return g;
}

void write_grid(const std::filesystem::path& path, const GridMap& grid) {
  write_text_file(path, grid_to_json(grid) + "\n");
}

GridMap read_grid(const std::filesystem::path& path) { return grid_from_json(read_text_file(path)); }

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << text;
  if (!os) throw IoError("write failed: " + path.string());
}

}  // namespace fmpnet
