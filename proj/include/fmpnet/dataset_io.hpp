#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "fmpnet/rf_synth.hpp"

namespace fmpnet {

// FMDS1 layout, little-endian throughout:
//   "FMDS" | version u16 | C u16 | L u32 | fs f64 | count u32
//   count x { label u16 | L x (re f32, im f32) }
inline constexpr std::uint16_t kFmdsVersion = 1;

void write_fmds(std::ostream& os, const Dataset& d);
void write_fmds(const std::filesystem::path& path, const Dataset& d);

/// Parses an FMDS1 stream. The grid is not stored in the file; a default
/// C-cell grid placeholder is attached and should be replaced by the caller.
Dataset read_fmds(std::istream& is);
Dataset read_fmds(const std::filesystem::path& path);

std::string grid_to_json(const GridMap& grid);
GridMap grid_from_json(const std::string& text);
void write_grid(const std::filesystem::path& path, const GridMap& grid);
GridMap read_grid(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace fmpnet
