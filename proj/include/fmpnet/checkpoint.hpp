#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>

#include "fmpnet/adamw.hpp"
#include "fmpnet/downsampler.hpp"
#include "fmpnet/pnet_lite.hpp"

namespace fmpnet {

// FMCK1 layout, little-endian:
//   "FMCK" | version u16 | C u16 | method u8 | axis u8 | factor u16 | fft_size u16
//   | flags u16 (bit 0: AdamW state appended) | tensor count u16
//   | per tensor { name_len u16 | name | rank u8 | rank x dim u32 }
//   | f32 parameter blobs in table order
//   | [step i64 | lr, beta1, beta2, eps, weight_decay f64 | m blobs | v blobs]
inline constexpr std::uint16_t kFmckVersion = 1;

struct Checkpoint {
  PnetLite<float> model;
  DownsampleSpec spec;
  int fft_size = 256;
  std::optional<AdamWState<float>> optimizer;
};

void write_checkpoint(std::ostream& os, const Checkpoint& ck);
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint read_checkpoint(std::istream& is);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace fmpnet
