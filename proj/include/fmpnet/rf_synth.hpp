#pragma once

#include <complex>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

namespace fmpnet {

using cplx = std::complex<double>;
using CVec = std::vector<cplx>;

inline constexpr double kDefaultFs = 4.0e6;
inline constexpr int kDefaultFrameLength = 16384;

/// One narrowband FM broadcast inside the sampled band.
struct StationConfig {
  double carrier_offset_hz = 0.0;
  double deviation_hz = 0.0;
  double message_bandwidth_hz = 15.0e3;
  double power = 1.0;
  std::uint64_t seed = 0;

  /// Highest frequency (absolute, Hz) the station may occupy.
  double occupied_edge_hz() const;
};

/// Throws ConfigError unless the station fits inside (-fs/2, fs/2) with positive power.
void validate(const StationConfig& cfg, double fs);

struct ChannelTap {
  int delay = 0;
  cplx gain{1.0, 0.0};
};

/// Multipath impulse response between one station and one grid location.
struct ChannelProfile {
  std::vector<ChannelTap> taps;
};

inline constexpr int kMaxTaps = 8;
void validate(const ChannelProfile& ch);

struct GridLocation {
  int class_index = 0;
  double x = 0.0;
  double y = 0.0;
};

struct GridMap {
  std::vector<GridLocation> locations;

  int num_classes() const { return static_cast<int>(locations.size()); }
  const GridLocation& at(int class_index) const;
};

/// Rectangular grid of cols x rows cells; class index runs row-major.
GridMap make_grid(int cols, int rows, double spacing = 1.0);
void validate(const GridMap& grid);

struct IqFrame {
  std::vector<std::complex<float>> samples;
  int label = 0;
  double fs = kDefaultFs;
};

enum class Split { train, val, test };
const char* split_name(Split s);

struct Dataset {
  std::vector<IqFrame> frames;
  Split split = Split::train;
  GridMap grid;
  double snr_db = 0.0;
  int frame_length = kDefaultFrameLength;
  double fs = kDefaultFs;
};

/// Stations plus one channel per (cell, station). Immutable once built.
struct World {
  double fs = kDefaultFs;
  int frame_length = kDefaultFrameLength;
  std::vector<StationConfig> stations;
  // channels[cell][station]
  std::vector<std::vector<ChannelProfile>> channels;

  int num_cells() const { return static_cast<int>(channels.size()); }
};

struct WorldOptions {
  int stations = 5;
  double fs = kDefaultFs;
  int frame_length = kDefaultFrameLength;
  double deviation_hz = 50.0e3;
  double message_bandwidth_hz = 15.0e3;
  /// Carriers are spread evenly over +-span_hz with seeded jitter.
  double carrier_span_hz = 1.6e6;
  double carrier_jitter_hz = 100.0e3;
  int min_taps = 3;
  int max_taps = kMaxTaps;
  int max_delay = 63;
  /// Decay constant (samples) of the exponential power-delay profile.
  double delay_decay = 10.0;
  /// Log-normal large-scale fading per (cell, station), in dB.
  double shadowing_db = 6.0;
};

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c);
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c, std::uint64_t d);

ChannelProfile generate_channel(int cell, int station, std::uint64_t world_seed,
                                const WorldOptions& opt = {});
World make_world(int num_cells, std::uint64_t world_seed, const WorldOptions& opt = {});

/// Band-limited message in [-1, 1]: eight random-phase tones below the bandwidth.
std::vector<double> synth_message(double bandwidth_hz, int n_samples, double fs,
                                  std::uint64_t seed);

CVec synth_station_baseband(const StationConfig& cfg, int n_samples, double fs);

/// Station with the message re-seeded for one frame; channel and carrier unchanged.
StationConfig station_for_frame(const StationConfig& cfg, std::uint64_t frame_seed);

CVec apply_channel(std::span<const cplx> x, const ChannelProfile& ch);

inline constexpr double kNoNoise = std::numeric_limits<double>::infinity();

IqFrame synthesize_sample(int grid_cell, const World& world, double snr_db, std::uint64_t seed);

struct PerClassCounts {
  int train = 0;
  int val = 0;
  int test = 0;
};

struct DatasetSplits {
  Dataset train;
  Dataset val;
  Dataset test;
};

DatasetSplits build_dataset(const World& world, const GridMap& grid, PerClassCounts per_class,
                            double snr_db, std::uint64_t seed);

double mean_power(std::span<const cplx> x);
CVec to_complex_double(const IqFrame& frame);

/// Blind SNR estimate for sparse narrowband content over white noise: the noise
/// floor is the median bin of a Welch periodogram.
double estimate_snr_db(const IqFrame& frame, int fft_size = 256);

}  // namespace fmpnet
