#include "fmpnet/rf_synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <set>
#include <string>

#include "fmpnet/errors.hpp"
#include "fmpnet/parallel.hpp"
#include "fmpnet/tf_engine.hpp"

namespace fmpnet {
namespace {

constexpr int kMessageTones = 8;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  return splitmix64(splitmix64(a) ^ (b + 0x632be59bd9b4e019ULL));
}
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return mix_seed(mix_seed(a, b), c);
}
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c, std::uint64_t d) {
  return mix_seed(mix_seed(a, b, c), d);
}

double StationConfig::occupied_edge_hz() const {
  return std::abs(carrier_offset_hz) + deviation_hz + message_bandwidth_hz;
}

void validate(const StationConfig& cfg, double fs) {
  if (!(cfg.power > 0.0)) throw ConfigError("station power must be positive");
  if (cfg.deviation_hz < 0.0 || cfg.message_bandwidth_hz < 0.0)
    throw ConfigError("station deviation and message bandwidth must be non-negative");
  if (!(cfg.occupied_edge_hz() < fs / 2))
    throw ConfigError("station out of band: |offset| + deviation + bandwidth = " +
                      std::to_string(cfg.occupied_edge_hz()) + " Hz >= fs/2");
}

void validate(const ChannelProfile& ch) {
  if (ch.taps.empty()) throw ConfigError("channel profile has no taps");
  if (ch.taps.size() > static_cast<std::size_t>(kMaxTaps))
    throw ConfigError("channel profile has more than " + std::to_string(kMaxTaps) + " taps");
  bool any_nonzero = false;
  for (std::size_t i = 0; i < ch.taps.size(); ++i) {
    if (ch.taps[i].delay < 0) throw ConfigError("channel tap delay must be non-negative");
    if (i > 0 && ch.taps[i].delay <= ch.taps[i - 1].delay)
      throw ConfigError("channel tap delays must be strictly increasing");
    any_nonzero = any_nonzero || std::abs(ch.taps[i].gain) > 0.0;
  }
  if (!any_nonzero) throw ConfigError("channel profile has no non-zero tap");
}

const GridLocation& GridMap::at(int class_index) const {
  if (class_index < 0 || class_index >= num_classes())
    throw ArgumentError("grid: class index " + std::to_string(class_index) + " out of range");
  return locations[class_index];
}

GridMap make_grid(int cols, int rows, double spacing) {
  if (cols < 1 || rows < 1) throw ArgumentError("grid dimensions must be positive");
  GridMap g;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      g.locations.push_back({r * cols + c, c * spacing, r * spacing});
  return g;
}

void validate(const GridMap& grid) {
  std::set<std::pair<double, double>> seen;
  for (int i = 0; i < grid.num_classes(); ++i) {
    const auto& loc = grid.locations[i];
    if (loc.class_index != i) throw FormatError("grid: class indices must be 0..C-1 in order");
    if (!seen.emplace(loc.x, loc.y).second) throw FormatError("grid: duplicate coordinate");
  }
}

const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

ChannelProfile generate_channel(int cell, int station, std::uint64_t world_seed,
                                const WorldOptions& opt) {
  std::mt19937_64 rng(mix_seed(world_seed, 0xC4A77E1ULL, static_cast<std::uint64_t>(cell),
                               static_cast<std::uint64_t>(station)));
  std::uniform_int_distribution<int> ntaps_dist(opt.min_taps, opt.max_taps);
  const int ntaps = ntaps_dist(rng);

  // distinct delays, sampled without replacement
  std::vector<int> pool(opt.max_delay + 1);
  for (int i = 0; i <= opt.max_delay; ++i) pool[i] = i;
  std::vector<int> delays;
  for (int i = 0; i < ntaps; ++i) {
    std::uniform_int_distribution<int> pick(i, opt.max_delay);
    std::swap(pool[i], pool[pick(rng)]);
    delays.push_back(pool[i]);
  }
  std::sort(delays.begin(), delays.end());

  std::normal_distribution<double> gauss(0.0, 1.0);
  const double shadow = std::pow(10.0, opt.shadowing_db * gauss(rng) / 20.0);
  ChannelProfile ch;
  for (int d : delays) {
    const double re = gauss(rng);
    const double im = gauss(rng);
    const double amp = std::sqrt(std::exp(-d / opt.delay_decay) / 2.0) * shadow;
    ch.taps.push_back({d, cplx{re, im} * amp});
  }
  return ch;
}

World make_world(int num_cells, std::uint64_t world_seed, const WorldOptions& opt) {
  if (num_cells < 1) throw ConfigError("world needs at least one cell");
  if (opt.stations < 1) throw ConfigError("world needs at least one station");
  World w;
  w.fs = opt.fs;
  w.frame_length = opt.frame_length;

  std::mt19937_64 rng(mix_seed(world_seed, 0x57A7105ULL));
  std::uniform_real_distribution<double> jitter(-opt.carrier_jitter_hz, opt.carrier_jitter_hz);
  std::uniform_real_distribution<double> power(0.5, 2.0);
  for (int k = 0; k < opt.stations; ++k) {
    StationConfig s;
    const double frac = opt.stations == 1 ? 0.5 : static_cast<double>(k) / (opt.stations - 1);
    s.carrier_offset_hz = -opt.carrier_span_hz + 2.0 * opt.carrier_span_hz * frac + jitter(rng);
    s.deviation_hz = opt.deviation_hz;
    s.message_bandwidth_hz = opt.message_bandwidth_hz;
    s.power = power(rng);
    s.seed = mix_seed(world_seed, 0x5EEDULL, static_cast<std::uint64_t>(k));
    validate(s, w.fs);
    w.stations.push_back(s);
  }
  w.channels.resize(num_cells);
  for (int c = 0; c < num_cells; ++c)
    for (int k = 0; k < opt.stations; ++k)
      w.channels[c].push_back(generate_channel(c, k, world_seed, opt));
  return w;
}

std::vector<double> synth_message(double bandwidth_hz, int n_samples, double fs,
                                  std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> freq(0.0, bandwidth_hz);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::vector<double> m(n_samples, 0.0);
  for (int tone = 0; tone < kMessageTones; ++tone) {
    const double w = 2.0 * std::numbers::pi * freq(rng) / fs;
    const double ph = phase(rng);
    for (int n = 0; n < n_samples; ++n) m[n] += std::sin(w * n + ph);
  }
  double peak = 0.0;
  for (double v : m) peak = std::max(peak, std::abs(v));
  if (peak > 0.0)
    for (double& v : m) v /= peak;
  return m;
}

CVec synth_station_baseband(const StationConfig& cfg, int n_samples, double fs) {
  validate(cfg, fs);
  if (n_samples <= 0) throw ArgumentError("synth_station_baseband: n_samples must be positive");
  const double amplitude = std::sqrt(cfg.power);
  CVec out(n_samples);
  if (cfg.deviation_hz == 0.0) {
    for (int n = 0; n < n_samples; ++n) {
      double cycles = cfg.carrier_offset_hz * n / fs;
      cycles -= std::floor(cycles);
      out[n] = std::polar(amplitude, 2.0 * std::numbers::pi * cycles);
    }
    return out;
  }
  const auto m = synth_message(cfg.message_bandwidth_hz, n_samples, fs, cfg.seed);
  double integral = 0.0;
  for (int n = 0; n < n_samples; ++n) {
    integral += m[n];
    double cycles = cfg.carrier_offset_hz * n / fs + cfg.deviation_hz * integral / fs;
    cycles -= std::floor(cycles);
    out[n] = std::polar(amplitude, 2.0 * std::numbers::pi * cycles);
  }
  return out;
}

StationConfig station_for_frame(const StationConfig& cfg, std::uint64_t frame_seed) {
  StationConfig s = cfg;
  s.seed = mix_seed(cfg.seed, frame_seed);
  return s;
}

CVec apply_channel(std::span<const cplx> x, const ChannelProfile& ch) {
  if (ch.taps.empty()) throw ConfigError("apply_channel: empty tap list");
  const int len = static_cast<int>(x.size());
  CVec y(x.size());
  for (const auto& tap : ch.taps) {
    if (tap.delay < 0 || tap.delay >= len)
      throw ConfigError("apply_channel: tap delay " + std::to_string(tap.delay) +
                        " outside signal length " + std::to_string(len));
    for (int n = tap.delay; n < len; ++n) y[n] += tap.gain * x[n - tap.delay];
  }
  return y;
}

double mean_power(std::span<const cplx> x) {
  if (x.empty()) return 0.0;
  double p = 0.0;
  for (const auto& v : x) p += std::norm(v);
  return p / static_cast<double>(x.size());
}

IqFrame synthesize_sample(int grid_cell, const World& world, double snr_db, std::uint64_t seed) {
  if (grid_cell < 0 || grid_cell >= world.num_cells())
    throw ConfigError("synthesize_sample: grid cell " + std::to_string(grid_cell) + " not in world");
  const auto& channels = world.channels[grid_cell];
  if (channels.size() != world.stations.size())
    throw ConfigError("synthesize_sample: missing channel profile for cell " +
                      std::to_string(grid_cell));

  const int len = world.frame_length;
  CVec s(len);
  for (std::size_t k = 0; k < world.stations.size(); ++k) {
    const auto station = station_for_frame(world.stations[k], mix_seed(seed, k));
    const auto o = synth_station_baseband(station, len, world.fs);
    const auto y = apply_channel(o, channels[k]);
    for (int n = 0; n < len; ++n) s[n] += y[n];
  }

  if (std::isfinite(snr_db)) {
    const double noise_power = mean_power(s) / std::pow(10.0, snr_db / 10.0);
    const double sigma = std::sqrt(noise_power / 2.0);
    std::mt19937_64 rng(mix_seed(seed, 0x4E015EULL));
    std::normal_distribution<double> gauss(0.0, sigma);
    for (int n = 0; n < len; ++n) {
      const double re = gauss(rng);
      const double im = gauss(rng);
      s[n] += cplx{re, im};
    }
  }

  IqFrame frame;
  frame.label = grid_cell;
  frame.fs = world.fs;
  frame.samples.resize(len);
  for (int n = 0; n < len; ++n)
    frame.samples[n] = {static_cast<float>(s[n].real()), static_cast<float>(s[n].imag())};
  return frame;
}

DatasetSplits build_dataset(const World& world, const GridMap& grid, PerClassCounts per_class,
                            double snr_db, std::uint64_t seed) {
  if (per_class.train <= 0 || per_class.val <= 0 || per_class.test <= 0)
    throw ConfigError("build_dataset: per-class counts must be positive");
  validate(grid);
  if (grid.num_classes() != world.num_cells())
    throw ConfigError("build_dataset: grid has " + std::to_string(grid.num_classes()) +
                      " classes but world has " + std::to_string(world.num_cells()) + " cells");

  auto make_split = [&](Split split, int count) {
    Dataset d;
    d.split = split;
    d.grid = grid;
    d.snr_db = snr_db;
    d.frame_length = world.frame_length;
    d.fs = world.fs;
    const int classes = grid.num_classes();
    d.frames.resize(static_cast<std::size_t>(classes) * count);
    parallel_for(d.frames.size(), [&](std::size_t idx) {
      const int cls = static_cast<int>(idx) / count;
      const int i = static_cast<int>(idx) % count;
      const auto frame_seed = mix_seed(seed, static_cast<std::uint64_t>(split) + 1,
                                       static_cast<std::uint64_t>(cls), static_cast<std::uint64_t>(i));
      d.frames[idx] = synthesize_sample(cls, world, snr_db, frame_seed);
    });
    return d;
  };
  return {make_split(Split::train, per_class.train), make_split(Split::val, per_class.val),
          make_split(Split::test, per_class.test)};
}

CVec to_complex_double(const IqFrame& frame) {
  CVec out(frame.samples.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = cplx(frame.samples[i]);
  return out;
}

double estimate_snr_db(const IqFrame& frame, int fft_size) {
  const auto x = to_complex_double(frame);
  StftConfig cfg;
  cfg.fft_size = fft_size;
  cfg.overlap = 0.5;
  cfg.padded = false;
  const auto s = stft(x, cfg);
  std::vector<double> psd(s.rows, 0.0);
  for (int r = 0; r < s.rows; ++r)
    for (int t = 0; t < s.cols; ++t) psd[r] += std::norm(s(r, t));
  const double total = std::accumulate(psd.begin(), psd.end(), 0.0);
  auto sorted = psd;
  std::nth_element(sorted.begin(), sorted.begin() + s.rows / 2, sorted.end());
  const double noise = sorted[s.rows / 2] * s.rows;
  const double signal = std::max(total - noise, 1e-300);
  return 10.0 * std::log10(signal / noise);
}

}  // namespace fmpnet
