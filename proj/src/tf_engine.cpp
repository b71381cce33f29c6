#include "fmpnet/tf_engine.hpp"

#include <fftw3.h>

#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <string>

#include "fmpnet/errors.hpp"

namespace fmpnet {
namespace {

// FFTW planning is not thread-safe, execution on new arrays is. Plans live for
// the whole process.
fftw_plan forward_plan(int n) {
  static std::mutex mu;
  static std::map<int, fftw_plan> plans;
  std::lock_guard lock(mu);
  auto it = plans.find(n);
  if (it != plans.end()) return it->second;
  std::vector<cplx> in(n), out(n);
  fftw_plan plan = fftw_plan_dft_1d(n, reinterpret_cast<fftw_complex*>(in.data()),
                                    reinterpret_cast<fftw_complex*>(out.data()), FFTW_FORWARD,
                                    FFTW_ESTIMATE | FFTW_UNALIGNED);
  plans.emplace(n, plan);
  return plan;
}

void run_fft(fftw_plan plan, cplx* in, cplx* out) {
  fftw_execute_dft(plan, reinterpret_cast<fftw_complex*>(in), reinterpret_cast<fftw_complex*>(out));
}

}  // namespace

int StftConfig::hop() const {
  return static_cast<int>(std::lround(fft_size * (1.0 - overlap)));
}

void validate(const StftConfig& cfg) {
  if (cfg.fft_size < 2 || (cfg.fft_size & (cfg.fft_size - 1)) != 0)
    throw ArgumentError("stft: fft_size must be a power of two, got " + std::to_string(cfg.fft_size));
  if (!(cfg.overlap >= 0.0 && cfg.overlap < 1.0))
    throw ArgumentError("stft: overlap must lie in [0, 1)");
  const double hop = cfg.fft_size * (1.0 - cfg.overlap);
  if (std::abs(hop - std::round(hop)) > 1e-9 || std::round(hop) < 1)
    throw ArgumentError("stft: fft_size * (1 - overlap) must be a positive integer");
}

int stft_frames(int length, const StftConfig& cfg) {
  validate(cfg);
  if (cfg.padded) return length / cfg.hop() + 1;
  if (length < cfg.fft_size) return 0;
  return (length - cfg.fft_size) / cfg.hop() + 1;
}

std::vector<double> hann_window(int n) {
  if (n < 2) throw ArgumentError("hann_window: n must be at least 2");
  std::vector<double> w(n);
  for (int k = 0; k < n; ++k) w[k] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * k / n));
  return w;
}

CVec fft(std::span<const cplx> x) {
  CVec in(x.begin(), x.end());
  CVec out(x.size());
  if (x.empty()) return out;
  run_fft(forward_plan(static_cast<int>(x.size())), in.data(), out.data());
  return out;
}

ComplexMatrix stft(std::span<const cplx> x, const StftConfig& cfg) {
  validate(cfg);
  const int n = cfg.fft_size;
  const int len = static_cast<int>(x.size());
  if (!cfg.padded && len < n)
    throw ArgumentError("stft: signal length " + std::to_string(len) + " shorter than fft_size");
  const int hop = cfg.hop();
  const int q = stft_frames(len, cfg);
  const int offset = cfg.padded ? n / 2 : 0;

  const auto window = hann_window(n);
  const fftw_plan plan = forward_plan(n);
  ComplexMatrix out(n, q);
  CVec seg(n), spec(n);
  for (int t = 0; t < q; ++t) {
    const int start = t * hop - offset;
    for (int k = 0; k < n; ++k) {
      const int idx = start + k;
      seg[k] = (idx >= 0 && idx < len) ? x[idx] * window[k] : cplx{};
    }
    run_fft(plan, seg.data(), spec.data());
    for (int k = 0; k < n; ++k) out((k + n / 2) % n, t) = spec[k];
  }
  return out;
}

TfTensor to_tf_tensor(const ComplexMatrix& s) {
  TfTensor t(s.rows, s.cols);
  for (int r = 0; r < s.rows; ++r) {
    for (int c = 0; c < s.cols; ++c) {
      t(0, r, c) = s(r, c).real();
      t(1, r, c) = s(r, c).imag();
    }
  }
  return t;
}

TfTensor normalize_tf(TfTensor t) {
  if (t.data.empty()) return t;
  const double n = static_cast<double>(t.size());
  double mean = 0.0;
  for (double v : t.data) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : t.data) var += (v - mean) * (v - mean);
  const double scale = 1.0 / (std::sqrt(var / n) + 1e-8);
  for (double& v : t.data) v = (v - mean) * scale;
  return t;
}

double row_frequency_hz(int row, int fft_size, double fs) {
  return (row - fft_size / 2) * fs / fft_size;
}

}  // namespace fmpnet
