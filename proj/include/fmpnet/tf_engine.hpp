#pragma once

#include <span>
#include <vector>

#include "fmpnet/rf_synth.hpp"

namespace fmpnet {

enum class WindowKind { hann };

struct StftConfig {
  int fft_size = 256;
  double overlap = 0.75;
  WindowKind window = WindowKind::hann;
  /// Zero-pad fft_size/2 on both sides so frames are centred on multiples of hop.
  bool padded = true;

  int hop() const;
};

void validate(const StftConfig& cfg);

/// Number of STFT columns produced for a signal of the given length.
int stft_frames(int length, const StftConfig& cfg);

/// Row-major p x q complex matrix. Row 0 is -fs/2 (fftshifted order).
struct ComplexMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<cplx> data;

  ComplexMatrix() = default;
  ComplexMatrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c) {}

  cplx& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  const cplx& operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
};

/// Real/imaginary stack of an STFT, shape (2, p, q), stored channel-major.
struct TfTensor {
  int p = 0;
  int q = 0;
  std::vector<double> data;

  TfTensor() = default;
  TfTensor(int rows, int cols) : p(rows), q(cols), data(2 * static_cast<std::size_t>(rows) * cols) {}

  double& operator()(int c, int r, int t) { return data[(static_cast<std::size_t>(c) * p + r) * q + t]; }
  double operator()(int c, int r, int t) const {
    return data[(static_cast<std::size_t>(c) * p + r) * q + t];
  }
  std::size_t size() const { return data.size(); }
};

/// Periodic Hann window, w(k) = 0.5 (1 - cos(2 pi k / n)).
std::vector<double> hann_window(int n);

/// Unnormalized forward DFT (FFTW backed).
CVec fft(std::span<const cplx> x);

ComplexMatrix stft(std::span<const cplx> x, const StftConfig& cfg = {});

TfTensor to_tf_tensor(const ComplexMatrix& s);

/// Zero mean, unit variance over both channels jointly (eps 1e-8 on the std).
TfTensor normalize_tf(TfTensor t);

/// Centre frequency in Hz of an fftshifted row.
double row_frequency_hz(int row, int fft_size, double fs);

}  // namespace fmpnet
