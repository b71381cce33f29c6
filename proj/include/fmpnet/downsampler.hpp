#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fmpnet/rf_synth.hpp"
#include "fmpnet/tensor.hpp"
#include "fmpnet/tf_engine.hpp"

namespace fmpnet {

// none: raw STFT; dd/ad: IQ-domain decimation before the STFT; mpd/apd: pooling
// of the TF tensor along `axis`; amd: attention-ranked frequency-row retention.
enum class Method { none, dd, ad, mpd, apd, amd };
enum class Axis { time, frequency };

std::string method_name(Method m);
std::string axis_name(Axis a);
Method parse_method(const std::string& s);
Axis parse_axis(const std::string& s);

struct DownsampleSpec {
  Method method = Method::none;
  int factor = 1;
  Axis axis = Axis::time;

  bool operator==(const DownsampleSpec&) const = default;
};

void validate(const DownsampleSpec& spec);
std::string describe(const DownsampleSpec& spec);

/// Frequency rows retained by AMD, replayed without the attention branch.
struct RowIndexFile {
  int fft_size = 256;
  int factor = 1;
  std::vector<int> kept_rows;

  bool operator==(const RowIndexFile&) const = default;
};

void validate(const RowIndexFile& idx);
std::string to_json(const RowIndexFile& idx);
RowIndexFile row_index_from_json(const std::string& text);
void write_row_index(const std::filesystem::path& path, const RowIndexFile& idx);
RowIndexFile read_row_index(const std::filesystem::path& path);

// --- IQ domain ---------------------------------------------------------------

/// y(n) = x(nD), n < floor(len/D)
CVec dd_iq(std::span<const cplx> x, int factor);
/// y(n) = mean of x(nD .. nD+D-1), n < floor(len/D)
CVec ad_iq(std::span<const cplx> x, int factor);

// --- TF pooling --------------------------------------------------------------

enum class PoolMode { max, avg };

/// Non-overlapping windows of `factor` along one axis, each channel independently.
/// Trailing remainder is dropped.
TfTensor pool_tf(const TfTensor& t, PoolMode mode, Axis axis, int factor);

// --- attention ---------------------------------------------------------------

struct RealMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  double& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
};

/// 2 -> 1 channel 7x7 conv (stride 1, pad 3) followed by a sigmoid.
template <typename T>
struct SpatialAttention {
  static constexpr int kKernel = 7;
  static constexpr int kPad = 3;

  Tensor<T> kernel{{1, 2, kKernel, kKernel}};
  Tensor<T> bias{{1}};

  /// Kaiming-uniform kernel with the max-pool channel taps made non-negative
  /// and zero bias, so an untrained map ranks high-energy rows first.
  static SpatialAttention initialized(std::uint64_t seed);

  std::vector<Tensor<T>*> parameter_tensors() { return {&kernel, &bias}; }
};

/// Channel-wise [max; mean] of a (2, p, q) tensor.
template <typename T>
Tensor<T> channel_pool(const Tensor<T>& x);

/// Attention weights Q1 of a (2, p, q) tensor, returned as (1, p, q).
template <typename T>
Tensor<T> attention_weights(const Tensor<T>& x, const SpatialAttention<T>& att);

RealMatrix attention_map(const TfTensor& t, const SpatialAttention<double>& att);

/// k = floor(p / D); throws when that is zero.
int amd_keep_count(int rows, int factor);

/// Indices of the k largest scores (ties -> lower index), sorted ascending.
std::vector<int> top_k_rows(std::span<const double> scores, int k);

struct RowSelection {
  TfTensor tensor;
  std::vector<int> kept_rows;
};

/// Ranks rows by the column mean of Q1 and keeps the floor(p/D) best in original order.
RowSelection amd_select_rows(const TfTensor& t, const RealMatrix& q1, int factor);

/// Per-row discard counts over all kept sets; the floor(p/D) least discarded
/// rows (ties -> lower index) become the index file.
RowIndexFile select_rows_by_discards(std::span<const std::vector<int>> kept_sets, int rows, int factor);

template <typename T>
std::vector<int> attention_kept_rows(const Tensor<T>& x, const SpatialAttention<T>& att, int factor);

template <typename T>
RowIndexFile track_discards(const SpatialAttention<T>& att, std::span<const Tensor<T>> val_inputs,
                            int factor);

TfTensor apply_row_index(const TfTensor& t, const RowIndexFile& idx);

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const int> rows);

/// One AMD sample during joint training: kept rows are scaled elementwise by
/// their attention weight so gradients reach the attention conv.
template <typename T>
struct AmdForward {
  Tensor<T> pooled;
  Tensor<T> weights;  // (1, p, q)
  std::vector<int> kept_rows;
  Tensor<T> input;  // (2, k, q) gathered and scaled
};

template <typename T>
AmdForward<T> amd_forward(const Tensor<T>& x, const SpatialAttention<T>& att, int factor);

/// Accumulates attention kernel/bias gradients given dLoss/d(fwd.input).
template <typename T>
void amd_backward(SpatialAttention<T>& att, const Tensor<T>& x, const AmdForward<T>& fwd,
                  const Tensor<T>& grad_input);

// --- preprocessing -----------------------------------------------------------

/// Frame -> model input. For AMD without an index file the full normalized
/// tensor is returned (attention selection happens downstream).
TfTensor preprocess(const IqFrame& frame, const DownsampleSpec& spec, const StftConfig& stft_cfg = {},
                    const RowIndexFile* idx = nullptr);

/// Shape the model sees for a spec, without running the pipeline.
std::vector<int> model_input_shape(const DownsampleSpec& spec, int frame_length,
                                   const StftConfig& stft_cfg = {});

template <typename T>
Tensor<T> to_tensor(const TfTensor& t) {
  Tensor<T> out({2, t.p, t.q});
  for (std::size_t i = 0; i < t.size(); ++i) out.values[i] = static_cast<T>(t.data[i]);
  return out;
}

}  // namespace fmpnet
