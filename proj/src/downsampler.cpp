#include "fmpnet/downsampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <json.hpp>

#include "fmpnet/dataset_io.hpp"
#include "fmpnet/errors.hpp"
#include "fmpnet/layers.hpp"

namespace fmpnet {

std::string method_name(Method m) {
  switch (m) {
    case Method::none: return "none";
    case Method::dd: return "dd";
    case Method::ad: return "ad";
    case Method::mpd: return "mpd";
    case Method::apd: return "apd";
    case Method::amd: return "amd";
  }
  return "?";
}

std::string axis_name(Axis a) { return a == Axis::time ? "time" : "frequency"; }

Method parse_method(const std::string& s) {
  for (Method m : {Method::none, Method::dd, Method::ad, Method::mpd, Method::apd, Method::amd})
    if (method_name(m) == s) return m;
  throw ArgumentError("unknown downsampling method '" + s + "' (none|dd|ad|mpd|apd|amd)");
}

Axis parse_axis(const std::string& s) {
  if (s == "time" || s == "t") return Axis::time;
  if (s == "frequency" || s == "freq" || s == "f") return Axis::frequency;
  throw ArgumentError("unknown axis '" + s + "' (time|frequency)");
}

void validate(const DownsampleSpec& spec) {
  if (spec.factor < 1) throw ArgumentError("downsampling factor must be >= 1");
  if (spec.method == Method::none && spec.factor != 1)
    throw ArgumentError("method none requires factor 1");
  if (spec.method == Method::amd && spec.axis != Axis::frequency)
    throw ArgumentError("amd downsamples along frequency only");
}

std::string describe(const DownsampleSpec& spec) {
  std::string s = method_name(spec.method);
  if (spec.method == Method::mpd || spec.method == Method::apd)
    s += spec.axis == Axis::time ? "-t" : "-f";
  return s + " D=" + std::to_string(spec.factor);
}

int amd_keep_count(int rows, int factor) {
  if (factor < 1) throw ArgumentError("amd: factor must be >= 1");
  const int k = rows / factor;
  if (k == 0) throw ArgumentError("amd: floor(p/D) is zero");
  return k;
}

void validate(const RowIndexFile& idx) {
  if (idx.fft_size < 1 || idx.factor < 1) throw FormatError("row index: fft_size and factor must be positive");
  if (static_cast<int>(idx.kept_rows.size()) != idx.fft_size / idx.factor)
    throw FormatError("row index: expected floor(fft_size/factor) = " + std::to_string(idx.fft_size / idx.factor) +
                      " rows, found " + std::to_string(idx.kept_rows.size()));
  for (std::size_t i = 0; i < idx.kept_rows.size(); ++i) {
    const int r = idx.kept_rows[i];
    if (r < 0 || r >= idx.fft_size) throw FormatError("row index: row " + std::to_string(r) + " out of range");
    if (i > 0 && r <= idx.kept_rows[i - 1]) throw FormatError("row index: rows must be strictly increasing");
  }
}

std::string to_json(const RowIndexFile& idx) {
  nlohmann::ordered_json j;
  j["fft_size"] = idx.fft_size;
  j["factor"] = idx.factor;
  j["kept_rows"] = idx.kept_rows;
  return j.dump();
}

RowIndexFile row_index_from_json(const std::string& text) {
  RowIndexFile idx;
  try {
    const auto j = nlohmann::json::parse(text);
    idx.fft_size = j.at("fft_size").get<int>();
    idx.factor = j.at("factor").get<int>();
    idx.kept_rows = j.at("kept_rows").get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("row index JSON: ") + e.what());
  }
  validate(idx);
  return idx;
}

void write_row_index(const std::filesystem::path& path, const RowIndexFile& idx) {
  write_text_file(path, to_json(idx) + "\n");
}

RowIndexFile read_row_index(const std::filesystem::path& path) {
  return row_index_from_json(read_text_file(path));
}

CVec dd_iq(std::span<const cplx> x, int factor) {
  if (factor < 1) throw ArgumentError("dd_iq: factor must be >= 1");
  CVec y(x.size() / factor);
  for (std::size_t n = 0; n < y.size(); ++n) y[n] = x[n * factor];
  return y;
}

CVec ad_iq(std::span<const cplx> x, int factor) {
  if (factor < 1) throw ArgumentError("ad_iq: factor must be >= 1");
  CVec y(x.size() / factor);
  for (std::size_t n = 0; n < y.size(); ++n) {
    cplx acc{};
    for (int m = 0; m < factor; ++m) acc += x[n * factor + m];
    y[n] = acc / static_cast<double>(factor);
  }
  return y;
}

TfTensor pool_tf(const TfTensor& t, PoolMode mode, Axis axis, int factor) {
  if (factor < 1) throw ArgumentError("pool_tf: factor must be >= 1");
  const bool along_time = axis == Axis::time;
  const int len = along_time ? t.q : t.p;
  if (len < factor) throw ArgumentError("pool_tf: axis length smaller than factor");
  const int out_p = along_time ? t.p : t.p / factor;
  const int out_q = along_time ? t.q / factor : t.q;
  TfTensor out(out_p, out_q);
  for (int c = 0; c < 2; ++c) {
    for (int r = 0; r < out_p; ++r) {
      for (int k = 0; k < out_q; ++k) {
        double best = -std::numeric_limits<double>::infinity();
        double sum = 0.0;
        for (int m = 0; m < factor; ++m) {
          const double v = along_time ? t(c, r, k * factor + m) : t(c, r * factor + m, k);
          best = std::max(best, v);
          sum += v;
        }
        out(c, r, k) = mode == PoolMode::max ? best : sum / factor;
      }
    }
  }
  return out;
}

template <typename T>
SpatialAttention<T> SpatialAttention<T>::initialized(std::uint64_t seed) {
  SpatialAttention att;
  std::mt19937_64 rng(seed);
  const double bound = std::sqrt(6.0 / (2 * kKernel * kKernel));
  std::uniform_real_distribution<double> dist(-bound, bound);
  const int per_channel = kKernel * kKernel;
  for (int i = 0; i < 2 * per_channel; ++i) {
    const double w = dist(rng);
    att.kernel.values[i] = static_cast<T>(i < per_channel ? std::abs(w) : w);
  }
  att.bias.values[0] = T(0);
  return att;
}

template <typename T>
Tensor<T> channel_pool(const Tensor<T>& x) {
  if (x.rank() != 3 || x.dim(0) != 2) throw ArgumentError("channel_pool: input must be (2, p, q), got " + shape_string(x.shape));
  const std::size_t plane = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  Tensor<T> out(x.shape);
  const T* a = x.data();
  const T* b = x.data() + plane;
  for (std::size_t i = 0; i < plane; ++i) {
    out.values[i] = std::max(a[i], b[i]);
    out.values[plane + i] = (a[i] + b[i]) / T(2);
  }
  return out;
}

namespace {

// Direct 7x7 same-padded conv of the pooled map; im2col would build a 98 x (p*q) buffer here.
template <typename T>
Tensor<T> attention_logits(const Tensor<T>& pooled, const SpatialAttention<T>& att) {
  constexpr int K = SpatialAttention<T>::kKernel;
  constexpr int P = SpatialAttention<T>::kPad;
  const int p = pooled.dim(1), q = pooled.dim(2);
  Tensor<T> z({1, p, q});
  std::fill(z.values.begin(), z.values.end(), att.bias.values[0]);
  for (int c = 0; c < 2; ++c)
    for (int kh = 0; kh < K; ++kh)
      for (int r = 0; r < p; ++r) {
        const int sr = r + kh - P;
        if (sr < 0 || sr >= p) continue;
        const T* src = pooled.data() + (static_cast<std::size_t>(c) * p + sr) * q;
        T* dst = z.data() + static_cast<std::size_t>(r) * q;
        for (int kw = 0; kw < K; ++kw) {
          const T w = att.kernel.values[(c * K + kh) * K + kw];
          const int lo = std::max(0, P - kw), hi = std::min(q, q + P - kw);
          for (int t = lo; t < hi; ++t) dst[t] += w * src[t + kw - P];
        }
      }
  return z;
}

}  // namespace

template <typename T>
Tensor<T> attention_weights(const Tensor<T>& x, const SpatialAttention<T>& att) {
  auto z = attention_logits(channel_pool(x), att);
  for (auto& v : z.values) v = sigmoid(v);
  return z;
}

RealMatrix attention_map(const TfTensor& t, const SpatialAttention<double>& att) {
  const auto q1 = attention_weights(to_tensor<double>(t), att);
  return {t.p, t.q, q1.values};
}

std::vector<int> top_k_rows(std::span<const double> scores, int k) {
  if (k < 1 || k > static_cast<int>(scores.size())) throw ArgumentError("top_k_rows: invalid k");
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores[a] > scores[b]; });
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

namespace {

template <typename T>
std::vector<double> row_means(const T* q1, int p, int q) {
  std::vector<double> means(p);
  for (int r = 0; r < p; ++r) {
    double acc = 0.0;
    for (int c = 0; c < q; ++c) acc += q1[static_cast<std::size_t>(r) * q + c];
    means[r] = acc / q;
  }
  return means;
}

}  // namespace

RowSelection amd_select_rows(const TfTensor& t, const RealMatrix& q1, int factor) {
  if (q1.rows != t.p || q1.cols != t.q) throw ArgumentError("amd_select_rows: attention map shape mismatch");
  const int k = amd_keep_count(t.p, factor);
  const auto means = row_means(q1.data.data(), q1.rows, q1.cols);
  RowSelection sel;
  sel.kept_rows = top_k_rows(means, k);
  RowIndexFile idx{t.p, factor, sel.kept_rows};
  sel.tensor = apply_row_index(t, idx);
  return sel;
}

RowIndexFile select_rows_by_discards(std::span<const std::vector<int>> kept_sets, int rows, int factor) {
  if (kept_sets.empty()) throw ArgumentError("track_discards: empty validation set");
  const int k = amd_keep_count(rows, factor);
  std::vector<std::int64_t> discards(rows, 0);
  for (const auto& kept : kept_sets) {
    std::vector<char> keep(rows, 0);
    for (int r : kept) {
      if (r < 0 || r >= rows) throw ArgumentError("track_discards: kept row out of range");
      keep[r] = 1;
    }
    for (int r = 0; r < rows; ++r)
      if (!keep[r]) ++discards[r];
  }
  std::vector<double> score(rows);
  for (int r = 0; r < rows; ++r) score[r] = -static_cast<double>(discards[r]);
  return {rows, factor, top_k_rows(score, k)};
}

template <typename T>
std::vector<int> attention_kept_rows(const Tensor<T>& x, const SpatialAttention<T>& att, int factor) {
  const auto q1 = attention_weights(x, att);
  const int p = x.dim(1), q = x.dim(2);
  return top_k_rows(row_means(q1.data(), p, q), amd_keep_count(p, factor));
}

template <typename T>
RowIndexFile track_discards(const SpatialAttention<T>& att, std::span<const Tensor<T>> val_inputs, int factor) {
  if (val_inputs.empty()) throw ArgumentError("track_discards: empty validation set");
  std::vector<std::vector<int>> kept(val_inputs.size());
  for (std::size_t i = 0; i < val_inputs.size(); ++i) kept[i] = attention_kept_rows(val_inputs[i], att, factor);
  return select_rows_by_discards(kept, val_inputs.front().dim(1), factor);
}

TfTensor apply_row_index(const TfTensor& t, const RowIndexFile& idx) {
  if (idx.fft_size != t.p)
    throw FormatError("row index fft_size " + std::to_string(idx.fft_size) + " does not match tensor rows " +
                      std::to_string(t.p));
  TfTensor out(static_cast<int>(idx.kept_rows.size()), t.q);
  for (int c = 0; c < 2; ++c) {
    for (std::size_t i = 0; i < idx.kept_rows.size(); ++i) {
      const int r = idx.kept_rows[i];
      if (r < 0 || r >= t.p) throw FormatError("row index: row " + std::to_string(r) + " out of range");
      std::copy_n(&t.data[(static_cast<std::size_t>(c) * t.p + r) * t.q], t.q,
                  &out.data[(static_cast<std::size_t>(c) * out.p + i) * t.q]);
    }
  }
  return out;
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const int> rows) {
  if (x.rank() != 3) throw ArgumentError("gather_rows: input must be (C, p, q)");
  const int ch = x.dim(0), p = x.dim(1), q = x.dim(2);
  Tensor<T> out({ch, static_cast<int>(rows.size()), q});
  for (int c = 0; c < ch; ++c) {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i] < 0 || rows[i] >= p) throw FormatError("gather_rows: row out of range");
      std::copy_n(x.data() + (static_cast<std::size_t>(c) * p + rows[i]) * q, q,
                  out.data() + (static_cast<std::size_t>(c) * rows.size() + i) * q);
    }
  }
  return out;
}

template <typename T>
AmdForward<T> amd_forward(const Tensor<T>& x, const SpatialAttention<T>& att, int factor) {
  AmdForward<T> f;
  f.pooled = channel_pool(x);
  f.weights = attention_logits(f.pooled, att);
  for (auto& v : f.weights.values) v = sigmoid(v);
  const int p = x.dim(1), q = x.dim(2);
  f.kept_rows = top_k_rows(row_means(f.weights.data(), p, q), amd_keep_count(p, factor));
  f.input = gather_rows(x, f.kept_rows);
  const int k = static_cast<int>(f.kept_rows.size());
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < k; ++i) {
      const T* w = f.weights.data() + static_cast<std::size_t>(f.kept_rows[i]) * q;
      T* dst = f.input.data() + (static_cast<std::size_t>(c) * k + i) * q;
      for (int t = 0; t < q; ++t) dst[t] *= w[t];
    }
  return f;
}

template <typename T>
void amd_backward(SpatialAttention<T>& att, const Tensor<T>& x, const AmdForward<T>& fwd,
                  const Tensor<T>& grad_input) {
  if (grad_input.shape != fwd.input.shape) throw ArgumentError("amd_backward: gradient shape mismatch");
  const int p = x.dim(1), q = x.dim(2);
  const int k = static_cast<int>(fwd.kept_rows.size());
  constexpr int K = SpatialAttention<T>::kKernel;
  constexpr int P = SpatialAttention<T>::kPad;
  if (!att.kernel.has_grad()) att.kernel.zero_grad();
  if (!att.bias.has_grad()) att.bias.zero_grad();
  // dz vanishes outside the kept rows, so only those rows feed the kernel gradient
  std::vector<T> dz(static_cast<std::size_t>(q));
  std::vector<double> dk(static_cast<std::size_t>(2 * K * K), 0.0);
  double db = 0.0;
  for (int i = 0; i < k; ++i) {
    const int r = fwd.kept_rows[i];
    for (int t = 0; t < q; ++t) {
      T dw = T(0);
      for (int c = 0; c < 2; ++c)
        dw += grad_input.values[(static_cast<std::size_t>(c) * k + i) * q + t] *
              x.values[(static_cast<std::size_t>(c) * p + r) * q + t];
      const T w = fwd.weights.values[static_cast<std::size_t>(r) * q + t];
      dz[t] = dw * w * (T(1) - w);
      db += dz[t];
    }
    for (int c = 0; c < 2; ++c)
      for (int kh = 0; kh < K; ++kh) {
        const int sr = r + kh - P;
        if (sr < 0 || sr >= p) continue;
        const T* src = fwd.pooled.data() + (static_cast<std::size_t>(c) * p + sr) * q;
        for (int kw = 0; kw < K; ++kw) {
          const int lo = std::max(0, P - kw), hi = std::min(q, q + P - kw);
          T acc = T(0);
          for (int t = lo; t < hi; ++t) acc += dz[t] * src[t + kw - P];
          dk[(c * K + kh) * K + kw] += acc;
        }
      }
  }
  for (std::size_t j = 0; j < dk.size(); ++j) att.kernel.grad[j] += static_cast<T>(dk[j]);
  att.bias.grad[0] += static_cast<T>(db);
}

TfTensor preprocess(const IqFrame& frame, const DownsampleSpec& spec, const StftConfig& stft_cfg,
                    const RowIndexFile* idx) {
  validate(spec);
  auto iq = to_complex_double(frame);
  if (spec.method == Method::dd) iq = dd_iq(iq, spec.factor);
  if (spec.method == Method::ad) iq = ad_iq(iq, spec.factor);
  auto t = normalize_tf(to_tf_tensor(stft(iq, stft_cfg)));
  switch (spec.method) {
    case Method::mpd: return pool_tf(t, PoolMode::max, spec.axis, spec.factor);
    case Method::apd: return pool_tf(t, PoolMode::avg, spec.axis, spec.factor);
    case Method::amd:
      if (idx) {
        if (idx->factor != spec.factor)
          throw InferenceError("row index factor " + std::to_string(idx->factor) +
                               " does not match spec factor " + std::to_string(spec.factor));
        return apply_row_index(t, *idx);
      }
      return t;
    default: return t;
  }
}

std::vector<int> model_input_shape(const DownsampleSpec& spec, int frame_length, const StftConfig& stft_cfg) {
  validate(spec);
  const int p = stft_cfg.fft_size;
  int len = frame_length;
  if (spec.method == Method::dd || spec.method == Method::ad) len /= spec.factor;
  int q = stft_frames(len, stft_cfg);
  int rows = p;
  if (spec.method == Method::mpd || spec.method == Method::apd) {
    if (spec.axis == Axis::time) q /= spec.factor;
    else rows /= spec.factor;
  }
  if (spec.method == Method::amd) rows = amd_keep_count(p, spec.factor);
  return {2, rows, q};
}

#define FMPNET_INSTANTIATE_DS(T)                                                                          \
  template struct SpatialAttention<T>;                                                                    \
  template Tensor<T> channel_pool(const Tensor<T>&);                                                      \
  template Tensor<T> attention_weights(const Tensor<T>&, const SpatialAttention<T>&);                     \
  template std::vector<int> attention_kept_rows(const Tensor<T>&, const SpatialAttention<T>&, int);       \
  template RowIndexFile track_discards(const SpatialAttention<T>&, std::span<const Tensor<T>>, int);      \
  template Tensor<T> gather_rows(const Tensor<T>&, std::span<const int>);                                 \
  template AmdForward<T> amd_forward(const Tensor<T>&, const SpatialAttention<T>&, int);                  \
  template void amd_backward(SpatialAttention<T>&, const Tensor<T>&, const AmdForward<T>&, const Tensor<T>&);

FMPNET_INSTANTIATE_DS(float)
FMPNET_INSTANTIATE_DS(double)

#undef FMPNET_INSTANTIATE_DS

}  // namespace fmpnet
