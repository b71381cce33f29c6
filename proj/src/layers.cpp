#include "fmpnet/layers.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "fmpnet/errors.hpp"

namespace fmpnet {

std::string shape_string(const std::vector<int>& shape) {
  std::ostringstream ss;
  ss << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) ss << (i ? "," : "") << shape[i];
  ss << ")";
  return ss.str();
}

int conv_output_size(int in, int kernel, int stride, int pad) {
  const int span = in + 2 * pad - kernel;
  if (span < 0) return 0;
  return span / stride + 1;
}

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using Map = Eigen::Map<RowMat<T>>;

template <typename T>
void im2col(const T* x, int channels, int h, int w, int k, int stride, int pad, T* col) {
  const int ho = conv_output_size(h, k, stride, pad);
  const int wo = conv_output_size(w, k, stride, pad);
  const std::size_t n = static_cast<std::size_t>(ho) * wo;
  for (int c = 0; c < channels; ++c) {
    const T* plane = x + static_cast<std::size_t>(c) * h * w;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        T* dst = col + (static_cast<std::size_t>(c) * k * k + ki * k + kj) * n;
        for (int oi = 0; oi < ho; ++oi) {
          const int ii = oi * stride - pad + ki;
          T* row = dst + static_cast<std::size_t>(oi) * wo;
          if (ii < 0 || ii >= h) {
            std::fill(row, row + wo, T{});
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(ii) * w;
          for (int oj = 0; oj < wo; ++oj) {
            const int jj = oj * stride - pad + kj;
            row[oj] = (jj >= 0 && jj < w) ? src[jj] : T{};
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, int channels, int h, int w, int k, int stride, int pad, T* dx) {
  const int ho = conv_output_size(h, k, stride, pad);
  const int wo = conv_output_size(w, k, stride, pad);
  const std::size_t n = static_cast<std::size_t>(ho) * wo;
  for (int c = 0; c < channels; ++c) {
    T* plane = dx + static_cast<std::size_t>(c) * h * w;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const T* src = col + (static_cast<std::size_t>(c) * k * k + ki * k + kj) * n;
        for (int oi = 0; oi < ho; ++oi) {
          const int ii = oi * stride - pad + ki;
          if (ii < 0 || ii >= h) continue;
          const T* row = src + static_cast<std::size_t>(oi) * wo;
          T* dst = plane + static_cast<std::size_t>(ii) * w;
          for (int oj = 0; oj < wo; ++oj) {
            const int jj = oj * stride - pad + kj;
            if (jj >= 0 && jj < w) dst[jj] += row[oj];
          }
        }
      }
    }
  }
}

template <typename T>
void gemm_bias(const T* weight, const T* col, const T* bias, int o, int k, int n, T* out) {
  Map<T> y(out, o, n);
  y.noalias() = ConstMap<T>(weight, o, k) * ConstMap<T>(col, k, n);
  if (bias)
    for (int i = 0; i < o; ++i) y.row(i).array() += bias[i];
}

template <typename T>
void accumulate_weight_grad(const T* grad_out, const T* col, int o, int k, int n, T* dweight, T* dbias) {
  ConstMap<T> g(grad_out, o, n);
  Map<T>(dweight, o, k).noalias() += g * ConstMap<T>(col, k, n).transpose();
  // plain loop: Eigen's vectorized sum peels by pointer alignment, which makes
  // the rounding depend on where the buffer happened to be allocated
  if (dbias)
    for (int i = 0; i < o; ++i) {
      const T* row = grad_out + static_cast<std::size_t>(i) * n;
      T acc = T(0);
      for (int j = 0; j < n; ++j) acc += row[j];
      dbias[i] += acc;
    }
}

template <typename T>
void input_col_grad(const T* weight, const T* grad_out, int o, int k, int n, T* dcol) {
  Map<T>(dcol, k, n).noalias() = ConstMap<T>(weight, o, k).transpose() * ConstMap<T>(grad_out, o, n);
}

}  // namespace detail

namespace {

struct ConvGeometry {
  int in_c, h, w, out_c, k, ho, wo;
};

template <typename T>
ConvGeometry check_conv(const Tensor<T>& x, const Tensor<T>& kernel, int stride, int pad) {
  if (x.rank() != 3) throw ArgumentError("conv2d: input must be (C, H, W), got " + shape_string(x.shape));
  if (kernel.rank() != 4 || kernel.dim(2) != kernel.dim(3))
    throw ArgumentError("conv2d: kernel must be (O, C, k, k), got " + shape_string(kernel.shape));
  if (kernel.dim(1) != x.dim(0))
    throw ArgumentError("conv2d: kernel expects " + std::to_string(kernel.dim(1)) +
                        " input channels, input has " + std::to_string(x.dim(0)));
  if (stride < 1 || pad < 0) throw ArgumentError("conv2d: stride must be >= 1 and pad >= 0");
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), kernel.dim(0), kernel.dim(2), 0, 0};
  if (g.h + 2 * pad < g.k || g.w + 2 * pad < g.k)
    throw ArgumentError("conv2d: padded input smaller than kernel");
  g.ho = conv_output_size(g.h, g.k, stride, pad);
  g.wo = conv_output_size(g.w, g.k, stride, pad);
  return g;
}

}  // namespace

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& kernel, std::span<const T> bias,
                         int stride, int pad) {
  const auto g = check_conv(x, kernel, stride, pad);
  if (!bias.empty() && static_cast<int>(bias.size()) != g.out_c)
    throw ArgumentError("conv2d: bias length does not match output channels");
  const int kk = g.in_c * g.k * g.k;
  const int n = g.ho * g.wo;
  std::vector<T> col(static_cast<std::size_t>(kk) * n);
  detail::im2col(x.data(), g.in_c, g.h, g.w, g.k, stride, pad, col.data());
  Tensor<T> out({g.out_c, g.ho, g.wo});
  detail::gemm_bias(kernel.data(), col.data(), bias.empty() ? nullptr : bias.data(), g.out_c, kk, n,
                    out.data());
  return out;
}

template <typename T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& kernel, int stride, int pad,
                               const Tensor<T>& grad_out, bool need_input_grad) {
  const auto g = check_conv(x, kernel, stride, pad);
  if (grad_out.shape != std::vector<int>{g.out_c, g.ho, g.wo})
    throw ArgumentError("conv2d_backward: grad_out shape " + shape_string(grad_out.shape) +
                        " does not match forward output");
  const int kk = g.in_c * g.k * g.k;
  const int n = g.ho * g.wo;
  std::vector<T> col(static_cast<std::size_t>(kk) * n);
  detail::im2col(x.data(), g.in_c, g.h, g.w, g.k, stride, pad, col.data());

  Conv2dGrads<T> grads;
  grads.kernel = Tensor<T>(kernel.shape);
  grads.bias.assign(g.out_c, T{});
  detail::accumulate_weight_grad(grad_out.data(), col.data(), g.out_c, kk, n, grads.kernel.data(),
                                 grads.bias.data());
  if (need_input_grad) {
    detail::input_col_grad(kernel.data(), grad_out.data(), g.out_c, kk, n, col.data());
    grads.input = Tensor<T>(x.shape);
    detail::col2im_add(col.data(), g.in_c, g.h, g.w, g.k, stride, pad, grads.input.data());
  }
  return grads;
}

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x) {
  Tensor<T> out(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) out.values[i] = x.values[i] > T(0) ? x.values[i] : T(0);
  return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& grad_out) {
  if (x.shape != grad_out.shape) throw ArgumentError("relu_backward: shape mismatch");
  Tensor<T> out(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i)
    out.values[i] = x.values[i] > T(0) ? grad_out.values[i] : T(0);
  return out;
}

template <typename T>
Tensor<T> global_avg_pool_forward(const Tensor<T>& x) {
  if (x.rank() != 3) throw ArgumentError("global_avg_pool: input must be (C, H, W)");
  const int c = x.dim(0);
  const std::size_t plane = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  if (plane == 0) throw ArgumentError("global_avg_pool: empty spatial extent");
  Tensor<T> out({c});
  for (int i = 0; i < c; ++i) {
    double acc = 0.0;
    const T* p = x.data() + i * plane;
    for (std::size_t j = 0; j < plane; ++j) acc += p[j];
    out.values[i] = static_cast<T>(acc / static_cast<double>(plane));
  }
  return out;
}

template <typename T>
Tensor<T> global_avg_pool_backward(const std::vector<int>& input_shape, const Tensor<T>& grad_out) {
  if (input_shape.size() != 3 || grad_out.size() != static_cast<std::size_t>(input_shape[0]))
    throw ArgumentError("global_avg_pool_backward: shape mismatch");
  Tensor<T> out(input_shape);
  const std::size_t plane = static_cast<std::size_t>(input_shape[1]) * input_shape[2];
  for (int i = 0; i < input_shape[0]; ++i) {
    const T v = grad_out.values[i] / static_cast<T>(plane);
    std::fill(out.data() + i * plane, out.data() + (i + 1) * plane, v);
  }
  return out;
}

template <typename T>
Tensor<T> fully_connected_forward(const Tensor<T>& x, const Tensor<T>& weight, std::span<const T> bias) {
  if (weight.rank() != 2 || x.size() != static_cast<std::size_t>(weight.dim(1)))
    throw ArgumentError("fully_connected: input length " + std::to_string(x.size()) +
                        " does not match weight " + shape_string(weight.shape));
  if (!bias.empty() && static_cast<int>(bias.size()) != weight.dim(0))
    throw ArgumentError("fully_connected: bias length mismatch");
  Tensor<T> out({weight.dim(0)});
  detail::gemm_bias(weight.data(), x.data(), bias.empty() ? nullptr : bias.data(), weight.dim(0),
                    weight.dim(1), 1, out.data());
  return out;
}

template <typename T>
FullyConnectedGrads<T> fully_connected_backward(const Tensor<T>& x, const Tensor<T>& weight,
                                                const Tensor<T>& grad_out) {
  if (weight.rank() != 2 || x.size() != static_cast<std::size_t>(weight.dim(1)) ||
      grad_out.size() != static_cast<std::size_t>(weight.dim(0)))
    throw ArgumentError("fully_connected_backward: shape mismatch");
  FullyConnectedGrads<T> g;
  g.weight = Tensor<T>(weight.shape);
  g.bias.assign(weight.dim(0), T{});
  detail::accumulate_weight_grad(grad_out.data(), x.data(), weight.dim(0), weight.dim(1), 1,
                                 g.weight.data(), g.bias.data());
  g.input = Tensor<T>(x.shape);
  detail::input_col_grad(weight.data(), grad_out.data(), weight.dim(0), weight.dim(1), 1, g.input.data());
  return g;
}

template <typename T>
std::vector<T> softmax(std::span<const T> logits) {
  if (logits.empty()) throw ArgumentError("softmax: empty logits");
  const double peak = *std::max_element(logits.begin(), logits.end());
  std::vector<double> e(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) sum += e[i] = std::exp(logits[i] - peak);
  std::vector<T> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = static_cast<T>(e[i] / sum);
  return out;
}

template <typename T>
LossAndGrad<T> softmax_cross_entropy(std::span<const T> logits, int label) {
  const int c = static_cast<int>(logits.size());
  if (c < 2) throw ArgumentError("softmax_cross_entropy: need at least two classes");
  if (label < 0 || label >= c) throw ArgumentError("softmax_cross_entropy: label out of range");
  const double peak = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (T v : logits) sum += std::exp(v - peak);
  const double log_z = peak + std::log(sum);
  LossAndGrad<T> out;
  out.loss = log_z - logits[label];
  out.grad.resize(c);
  for (int i = 0; i < c; ++i) out.grad[i] = static_cast<T>(std::exp(logits[i] - log_z) - (i == label ? 1.0 : 0.0));
  return out;
}

template <typename T>
LossAndGrad<T> softmax_cross_entropy_batch(std::span<const T> logits, std::span<const int> labels,
                                           int num_classes) {
  const std::size_t batch = labels.size();
  if (batch == 0 || logits.size() != batch * num_classes)
    throw ArgumentError("softmax_cross_entropy_batch: logits/labels size mismatch");
  LossAndGrad<T> out;
  out.grad.resize(logits.size());
  for (std::size_t b = 0; b < batch; ++b) {
    auto one = softmax_cross_entropy(logits.subspan(b * num_classes, num_classes), labels[b]);
    out.loss += one.loss / static_cast<double>(batch);
    for (int i = 0; i < num_classes; ++i)
      out.grad[b * num_classes + i] = one.grad[i] / static_cast<T>(batch);
  }
  return out;
}

#define FMPNET_INSTANTIATE_LAYERS(T)                                                                  \
  template Tensor<T> conv2d_forward(const Tensor<T>&, const Tensor<T>&, std::span<const T>, int, int); \
  template Conv2dGrads<T> conv2d_backward(const Tensor<T>&, const Tensor<T>&, int, int,                \
                                          const Tensor<T>&, bool);                                     \
  template Tensor<T> relu_forward(const Tensor<T>&);                                                  \
  template Tensor<T> relu_backward(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> global_avg_pool_forward(const Tensor<T>&);                                       \
  template Tensor<T> global_avg_pool_backward(const std::vector<int>&, const Tensor<T>&);             \
  template Tensor<T> fully_connected_forward(const Tensor<T>&, const Tensor<T>&, std::span<const T>); \
  template FullyConnectedGrads<T> fully_connected_backward(const Tensor<T>&, const Tensor<T>&,        \
                                                           const Tensor<T>&);                         \
  template std::vector<T> softmax(std::span<const T>);                                                \
  template LossAndGrad<T> softmax_cross_entropy(std::span<const T>, int);                             \
  template LossAndGrad<T> softmax_cross_entropy_batch(std::span<const T>, std::span<const int>, int); \
  template void detail::im2col(const T*, int, int, int, int, int, int, T*);                           \
  template void detail::col2im_add(const T*, int, int, int, int, int, int, T*);                       \
  template void detail::gemm_bias(const T*, const T*, const T*, int, int, int, T*);                   \
  template void detail::accumulate_weight_grad(const T*, const T*, int, int, int, T*, T*);            \
  template void detail::input_col_grad(const T*, const T*, int, int, int, T*);

FMPNET_INSTANTIATE_LAYERS(float)
FMPNET_INSTANTIATE_LAYERS(double)

#undef FMPNET_INSTANTIATE_LAYERS

}  // namespace fmpnet
