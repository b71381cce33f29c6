#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "fmpnet/tensor.hpp"

namespace fmpnet {

int conv_output_size(int in, int kernel, int stride, int pad);

// Cross-correlation of x (C, H, W) with kernel (O, C, kh, kw) plus per-output bias.
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& kernel, std::span<const T> bias,
                         int stride, int pad);

template <typename T>
struct Conv2dGrads {
  Tensor<T> input;  // empty when not requested
  Tensor<T> kernel;
  std::vector<T> bias;
};

template <typename T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& kernel, int stride, int pad,
                               const Tensor<T>& grad_out, bool need_input_grad = true);

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x);
/// Gradient w.r.t. the relu input; `x` is the forward input.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& grad_out);

/// (C, H, W) -> (C)
template <typename T>
Tensor<T> global_avg_pool_forward(const Tensor<T>& x);
template <typename T>
Tensor<T> global_avg_pool_backward(const std::vector<int>& input_shape, const Tensor<T>& grad_out);

/// weight is (out, in); x is (in).
template <typename T>
Tensor<T> fully_connected_forward(const Tensor<T>& x, const Tensor<T>& weight, std::span<const T> bias);

template <typename T>
struct FullyConnectedGrads {
  Tensor<T> input;
  Tensor<T> weight;
  std::vector<T> bias;
};

template <typename T>
FullyConnectedGrads<T> fully_connected_backward(const Tensor<T>& x, const Tensor<T>& weight,
                                                const Tensor<T>& grad_out);

template <typename T>
std::vector<T> softmax(std::span<const T> logits);

template <typename T>
struct LossAndGrad {
  double loss = 0.0;
  std::vector<T> grad;
};

/// -log softmax(logits)[label] and its gradient softmax - onehot.
template <typename T>
LossAndGrad<T> softmax_cross_entropy(std::span<const T> logits, int label);

/// Mean loss over a batch; each row's gradient is scaled by 1/batch.
template <typename T>
LossAndGrad<T> softmax_cross_entropy_batch(std::span<const T> logits, std::span<const int> labels,
                                           int num_classes);

template <typename T>
inline T sigmoid(T z) {
  return z >= T(0) ? T(1) / (T(1) + std::exp(-z)) : std::exp(z) / (T(1) + std::exp(z));
}

namespace detail {

// Lowered-convolution kernels shared by the free functions and the model.
// col is (C*k*k) x (Ho*Wo) row-major.
template <typename T>
void im2col(const T* x, int channels, int h, int w, int k, int stride, int pad, T* col);
template <typename T>
void col2im_add(const T* col, int channels, int h, int w, int k, int stride, int pad, T* dx);

// out (O x N) = W (O x K) * col (K x N) + bias
template <typename T>
void gemm_bias(const T* weight, const T* col, const T* bias, int o, int k, int n, T* out);
// dW (O x K) += dOut (O x N) * col^T ; db += rowsum(dOut)
template <typename T>
void accumulate_weight_grad(const T* grad_out, const T* col, int o, int k, int n, T* dweight, T* dbias);
// dcol (K x N) = W^T (K x O) * dOut (O x N)
template <typename T>
void input_col_grad(const T* weight, const T* grad_out, int o, int k, int n, T* dcol);

}  // namespace detail

}  // namespace fmpnet
