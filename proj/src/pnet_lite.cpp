#include "fmpnet/pnet_lite.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "fmpnet/errors.hpp"
#include "fmpnet/layers.hpp"

namespace fmpnet {
namespace {

template <typename T>
void kaiming_uniform(Tensor<T>& w, int fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / fan_in);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : w.values) v = static_cast<T>(dist(rng));
}

struct Geometry {
  int c, h, w;
};

}  // namespace

template <typename T>
PnetLite<T>::PnetLite(int num_classes, std::uint64_t seed) : num_classes_(num_classes) {
  if (num_classes < 2) throw ArgumentError("PnetLite: need at least two classes");
  std::mt19937_64 rng(seed);
  int in_c = kInputChannels;
  for (int i = 0; i < 3; ++i) {
    conv_w[i] = Tensor<T>({kWidths[i], in_c, kKernel, kKernel});
    conv_b[i] = Tensor<T>({kWidths[i]});
    kaiming_uniform(conv_w[i], in_c * kKernel * kKernel, rng);
    in_c = kWidths[i];
  }
  fc_w = Tensor<T>({num_classes, in_c});
  fc_b = Tensor<T>({num_classes});
  kaiming_uniform(fc_w, in_c, rng);
}

template <typename T>
std::vector<typename PnetLite<T>::Param> PnetLite<T>::parameters() {
  return {{"conv1.weight", &conv_w[0]}, {"conv1.bias", &conv_b[0]}, {"conv2.weight", &conv_w[1]},
          {"conv2.bias", &conv_b[1]},   {"conv3.weight", &conv_w[2]}, {"conv3.bias", &conv_b[2]},
          {"fc.weight", &fc_w},         {"fc.bias", &fc_b}};
}

template <typename T>
std::vector<typename PnetLite<T>::ConstParam> PnetLite<T>::parameters() const {
  std::vector<ConstParam> out;
  for (auto& p : const_cast<PnetLite*>(this)->parameters()) out.push_back({p.name, p.tensor});
  return out;
}

template <typename T>
std::vector<Tensor<T>*> PnetLite<T>::parameter_tensors() {
  std::vector<Tensor<T>*> out;
  for (auto& p : parameters()) out.push_back(p.tensor);
  return out;
}

template <typename T>
std::size_t PnetLite<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor->size();
  return n;
}

template <typename T>
void PnetLite<T>::zero_grad() {
  for (auto* p : parameter_tensors()) p->zero_grad();
}

template <typename T>
void PnetLite<T>::check_input(const std::vector<int>& shape) const {
  if (shape.size() != 3 || shape[0] != kInputChannels || shape[1] < kMinSpatial || shape[2] < kMinSpatial)
    throw InferenceError("PnetLite: input must be (2, p>=8, q>=8), got " + shape_string(shape));
}

template <typename T>
std::vector<T> PnetLite<T>::forward(const Tensor<T>& x) const {
  check_input(x.shape);
  Tensor<T> a = x;
  for (int i = 0; i < 3; ++i) {
    a = conv2d_forward(a, conv_w[i], std::span<const T>(conv_b[i].values), kStride, kPad);
    for (auto& v : a.values) v = std::max(v, T(0));
  }
  const auto pooled = global_avg_pool_forward(a);
  return fully_connected_forward(pooled, fc_w, std::span<const T>(fc_b.values)).values;
}

template <typename T>
typename PnetLite<T>::SampleResult PnetLite<T>::accumulate_gradients(const Tensor<T>& x, int label,
                                                                     T scale, Tensor<T>* input_grad) {
  check_input(x.shape);
  if (label < 0 || label >= num_classes_) throw ArgumentError("PnetLite: label out of range");
  for (auto* p : parameter_tensors())
    if (!p->has_grad()) p->zero_grad();

  // forward, keeping im2col buffers and post-relu activations
  Geometry geo[4];
  geo[0] = {kInputChannels, x.dim(1), x.dim(2)};
  std::vector<T> cols[3];
  std::vector<T> acts[4];
  const T* in = x.data();
  for (int i = 0; i < 3; ++i) {
    const auto& g = geo[i];
    const int ho = conv_output_size(g.h, kKernel, kStride, kPad);
    const int wo = conv_output_size(g.w, kKernel, kStride, kPad);
    geo[i + 1] = {kWidths[i], ho, wo};
    const int kk = g.c * kKernel * kKernel;
    const int n = ho * wo;
    cols[i].resize(static_cast<std::size_t>(kk) * n);
    detail::im2col(in, g.c, g.h, g.w, kKernel, kStride, kPad, cols[i].data());
    acts[i + 1].resize(static_cast<std::size_t>(kWidths[i]) * n);
    detail::gemm_bias(conv_w[i].data(), cols[i].data(), conv_b[i].data(), kWidths[i], kk, n,
                      acts[i + 1].data());
    for (auto& v : acts[i + 1]) v = std::max(v, T(0));
    in = acts[i + 1].data();
  }
  const auto& g3 = geo[3];
  const std::size_t plane3 = static_cast<std::size_t>(g3.h) * g3.w;
  std::vector<T> pooled(g3.c);
  for (int c = 0; c < g3.c; ++c) {
    double acc = 0.0;
    for (std::size_t j = 0; j < plane3; ++j) acc += acts[3][c * plane3 + j];
    pooled[c] = static_cast<T>(acc / static_cast<double>(plane3));
  }
  std::vector<T> logits(num_classes_);
  detail::gemm_bias(fc_w.data(), pooled.data(), fc_b.data(), num_classes_, g3.c, 1, logits.data());

  auto ce = softmax_cross_entropy(std::span<const T>(logits), label);
  SampleResult result;
  result.loss = ce.loss;
  result.predicted = static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());

  // backward
  for (auto& v : ce.grad) v *= scale;
  detail::accumulate_weight_grad(ce.grad.data(), pooled.data(), num_classes_, g3.c, 1, fc_w.grad.data(),
                                 fc_b.grad.data());
  std::vector<T> dpooled(g3.c);
  detail::input_col_grad(fc_w.data(), ce.grad.data(), num_classes_, g3.c, 1, dpooled.data());

  std::vector<T> dact(acts[3].size());
  for (int c = 0; c < g3.c; ++c) {
    const T v = dpooled[c] / static_cast<T>(plane3);
    for (std::size_t j = 0; j < plane3; ++j) dact[c * plane3 + j] = v;
  }
  for (int i = 2; i >= 0; --i) {
    const auto& gi = geo[i];
    const auto& go = geo[i + 1];
    // relu mask from the stored post-activation values
    for (std::size_t j = 0; j < dact.size(); ++j)
      if (!(acts[i + 1][j] > T(0))) dact[j] = T(0);
    const int kk = gi.c * kKernel * kKernel;
    const int n = go.h * go.w;
    detail::accumulate_weight_grad(dact.data(), cols[i].data(), go.c, kk, n, conv_w[i].grad.data(),
                                   conv_b[i].grad.data());
    if (i == 0 && input_grad == nullptr) break;
    // reuse the im2col buffer for the column gradient
    detail::input_col_grad(conv_w[i].data(), dact.data(), go.c, kk, n, cols[i].data());
    std::vector<T> dprev(static_cast<std::size_t>(gi.c) * gi.h * gi.w, T(0));
    detail::col2im_add(cols[i].data(), gi.c, gi.h, gi.w, kKernel, kStride, kPad, dprev.data());
    if (i == 0) {
      *input_grad = Tensor<T>(x.shape, std::move(dprev));
    } else {
      dact = std::move(dprev);
    }
  }
  return result;
}

FlopReport count_flops_params(int num_classes, const std::vector<int>& input_shape) {
  if (input_shape.size() != 3 || input_shape[0] != 2)
    throw ArgumentError("count_flops_params: input must be (2, p, q)");
  FlopReport r;
  r.input_shape = input_shape;
  int c = input_shape[0], h = input_shape[1], w = input_shape[2];
  constexpr int k = PnetLite<float>::kKernel;
  for (int i = 0; i < 3; ++i) {
    const int oc = PnetLite<float>::kWidths[i];
    const int ho = conv_output_size(h, k, PnetLite<float>::kStride, PnetLite<float>::kPad);
    const int wo = conv_output_size(w, k, PnetLite<float>::kStride, PnetLite<float>::kPad);
    LayerCost l;
    l.name = "conv" + std::to_string(i + 1);
    l.output_shape = {oc, ho, wo};
    l.params = static_cast<std::int64_t>(oc) * c * k * k + oc;
    l.flops = 2LL * ho * wo * oc * c * k * k;
    r.layers.push_back(l);
    c = oc;
    h = ho;
    w = wo;
  }
  r.layers.push_back({"gap", {c}, 0, 0});
  r.layers.push_back({"fc", {num_classes}, static_cast<std::int64_t>(c) * num_classes + num_classes,
                      2LL * c * num_classes});
  for (const auto& l : r.layers) {
    r.params += l.params;
    r.flops += l.flops;
  }
  return r;
}

template class PnetLite<float>;
template class PnetLite<double>;

}  // namespace fmpnet
