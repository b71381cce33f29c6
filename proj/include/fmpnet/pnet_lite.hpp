#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fmpnet/tensor.hpp"

namespace fmpnet {

/// Compact classifier over (2, p, q) time-frequency inputs:
///   conv 2->16 -> relu -> conv 16->32 -> relu -> conv 32->64 -> relu -> GAP -> fc 64->C
/// Every conv is 3x3, stride 2, pad 1.
template <typename T>
class PnetLite {
 public:
  static constexpr int kInputChannels = 2;
  static constexpr int kMinSpatial = 8;
  static constexpr int kKernel = 3;
  static constexpr int kStride = 2;
  static constexpr int kPad = 1;
  static constexpr int kWidths[3] = {16, 32, 64};

  PnetLite() = default;
  /// Kaiming-uniform (fan-in) weights, zero biases.
  PnetLite(int num_classes, std::uint64_t seed);

  int num_classes() const { return num_classes_; }

  struct Param {
    std::string name;
    Tensor<T>* tensor;
  };
  struct ConstParam {
    std::string name;
    const Tensor<T>* tensor;
  };
  /// Declared order: conv1.w conv1.b conv2.w conv2.b conv3.w conv3.b fc.w fc.b
  std::vector<Param> parameters();
  std::vector<ConstParam> parameters() const;
  std::vector<Tensor<T>*> parameter_tensors();
  std::size_t parameter_count() const;

  void zero_grad();

  /// Throws InferenceError for inputs the network cannot take.
  void check_input(const std::vector<int>& shape) const;

  /// Logits for one (2, p, q) input. Thread-safe on a const model.
  std::vector<T> forward(const Tensor<T>& x) const;

  struct SampleResult {
    double loss = 0.0;
    int predicted = 0;
  };

  /// Forward + backward of one sample. Parameter gradients are accumulated
  /// (+=) after scaling by `scale`; `input_grad`, when given, receives the
  /// equally scaled gradient w.r.t. x.
  SampleResult accumulate_gradients(const Tensor<T>& x, int label, T scale,
                                    Tensor<T>* input_grad = nullptr);

  template <typename U>
  PnetLite<U> cast() const;

  Tensor<T> conv_w[3];
  Tensor<T> conv_b[3];
  Tensor<T> fc_w;
  Tensor<T> fc_b;

 private:
  int num_classes_ = 0;
};

template <typename T>
template <typename U>
PnetLite<U> PnetLite<T>::cast() const {
  PnetLite<U> out;
  out = PnetLite<U>(num_classes_, 0);
  for (int i = 0; i < 3; ++i) {
    out.conv_w[i] = tensor_cast<U>(conv_w[i]);
    out.conv_b[i] = tensor_cast<U>(conv_b[i]);
  }
  out.fc_w = tensor_cast<U>(fc_w);
  out.fc_b = tensor_cast<U>(fc_b);
  return out;
}

struct LayerCost {
  std::string name;
  std::vector<int> output_shape;
  std::int64_t params = 0;
  std::int64_t flops = 0;
};

/// Complexity of one forward pass. One multiply-accumulate counts as 2 FLOPs;
/// bias adds, activations and pooling are not counted.
struct FlopReport {
  std::vector<int> input_shape;
  std::int64_t params = 0;
  std::int64_t flops = 0;
  std::vector<LayerCost> layers;
};

FlopReport count_flops_params(int num_classes, const std::vector<int>& input_shape);

template <typename T>
FlopReport count_flops_params(const PnetLite<T>& model, const std::vector<int>& input_shape) {
  return count_flops_params(model.num_classes(), input_shape);
}

}  // namespace fmpnet
