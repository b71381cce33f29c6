#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

namespace fmpnet {

/// Dense row-major tensor. `grad` stays empty until a gradient is requested.
template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> values;
  std::vector<T> grad;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, T fill = T{})
      : shape(std::move(s)), values(count(shape), fill) {}
  Tensor(std::vector<int> s, std::vector<T> v) : shape(std::move(s)), values(std::move(v)) {}

  static std::size_t count(const std::vector<int>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1},
                           [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
  }

  std::size_t size() const { return values.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[i]; }
  bool has_grad() const { return !grad.empty(); }
  void zero_grad() { grad.assign(values.size(), T{}); }

  T* data() { return values.data(); }
  const T* data() const { return values.data(); }
};

std::string shape_string(const std::vector<int>& shape);

template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& t) {
  Tensor<To> out;
  out.shape = t.shape;
  out.values.assign(t.values.begin(), t.values.end());
  return out;
}

}  // namespace fmpnet
