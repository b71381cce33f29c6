#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fmpnet/errors.hpp"
#include "fmpnet/tensor.hpp"

namespace fmpnet {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// First/second moments per parameter tensor plus the step count.
template <typename T>
struct AdamWState {
  AdamWConfig config;
  std::int64_t step = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
};

/// Decoupled weight decay Adam:
///   theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)
/// Uses each tensor's `grad`. A non-finite gradient rejects the whole step and
/// leaves parameters and state untouched.
template <typename T>
void adamw_step(std::span<Tensor<T>* const> params, AdamWState<T>& state) {
  if (state.m.empty()) {
    for (const auto* p : params) {
      state.m.emplace_back(p->size(), T{});
      state.v.emplace_back(p->size(), T{});
    }
  }
  if (state.m.size() != params.size())
    throw ArgumentError("adamw_step: parameter count changed between steps");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto* p = params[i];
    if (p->grad.size() != p->size() || state.m[i].size() != p->size())
      throw ArgumentError("adamw_step: gradient/state shape mismatch");
    for (T g : p->grad)
      if (!std::isfinite(g)) throw TrainingError("adamw_step: non-finite gradient, step rejected");
  }

  const auto& c = state.config;
  const std::int64_t t = ++state.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& theta = params[i]->values;
    const auto& g = params[i]->grad;
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const double gj = g[j];
      const double mj = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
      const double vj = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double m_hat = mj / bc1;
      const double v_hat = vj / bc2;
      const double th = theta[j];
      theta[j] = static_cast<T>(th - c.lr * (m_hat / (std::sqrt(v_hat) + c.eps) + c.weight_decay * th));
    }
  }
}

}  // namespace fmpnet
