#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "llgan/tensor.hpp"

namespace llgan::nn {

// Classical Adam with coupled L2 weight decay (grad += wd * param).
template <typename T>
struct AdamState {
  int64_t step = 0;
  std::vector<std::vector<T>> m, v;
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T lr = T(1e-4);
  T eps = T(1e-8);
  T weight_decay = T(0);
};

template <typename T>
void adam_step(std::vector<Tensor<T>>& params, AdamState<T>& state) {
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].numel(), T(0));
      state.v[i].assign(params[i].numel(), T(0));
    }
  }
  if (state.m.size() != params.size())
    throw std::invalid_argument("adam_step: state/parameter count mismatch");
  ++state.step;
  const T bc1 = T(1) - std::pow(state.beta1, static_cast<T>(state.step));
  const T bc2 = T(1) - std::pow(state.beta2, static_cast<T>(state.step));
  for (size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.has_grad())
      throw std::logic_error("adam_step: parameter " + std::to_string(i) +
                             " has no gradient");
    auto& val = p.data();
    const auto& g = p.grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (size_t j = 0; j < val.size(); ++j) {
      T grad = g[j] + state.weight_decay * val[j];
      m[j] = state.beta1 * m[j] + (T(1) - state.beta1) * grad;
      v[j] = state.beta2 * v[j] + (T(1) - state.beta2) * grad * grad;
      T mhat = m[j] / bc1;
      T vhat = v[j] / bc2;
      val[j] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

}  // namespace llgan::nn
