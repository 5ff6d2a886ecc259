#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "bcd/autodiff.hpp"

namespace bcd {

struct AdamOptions {
  double learning_rate = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0;  ///< decoupled: p -= lr * weight_decay * p
};

/// Moment accumulators mirroring a parameter list.
template <class T>
struct AdamState {
  AdamOptions options;
  std::uint64_t step = 0;
  std::vector<Tensor<T>> m, v;
};

/// One bias-corrected Adam update over `params` using their accumulated grads.
template <class T>
void adam_step(std::span<Parameter<T>* const> params, AdamState<T>& state) {
  if (state.m.empty()) {
    for (auto* p : params) {
      state.m.emplace_back(p->value.shape());
      state.v.emplace_back(p->value.shape());
    }
  }
  if (state.m.size() != params.size())
    throw std::invalid_argument("adam_step: optimizer state tracks " + std::to_string(state.m.size()) +
                                " parameters, got " + std::to_string(params.size()));
  const AdamOptions& o = state.options;
  ++state.step;
  const double c1 = 1.0 - std::pow(o.beta1, double(state.step));
  const double c2 = 1.0 - std::pow(o.beta2, double(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter<T>& p = *params[k];
    if (p.grad.shape() != p.value.shape()) p.zero_grad();
    require_same_shape(p.grad.shape(), state.m[k].shape(), "adam_step");
    Tensor<T>& m = state.m[k];
    Tensor<T>& v = state.v[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = double(p.grad[i]);
      m[i] = T(o.beta1 * double(m[i]) + (1 - o.beta1) * g);
      v[i] = T(o.beta2 * double(v[i]) + (1 - o.beta2) * g * g);
      const double mhat = double(m[i]) / c1, vhat = double(v[i]) / c2;
      double w = double(p.value[i]);
      if (o.weight_decay != 0) w -= o.learning_rate * o.weight_decay * w;
      w -= o.learning_rate * mhat / (std::sqrt(vhat) + o.epsilon);
      p.value[i] = T(w);
    }
  }
}

}  // namespace bcd
