#pragma once

#include <cmath>
#include <random>
#include <string>

#include "bcd/autodiff.hpp"
#include "bcd/ops.hpp"

namespace bcd {

/// Uniform [-bound, bound] fill from one engine; bound = 1/sqrt(fan_in) for weights.
template <class T>
Tensor<T> uniform_tensor(Shape shape, double bound, std::mt19937_64& rng) {
  Tensor<T> t(shape);
  for (auto& v : t.values()) v = T((2.0 * uniform01(rng) - 1.0) * bound);
  return t;
}

template <class T>
Parameter<T> conv_weight(std::string name, std::size_t out, std::size_t in, std::size_t k,
                         std::mt19937_64& rng) {
  return Parameter<T>(std::move(name),
                      uniform_tensor<T>(Shape{out, in, k, k}, 1.0 / std::sqrt(double(in * k * k)), rng));
}

template <class T>
Parameter<T> bias_param(std::string name, std::size_t n, T fill = T(0)) {
  return Parameter<T>(std::move(name), Tensor<T>(Shape{n, 1, 1, 1}, fill));
}

inline double softplus_inverse(double y) { return y > 20 ? y : std::log(std::expm1(y)); }

inline constexpr double kGdnBetaFloor = 1e-6;

/// Divisive-normalization parameters kept unconstrained; beta = softplus(raw) + 1e-6
/// and gamma = softplus(raw) hold beta >= 1e-6 and gamma >= 0 under any update.
template <class T>
struct GdnParams {
  Parameter<T> beta_raw;   // (C)
  Parameter<T> gamma_raw;  // (C, C)

  GdnParams() = default;
  GdnParams(const std::string& prefix, std::size_t channels) {
    beta_raw = Parameter<T>(prefix + ".beta", Tensor<T>(Shape{channels, 1, 1, 1}, T(softplus_inverse(1.0))));
    Tensor<T> g(Shape{channels, channels, 1, 1}, T(softplus_inverse(1e-4)));
    for (std::size_t i = 0; i < channels; ++i) g[i * channels + i] = T(softplus_inverse(0.1));
    gamma_raw = Parameter<T>(prefix + ".gamma", std::move(g));
  }

  std::size_t channels() const { return beta_raw.value.size(); }

  Var<T> beta(Tape<T>& t) { return add_scalar(softplus(t.param(beta_raw)), T(kGdnBetaFloor)); }
  Var<T> gamma(Tape<T>& t) { return softplus(t.param(gamma_raw)); }

  template <class F>
  void for_each(F&& f) {
    f(beta_raw);
    f(gamma_raw);
  }
};

/// y_i = x_i / sqrt(beta_i + sum_j gamma_ij x_j^2).
template <class T>
Var<T> gdn(const Var<T>& x, const Var<T>& beta, const Var<T>& gamma) {
  return divisive_norm(x, beta, gamma, false);
}

/// y_i = x_i * sqrt(beta_i + sum_j gamma_ij x_j^2).
template <class T>
Var<T> igdn(const Var<T>& x, const Var<T>& beta, const Var<T>& gamma) {
  return divisive_norm(x, beta, gamma, true);
}

template <class T>
Var<T> gdn(const Var<T>& x, GdnParams<T>& p) {
  return gdn(x, p.beta(x.tape()), p.gamma(x.tape()));
}

template <class T>
Var<T> igdn(const Var<T>& x, GdnParams<T>& p) {
  return igdn(x, p.beta(x.tape()), p.gamma(x.tape()));
}

/// Squeeze-and-excitation weights for C channels with reduction ratio r.
template <class T>
struct SeParams {
  Parameter<T> reduce_w;  // (C/r, C, 1, 1)
  Parameter<T> reduce_b;  // (C/r)
  Parameter<T> expand_w;  // (C, C/r, 1, 1)
  Parameter<T> expand_b;  // (C)

  SeParams() = default;
  SeParams(const std::string& prefix, std::size_t channels, std::size_t ratio, std::mt19937_64& rng) {
    if (ratio == 0 || channels % ratio != 0)
      throw std::invalid_argument("SeParams: " + std::to_string(channels) +
                                  " channels not divisible by reduction ratio " + std::to_string(ratio));
    const std::size_t hidden = channels / ratio;
    reduce_w = conv_weight<T>(prefix + ".reduce.w", hidden, channels, 1, rng);
    reduce_b = bias_param<T>(prefix + ".reduce.b", hidden);
    expand_w = conv_weight<T>(prefix + ".expand.w", channels, hidden, 1, rng);
    expand_b = bias_param<T>(prefix + ".expand.b", channels);
  }

  std::size_t channels() const { return expand_b.value.size(); }

  template <class F>
  void for_each(F&& f) {
    f(reduce_w);
    f(reduce_b);
    f(expand_w);
    f(expand_b);
  }
};

/// Per-channel factors s = sigmoid(W_e relu(W_r mean(x) + b_r) + b_e), shape (n, C, 1, 1).
template <class T>
Var<T> se_factors(const Var<T>& x, SeParams<T>& p) {
  if (x.shape().c != p.channels())
    throw ShapeError("se_block: input " + to_string(x.shape()) + " does not match " +
                     std::to_string(p.channels()) + " SE channels");
  Tape<T>& t = x.tape();
  const Var<T> squeezed = spatial_mean(x);
  const Var<T> hidden = relu(conv2d(squeezed, t.param(p.reduce_w), t.param(p.reduce_b), 1, 0));
  return sigmoid(conv2d(hidden, t.param(p.expand_w), t.param(p.expand_b), 1, 0));
}

template <class T>
Var<T> se_block(const Var<T>& x, SeParams<T>& p) {
  return channel_scale(x, se_factors(x, p));
}

}  // namespace bcd
