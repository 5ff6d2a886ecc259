#pragma once

// Bidirectional gated units whose states flow across significance branches
// rather than across time.
//
// A layer holds N branches. Branch l runs an LSTM-style cell whose neighbour
// state comes from branch l-1 (forward sweep, l = 1..N) and a second cell fed
// from branch l+1 (backward sweep, l = N..1). Each branch owns its weights.
// The two hidden states are concatenated, reweighted per channel by an SE
// block, mixed by a stride-1 convolution and normalized by GDN (encoder side)
// or IGDN (decoder side).
//
// Encoder units downsample on the input path (stride-2 input convolutions);
// decoder units upsample it (input convolutions emit 4x channels that a
// pixel shuffle turns into 2x resolution). Neighbour-state convolutions always
// run at the output resolution.

#include <cstddef>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bcd/autodiff.hpp"
#include "bcd/nn_layers.hpp"
#include "bcd/ops.hpp"

namespace bcd {

enum class Resample { down, up };

/// Which sweeps a layer runs. `down` is the forward sweep (branch l-1 feeds l),
/// `up` the backward sweep (branch l+1 feeds l).
enum class Flow { bidirectional, down, up };

enum class Norm { gdn, leaky_relu };

inline constexpr double kLeakyReluAlpha = 0.2;

/// Gate order inside the packed 4C channel axis.
enum Gate : std::size_t { kInputGate = 0, kForgetGate = 1, kOutputGate = 2, kCandidate = 3 };

/// One direction's gate weights for one branch, the four gates packed along
/// the output-channel axis in Gate order.
template <class T>
struct GateParams {
  Parameter<T> wx;    // (4C, Cin, k, k) for down; (16C, Cin, k, k) for up
  Parameter<T> wh;    // (4C, C, k, k)
  Parameter<T> bias;  // (4C)

  GateParams() = default;
  GateParams(const std::string& prefix, std::size_t in_channels, std::size_t hidden, std::size_t kernel,
             Resample resample, std::mt19937_64& rng) {
    const std::size_t x_out = resample == Resample::down ? 4 * hidden : 16 * hidden;
    wx = conv_weight<T>(prefix + ".wx", x_out, in_channels, kernel, rng);
    wh = conv_weight<T>(prefix + ".wh", 4 * hidden, hidden, kernel, rng);
    bias = bias_param<T>(prefix + ".b", 4 * hidden);
    for (std::size_t i = 0; i < hidden; ++i) bias.value[kForgetGate * hidden + i] = T(1);
  }

  std::size_t hidden() const { return wh.value.shape().c; }
  std::size_t kernel() const { return wh.value.shape().h; }

  template <class F>
  void for_each(F&& f) {
    f(wx);
    f(wh);
    f(bias);
  }
};

template <class T>
struct GateState {
  Var<T> h;
  Var<T> c;
};

/// Output spatial extent of a unit for an input extent.
inline std::size_t unit_extent(std::size_t in, std::size_t kernel, Resample r) {
  return r == Resample::down ? (in + 2 * (kernel / 2) - kernel) / 2 + 1 : 2 * in;
}

/// One cell update:
///   [i f o] = sigmoid(Wx*x + Wh*h_in + b), in = tanh(...),
///   c = f . c_in + i . in,  h = o . tanh(c).
template <class T>
GateState<T> gated_step(const Var<T>& x, const Var<T>& h_in, const Var<T>& c_in, GateParams<T>& p,
                        Resample resample) {
  Tape<T>& t = x.tape();
  const std::size_t k = p.kernel(), hid = p.hidden();
  Var<T> gx = resample == Resample::down ? conv2d(x, t.param(p.wx), 2, k / 2)
                                         : pixel_shuffle(conv2d(x, t.param(p.wx), 1, k / 2), 2);
  if (h_in.shape() != c_in.shape() || gx.shape().h != h_in.shape().h || gx.shape().w != h_in.shape().w ||
      h_in.shape().c != hid)
    throw ShapeError("gated_step: neighbour state " + to_string(h_in.shape()) + " / cell " +
                     to_string(c_in.shape()) + " does not match transformed input " + to_string(gx.shape()));
  const Var<T> pre = gx + conv2d(h_in, t.param(p.wh), t.param(p.bias), 1, k / 2);
  const Var<T> i = sigmoid(slice_channels(pre, kInputGate * hid, hid));
  const Var<T> f = sigmoid(slice_channels(pre, kForgetGate * hid, hid));
  const Var<T> o = sigmoid(slice_channels(pre, kOutputGate * hid, hid));
  const Var<T> in = tanh(slice_channels(pre, kCandidate * hid, hid));
  const Var<T> c = f * c_in + i * in;
  return {o * tanh(c), c};
}

struct LayerOptions {
  Resample resample = Resample::down;
  Flow flow = Flow::bidirectional;
  bool shared_gates = false;  ///< one GateParams per direction reused by every branch
  bool se = true;
  Norm norm = Norm::gdn;
  std::size_t gate_kernel = 3;
  std::size_t fuse_kernel = 3;
  std::size_t se_ratio = 4;
};

/// Per-branch fusion after the gated cells: SE, convolution, normalization.
template <class T>
struct FusionParams {
  SeParams<T> se;
  Parameter<T> conv_w;
  Parameter<T> conv_b;
  GdnParams<T> norm;

  template <class F>
  void for_each(F&& f, const LayerOptions& o) {
    if (o.se) se.for_each(f);
    f(conv_w);
    f(conv_b);
    if (o.norm == Norm::gdn) norm.for_each(f);
  }
};

template <class T>
class GatedLayer {
 public:
  GatedLayer() = default;
  GatedLayer(const std::string& prefix, std::size_t branches, std::size_t in_channels, std::size_t out_channels,
             const LayerOptions& opts, std::mt19937_64& rng)
      : opts_(opts), branches_(branches), in_(in_channels), out_(out_channels) {
    if (branches == 0) throw std::invalid_argument("GatedLayer: need at least one branch");
    const std::size_t gate_sets = opts.shared_gates ? 1 : branches;
    for (std::size_t l = 0; l < gate_sets; ++l) {
      const std::string tag = prefix + (opts.shared_gates ? ".shared" : ".branch" + std::to_string(l + 1));
      if (opts.flow != Flow::up)
        fwd_.emplace_back(tag + ".fwd", in_channels, out_channels, opts.gate_kernel, opts.resample, rng);
      if (opts.flow != Flow::down)
        bwd_.emplace_back(tag + ".bwd", in_channels, out_channels, opts.gate_kernel, opts.resample, rng);
    }
    const std::size_t fused_in = fused_channels();
    for (std::size_t l = 0; l < branches; ++l) {
      const std::string tag = prefix + ".branch" + std::to_string(l + 1);
      FusionParams<T> fp;
      if (opts.se) fp.se = SeParams<T>(tag + ".se", fused_in, opts.se_ratio, rng);
      fp.conv_w = conv_weight<T>(tag + ".fuse.w", out_channels, fused_in, opts.fuse_kernel, rng);
      fp.conv_b = bias_param<T>(tag + ".fuse.b", out_channels);
      if (opts.norm == Norm::gdn) fp.norm = GdnParams<T>(tag + (opts.resample == Resample::down ? ".gdn" : ".igdn"), out_channels);
      fusion_.push_back(std::move(fp));
    }
  }

  const LayerOptions& options() const { return opts_; }
  std::size_t branches() const { return branches_; }
  std::size_t in_channels() const { return in_; }
  std::size_t out_channels() const { return out_; }
  /// Channels entering SE/fusion: both hidden states, or one.
  std::size_t fused_channels() const { return opts_.flow == Flow::bidirectional ? 2 * out_ : out_; }

  GateParams<T>& gates(Flow direction, std::size_t branch) {
    auto& set = direction == Flow::down ? fwd_ : bwd_;
    if (set.empty()) throw std::logic_error("GatedLayer: direction not present in this layer");
    return set[opts_.shared_gates ? 0 : branch];
  }
  FusionParams<T>& fusion(std::size_t branch) { return fusion_.at(branch); }

  /// Runs one sweep and returns every branch's state. `down` visits l = 1..N
  /// seeded by zero state; `up` visits l = N..1.
  std::vector<GateState<T>> sweep(std::span<const Var<T>> inputs, Flow direction) {
    check_inputs(inputs);
    Tape<T>& t = inputs[0].tape();
    const Shape xs = inputs[0].shape();
    const Shape ss{xs.n, out_, unit_extent(xs.h, opts_.gate_kernel, opts_.resample),
                   unit_extent(xs.w, opts_.gate_kernel, opts_.resample)};
    const Var<T> zero = t.constant(Tensor<T>(ss));
    std::vector<GateState<T>> states(branches_);
    GateState<T> carry{zero, zero};
    for (std::size_t step = 0; step < branches_; ++step) {
      const std::size_t l = direction == Flow::down ? step : branches_ - 1 - step;
      carry = gated_step(inputs[l], carry.h, carry.c, gates(direction, l), opts_.resample);
      states[l] = carry;
    }
    return states;
  }

  std::vector<Var<T>> apply(std::span<const Var<T>> inputs) {
    check_inputs(inputs);
    std::vector<GateState<T>> down, up;
    if (opts_.flow != Flow::up) down = sweep(inputs, Flow::down);
    if (opts_.flow != Flow::down) up = sweep(inputs, Flow::up);
    std::vector<Var<T>> out;
    out.reserve(branches_);
    for (std::size_t l = 0; l < branches_; ++l) {
      Var<T> y = opts_.flow == Flow::bidirectional ? concat_channels(down[l].h, up[l].h)
                 : opts_.flow == Flow::down       ? down[l].h
                                                  : up[l].h;
      out.push_back(fuse(y, l));
    }
    return out;
  }

  /// SE -> convolution -> GDN/IGDN (or leaky ReLU) for one branch.
  Var<T> fuse(const Var<T>& y, std::size_t branch) {
    Tape<T>& t = y.tape();
    FusionParams<T>& fp = fusion_.at(branch);
    Var<T> z = opts_.se ? se_block(y, fp.se) : y;
    z = conv2d(z, t.param(fp.conv_w), t.param(fp.conv_b), 1, opts_.fuse_kernel / 2);
    if (opts_.norm == Norm::leaky_relu) return leaky_relu(z, T(kLeakyReluAlpha));
    return opts_.resample == Resample::down ? gdn(z, fp.norm) : igdn(z, fp.norm);
  }

  /// Canonical parameter order: shared gates (if any), then per branch
  /// forward gates, backward gates, SE, fusion convolution, normalization.
  template <class F>
  void for_each(F&& f) {
    if (opts_.shared_gates) {
      for (auto& g : fwd_) g.for_each(f);
      for (auto& g : bwd_) g.for_each(f);
    }
    for (std::size_t l = 0; l < branches_; ++l) {
      if (!opts_.shared_gates) {
        if (!fwd_.empty()) fwd_[l].for_each(f);
        if (!bwd_.empty()) bwd_[l].for_each(f);
      }
      fusion_[l].for_each(f, opts_);
    }
  }

 private:
  void check_inputs(std::span<const Var<T>> inputs) const {
    if (inputs.size() != branches_)
      throw std::invalid_argument("GatedLayer: got " + std::to_string(inputs.size()) + " branch inputs, layer has " +
                                  std::to_string(branches_) + " branches");
    for (const auto& x : inputs) {
      require_same_shape(x.shape(), inputs[0].shape(), "GatedLayer branch inputs");
      if (x.shape().c != in_)
        throw ShapeError("GatedLayer: input " + to_string(x.shape()) + " expects " + std::to_string(in_) +
                         " channels");
    }
  }

  LayerOptions opts_;
  std::size_t branches_ = 0, in_ = 0, out_ = 0;
  std::vector<GateParams<T>> fwd_, bwd_;
  std::vector<FusionParams<T>> fusion_;
};

/// Encoder unit stack (BAGU): bidirectional sweeps with stride-2 input path.
template <class T>
std::vector<Var<T>> bagu_layer(std::span<const Var<T>> inputs, GatedLayer<T>& layer) {
  if (layer.options().resample != Resample::down) throw std::invalid_argument("bagu_layer: layer is not a downsampling layer");
  return layer.apply(inputs);
}

/// Decoder unit stack (IBAGU): bidirectional sweeps with pixel-shuffle input path.
template <class T>
std::vector<Var<T>> ibagu_layer(std::span<const Var<T>> inputs, GatedLayer<T>& layer) {
  if (layer.options().resample != Resample::up) throw std::invalid_argument("ibagu_layer: layer is not an upsampling layer");
  return layer.apply(inputs);
}

/// Single-sweep layer (ablation): only the `down` or `up` flow runs and the
/// lone hidden state feeds the fusion.
template <class T>
std::vector<Var<T>> unidirectional_layer(std::span<const Var<T>> inputs, GatedLayer<T>& layer) {
  if (layer.options().flow == Flow::bidirectional)
    throw std::invalid_argument("unidirectional_layer: layer is bidirectional");
  return layer.apply(inputs);
}

/// Layer whose gate weights are shared by all branches (ablation), i.e. a
/// conventional recurrent application over the branch axis.
template <class T>
std::vector<Var<T>> recurrent_shared_layer(std::span<const Var<T>> inputs, GatedLayer<T>& layer) {
  if (!layer.options().shared_gates) throw std::invalid_argument("recurrent_shared_layer: gates are not shared");
  return layer.apply(inputs);
}

}  // namespace bcd
