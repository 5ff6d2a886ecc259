#pragma once

// Multi-branch encoder/decoder.
//
// Encoder, per branch l (l = 1..N): the l-th bit-planes of R, G, B (mapped to
// -1/+1) -> stride-2 convolution -> L gated layers (stride 2 each) -> 1x1
// convolution -> tanh -> binarizer. With the default four stages the codes sit
// at 1/16 resolution.
//
// Decoder, per branch: 1x1 entry convolution -> L upsampling gated layers ->
// pixel shuffle x2 -> 1x1 exit convolution giving a signed RGB layer Y(l). The
// level-l reconstruction is clamp(Y(1) + ... + Y(l)), decoded with every branch
// above l zero-filled, so it never depends on codes it was not given.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bcd/autodiff.hpp"
#include "bcd/bitplane.hpp"
#include "bcd/codec_config.hpp"
#include "bcd/gated_units.hpp"
#include "bcd/nn_layers.hpp"
#include "bcd/ops.hpp"

namespace bcd {

/// Per-branch binary codes, each (1, B, H/s, W/s) holding -1/+1, or all zeros
/// when the branch's switch is off.
struct BranchCodes {
  std::vector<Tensor<float>> codes;
  std::vector<bool> active;

  std::size_t branches() const { return codes.size(); }
};

/// Cumulative reconstruction at one quality level.
struct LevelReconstruction {
  std::size_t level = 0;
  Tensor<float> image;  ///< (1, 3, H, W), clamped to [0, 1]
  RgbImage pixels;      ///< round(255 * image)
};

/// Parses a switch mask such as "11000000"; an empty string means all on.
inline std::vector<bool> parse_switch_mask(const std::string& mask, std::size_t branches) {
  if (mask.empty()) return std::vector<bool>(branches, true);
  if (mask.size() != branches)
    throw std::invalid_argument("switch mask '" + mask + "' must have " + std::to_string(branches) + " digits");
  std::vector<bool> out;
  for (char ch : mask) {
    if (ch != '0' && ch != '1') throw std::invalid_argument("switch mask '" + mask + "' may only contain 0 and 1");
    out.push_back(ch == '1');
  }
  return out;
}

/// Stacks images into a (n, 3, H, W) tensor scaled to [0, 1].
template <class T>
Tensor<T> image_tensor(std::span<const RgbImage> images) {
  if (images.empty()) throw std::invalid_argument("image_tensor: no images");
  const std::size_t h = images[0].height(), w = images[0].width();
  Tensor<T> t(Shape{images.size(), 3, h, w});
  for (std::size_t b = 0; b < images.size(); ++b) {
    if (images[b].height() != h || images[b].width() != w)
      throw std::invalid_argument("image_tensor: images differ in size");
    const auto& px = images[b].pixels();
    for (std::size_t i = 0; i < px.size(); ++i) t[b * px.size() + i] = T(px[i]) / T(255);
  }
  return t;
}

/// (n, 3, H, W) tensor for significance level `level`: bit 1 -> +1, bit 0 -> -1.
template <class T>
Tensor<T> bitplane_tensor(std::span<const RgbImage> images, std::size_t level) {
  const std::size_t h = images[0].height(), w = images[0].width();
  Tensor<T> t(Shape{images.size(), 3, h, w});
  for (std::size_t b = 0; b < images.size(); ++b) {
    const BitPlaneStack stack = decompose(images[b]);
    for (std::size_t c = 0; c < 3; ++c) {
      auto plane = stack.plane(c, level);
      for (std::size_t i = 0; i < plane.size(); ++i) t[(b * 3 + c) * h * w + i] = plane[i] ? T(1) : T(-1);
    }
  }
  return t;
}

/// Replaces bit-plane decomposition (ablation): one convolution over the
/// [0, 1] image whose output channels are sliced into `branches` equal groups.
template <class T>
std::vector<Var<T>> conv_slice_frontend(const Var<T>& image, const Var<T>& kernel, const Var<T>& bias,
                                        std::size_t branches) {
  const std::size_t out = kernel.shape().n;
  if (branches == 0 || out % branches != 0)
    throw ShapeError("conv_slice_frontend: " + std::to_string(out) + " channels not divisible by " +
                     std::to_string(branches) + " branches");
  const Var<T> all = conv2d(image, kernel, bias, 1, kernel.shape().h / 2);
  const std::size_t k = out / branches;
  std::vector<Var<T>> parts;
  for (std::size_t l = 0; l < branches; ++l) parts.push_back(slice_channels(all, l * k, k));
  return parts;
}

template <class T = float>
class CodecModel {
 public:
  CodecModel() = default;

  CodecModel(const CodecConfig& config, std::uint64_t seed) : cfg_(config) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    const std::size_t n = cfg_.branches, layers = cfg_.gated_layers(), w0 = cfg_.widths[0];
    const std::size_t wl = cfg_.widths.back(), b = cfg_.binary_channels;
    if (cfg_.input == InputMode::conv_slice) {
      slice_w_ = conv_weight<T>("frontend.slice.w", 3 * n, 3, cfg_.first_kernel, rng);
      slice_b_ = bias_param<T>("frontend.slice.b", 3 * n);
    }
    for (std::size_t l = 0; l < n; ++l) {
      const std::string tag = ".branch" + std::to_string(l + 1);
      first_w_.push_back(conv_weight<T>("enc.first" + tag + ".w", w0, 3, cfg_.first_kernel, rng));
      first_b_.push_back(bias_param<T>("enc.first" + tag + ".b", w0));
    }
    for (std::size_t i = 0; i < layers; ++i)
      enc_.emplace_back("enc.layer" + std::to_string(i + 1), n, cfg_.widths[i], cfg_.widths[i + 1],
                        cfg_.layer_options(Resample::down), rng);
    for (std::size_t l = 0; l < n; ++l) {
      const std::string tag = ".branch" + std::to_string(l + 1);
      quant_w_.push_back(conv_weight<T>("quant" + tag + ".w", b, wl, 1, rng));
      quant_b_.push_back(bias_param<T>("quant" + tag + ".b", b));
    }
    for (std::size_t l = 0; l < n; ++l) {
      const std::string tag = ".branch" + std::to_string(l + 1);
      entry_w_.push_back(conv_weight<T>("dec.entry" + tag + ".w", wl, b, 1, rng));
      entry_b_.push_back(bias_param<T>("dec.entry" + tag + ".b", wl));
    }
    for (std::size_t i = 0; i < layers; ++i)
      dec_.emplace_back("dec.layer" + std::to_string(i + 1), n, cfg_.widths[layers - i],
                        cfg_.widths[layers - i - 1], cfg_.layer_options(Resample::up), rng);
    for (std::size_t l = 0; l < n; ++l) {
      const std::string tag = ".branch" + std::to_string(l + 1);
      exit_w_.push_back(conv_weight<T>("dec.exit" + tag + ".w", 3, w0 / 4, 1, rng));
      exit_b_.push_back(bias_param<T>("dec.exit" + tag + ".b", 3));
    }
  }

  const CodecConfig& config() const { return cfg_; }
  std::size_t branches() const { return cfg_.branches; }

  GatedLayer<T>& encoder_layer(std::size_t i) { return enc_.at(i); }
  GatedLayer<T>& decoder_layer(std::size_t i) { return dec_.at(i); }
  Parameter<T>& exit_weight(std::size_t branch) { return exit_w_.at(branch); }
  Parameter<T>& exit_bias(std::size_t branch) { return exit_b_.at(branch); }
  Parameter<T>& entry_weight(std::size_t branch) { return entry_w_.at(branch); }
  Parameter<T>& entry_bias(std::size_t branch) { return entry_b_.at(branch); }

  /// Visits every parameter in the canonical serialization order.
  template <class F>
  void for_each(F&& f) {
    if (cfg_.input == InputMode::conv_slice) {
      f(slice_w_);
      f(slice_b_);
    }
    for (std::size_t l = 0; l < cfg_.branches; ++l) {
      f(first_w_[l]);
      f(first_b_[l]);
    }
    for (auto& layer : enc_) layer.for_each(f);
    for (std::size_t l = 0; l < cfg_.branches; ++l) {
      f(quant_w_[l]);
      f(quant_b_[l]);
    }
    for (std::size_t l = 0; l < cfg_.branches; ++l) {
      f(entry_w_[l]);
      f(entry_b_[l]);
    }
    for (auto& layer : dec_) layer.for_each(f);
    for (std::size_t l = 0; l < cfg_.branches; ++l) {
      f(exit_w_[l]);
      f(exit_b_[l]);
    }
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for_each([&](Parameter<T>& p) { n += p.value.size(); });
    return n;
  }

  void zero_grad() {
    for_each([](Parameter<T>& p) { p.zero_grad(); });
  }

  /// Branch inputs for a batch of same-sized images.
  std::vector<Var<T>> branch_inputs(Tape<T>& t, std::span<const RgbImage> images) {
    std::vector<Var<T>> out;
    if (cfg_.input == InputMode::conv_slice)
      return conv_slice_frontend(t.constant(image_tensor<T>(images)), t.param(slice_w_), t.param(slice_b_),
                                 cfg_.branches);
    for (std::size_t l = 1; l <= cfg_.branches; ++l) out.push_back(t.constant(bitplane_tensor<T>(images, l)));
    return out;
  }

  struct Quantized {
    Var<T> z;     ///< tanh output in (-1, 1)
    Var<T> code;  ///< binarized, straight-through
  };

  /// z = tanh(1x1 conv(feature)); code = binarize(z).
  Quantized quantize(const Var<T>& feature, std::size_t branch, BinarizerMode mode, std::mt19937_64* rng) {
    Tape<T>& t = feature.tape();
    const Var<T> z = tanh(conv2d(feature, t.param(quant_w_.at(branch)), t.param(quant_b_.at(branch)), 1, 0));
    return {z, binarize(z, mode, rng)};
  }

  /// Encoder forward for every branch. Images must be divisible by the spatial factor.
  std::vector<Quantized> encode_graph(Tape<T>& t, std::span<const RgbImage> images, BinarizerMode mode,
                                      std::mt19937_64* rng) {
    check_divisible(images[0].height(), images[0].width());
    std::vector<Var<T>> feats = branch_inputs(t, images);
    for (std::size_t l = 0; l < cfg_.branches; ++l)
      feats[l] = conv2d(feats[l], t.param(first_w_[l]), t.param(first_b_[l]), 2, cfg_.first_kernel / 2);
    for (auto& layer : enc_) feats = layer.apply(std::span<const Var<T>>(feats));
    std::vector<Quantized> out;
    for (std::size_t l = 0; l < cfg_.branches; ++l) out.push_back(quantize(feats[l], l, mode, rng));
    return out;
  }

  /// Decoder forward at `level`: codes above `level` are replaced by zeros and
  /// the returned vector holds Y(1..level).
  std::vector<Var<T>> decode_graph(Tape<T>& t, std::span<const Var<T>> codes, std::size_t level) {
    if (codes.size() != cfg_.branches)
      throw std::invalid_argument("decode: expected " + std::to_string(cfg_.branches) + " branch codes, got " +
                                  std::to_string(codes.size()));
    if (level < 1 || level > cfg_.branches)
      throw std::out_of_range("decode: level " + std::to_string(level) + " outside [1, " +
                              std::to_string(cfg_.branches) + "]");
    std::vector<Var<T>> feats;
    for (std::size_t l = 0; l < cfg_.branches; ++l) {
      const Shape cs = codes[l].shape();
      if (cs.c != cfg_.binary_channels || cs != codes[0].shape())
        throw ShapeError("decode: branch code " + to_string(cs) + " inconsistent with B = " +
                         std::to_string(cfg_.binary_channels));
      const Var<T> in = l < level ? codes[l] : t.constant(Tensor<T>(cs));
      feats.push_back(conv2d(in, t.param(entry_w_[l]), t.param(entry_b_[l]), 1, 0));
    }
    for (auto& layer : dec_) feats = layer.apply(std::span<const Var<T>>(feats));
    std::vector<Var<T>> ys;
    for (std::size_t l = 0; l < level; ++l)
      ys.push_back(conv2d(pixel_shuffle(feats[l], 2), t.param(exit_w_[l]), t.param(exit_b_[l]), 1, 0));
    return ys;
  }

  void check_divisible(std::size_t h, std::size_t w) const {
    const std::size_t s = cfg_.spatial_factor();
    if (h % s != 0 || w % s != 0)
      throw std::invalid_argument("encode: " + std::to_string(h) + "x" + std::to_string(w) +
                                  " image is not divisible by " + std::to_string(s) + "; pad bottom by " +
                                  std::to_string((s - h % s) % s) + " and right by " +
                                  std::to_string((s - w % s) % s));
  }

 private:
  CodecConfig cfg_;
  Parameter<T> slice_w_, slice_b_;
  std::vector<Parameter<T>> first_w_, first_b_;
  std::vector<GatedLayer<T>> enc_;
  std::vector<Parameter<T>> quant_w_, quant_b_;
  std::vector<Parameter<T>> entry_w_, entry_b_;
  std::vector<GatedLayer<T>> dec_;
  std::vector<Parameter<T>> exit_w_, exit_b_;
};

/// Encodes with the deterministic binarizer. Off-switch branches are zero-filled.
template <class T>
BranchCodes encode(const RgbImage& image, CodecModel<T>& model, const std::vector<bool>& switch_mask) {
  if (switch_mask.size() != model.branches())
    throw std::invalid_argument("encode: switch mask has " + std::to_string(switch_mask.size()) +
                                " entries, model has " + std::to_string(model.branches()) + " branches");
  Tape<T> tape;
  tape.set_grad_enabled(false);
  const auto q = model.encode_graph(tape, std::span<const RgbImage>(&image, 1), BinarizerMode::deterministic, nullptr);
  BranchCodes out;
  for (std::size_t l = 0; l < q.size(); ++l) {
    const Tensor<T>& v = q[l].code.value();
    out.codes.push_back(switch_mask[l] ? v.template cast<float>() : Tensor<float>(v.shape()));
    out.active.push_back(switch_mask[l]);
  }
  return out;
}

template <class T>
BranchCodes encode(const RgbImage& image, CodecModel<T>& model) {
  return encode(image, model, std::vector<bool>(model.branches(), true));
}

/// clamp to [0, 1] and 8-bit quantization of an accumulated (1, 3, H, W) sum.
inline LevelReconstruction make_reconstruction(std::size_t level, const Tensor<float>& sum) {
  LevelReconstruction r;
  r.level = level;
  r.image = sum;
  for (auto& v : r.image.values()) v = std::clamp(v, 0.0f, 1.0f);
  const Shape s = sum.shape();
  r.pixels = RgbImage(s.h, s.w);
  for (std::size_t i = 0; i < r.pixels.pixels().size(); ++i)
    r.pixels.pixels()[i] = std::uint8_t(std::lround(255.0f * r.image[i]));
  return r;
}

/// Reconstruction at `level` from branches 1..level.
template <class T>
LevelReconstruction decode(const BranchCodes& codes, CodecModel<T>& model, std::size_t level) {
  if (codes.branches() != model.branches())
    throw std::invalid_argument("decode: codes carry " + std::to_string(codes.branches()) + " branches, model " +
                                std::to_string(model.branches()));
  Tape<T> tape;
  tape.set_grad_enabled(false);
  std::vector<Var<T>> in;
  for (const auto& c : codes.codes) in.push_back(tape.constant(c.template cast<T>()));
  const auto ys = model.decode_graph(tape, std::span<const Var<T>>(in), level);
  Tensor<float> sum(ys[0].shape());
  for (const auto& y : ys)
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += float(y.value()[i]);
  return make_reconstruction(level, sum);
}

/// Reconstructions at levels 1..max_level, one decoder pass each.
template <class T>
std::vector<LevelReconstruction> decode_levels(const BranchCodes& codes, CodecModel<T>& model, std::size_t max_level) {
  std::vector<LevelReconstruction> out;
  for (std::size_t l = 1; l <= max_level; ++l) out.push_back(decode(codes, model, l));
  return out;
}

inline std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  if (n == 1) return 0;
  const std::ptrdiff_t period = 2 * std::ptrdiff_t(n - 1);
  std::ptrdiff_t m = i % period;
  if (m < 0) m += period;
  return std::size_t(m < std::ptrdiff_t(n) ? m : period - m);
}

/// Pads bottom/right by mirror reflection (edge not repeated).
inline RgbImage reflect_pad(const RgbImage& img, std::size_t pad_h, std::size_t pad_w) {
  RgbImage out(img.height() + pad_h, img.width() + pad_w);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < out.height(); ++y)
      for (std::size_t x = 0; x < out.width(); ++x)
        out.at(c, y, x) = img.at(c, reflect_index(std::ptrdiff_t(y), img.height()),
                                 reflect_index(std::ptrdiff_t(x), img.width()));
  return out;
}

inline RgbImage crop(const RgbImage& img, std::size_t height, std::size_t width) {
  if (height > img.height() || width > img.width()) throw std::invalid_argument("crop: larger than source");
  RgbImage out(height, width);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) out.at(c, y, x) = img.at(c, y, x);
  return out;
}

/// Parameter counts grouped by component: "frontend", "enc.first", "enc.gates",
/// "enc.se", "enc.fuse", "enc.gdn", "quant", "dec.entry", "dec.gates", "dec.se",
/// "dec.fuse", "dec.igdn", "dec.exit".
template <class T>
std::map<std::string, std::size_t> parameter_census(CodecModel<T>& model) {
  std::map<std::string, std::size_t> out;
  model.for_each([&](Parameter<T>& p) {
    const std::string& n = p.name;
    const std::string side = n.rfind("enc", 0) == 0 ? "enc" : n.rfind("dec", 0) == 0 ? "dec" : "";
    std::string key;
    if (n.rfind("frontend", 0) == 0) key = "frontend";
    else if (n.rfind("quant", 0) == 0) key = "quant";
    else if (n.find(".first.") != std::string::npos) key = "enc.first";
    else if (n.find(".entry.") != std::string::npos) key = "dec.entry";
    else if (n.find(".exit.") != std::string::npos) key = "dec.exit";
    else if (n.find(".fwd.") != std::string::npos || n.find(".bwd.") != std::string::npos) key = side + ".gates";
    else if (n.find(".se.") != std::string::npos) key = side + ".se";
    else if (n.find(".fuse.") != std::string::npos) key = side + ".fuse";
    else if (n.find(".gdn.") != std::string::npos) key = side + ".gdn";
    else if (n.find(".igdn.") != std::string::npos) key = side + ".igdn";
    else key = "other";
    out[key] += p.value.size();
  });
  return out;
}

}  // namespace bcd
