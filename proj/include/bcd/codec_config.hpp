#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "bcd/gated_units.hpp"
#include "bcd/ops.hpp"

namespace bcd {

enum class InputMode { bitplanes, conv_slice };

/// Architecture of an encoder/decoder pair. The defaults are the full model;
/// the flags select the ablation variants.
struct CodecConfig {
  std::size_t branches = 8;
  /// widths[0] is the first convolution's output; widths[1..] the gated layers'.
  /// The spatial factor is 2^widths.size().
  std::vector<std::size_t> widths{32, 32, 32, 32};
  std::size_t binary_channels = 8;
  std::size_t first_kernel = 3;
  std::size_t gate_kernel = 3;
  std::size_t fuse_kernel = 3;
  std::size_t se_ratio = 4;
  Flow encoder_flow = Flow::bidirectional;
  Flow decoder_flow = Flow::bidirectional;
  bool shared_gates = false;
  InputMode input = InputMode::bitplanes;
  bool se = true;
  Norm norm = Norm::gdn;

  std::size_t gated_layers() const { return widths.size() - 1; }
  std::size_t spatial_factor() const { return std::size_t(1) << widths.size(); }

  LayerOptions layer_options(Resample r) const {
    LayerOptions o;
    o.resample = r;
    o.flow = r == Resample::down ? encoder_flow : decoder_flow;
    o.shared_gates = shared_gates;
    o.se = se;
    o.norm = norm;
    o.gate_kernel = gate_kernel;
    o.fuse_kernel = fuse_kernel;
    o.se_ratio = se_ratio;
    return o;
  }

  /// Throws std::invalid_argument describing the first violated constraint.
  void validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("CodecConfig: " + m); };
    if (branches < 1 || branches > 8) fail("branches must be in [1, 8]");
    if (widths.size() < 2 || widths.size() > 7) fail("widths needs 2..7 entries");
    for (auto w : widths)
      if (w == 0) fail("widths must be positive");
    if (widths[0] % 4 != 0) fail("widths[0] must be divisible by 4 (final pixel shuffle)");
    if (binary_channels == 0) fail("binary_channels must be positive");
    for (auto k : {first_kernel, gate_kernel, fuse_kernel})
      if (k % 2 == 0) fail("kernel sizes must be odd");
    if (se) {
      if (se_ratio == 0) fail("se_ratio must be positive");
      // Encoder layers output widths[1..L], decoder layers widths[0..L-1].
      const std::size_t enc_mult = encoder_flow == Flow::bidirectional ? 2 : 1;
      const std::size_t dec_mult = decoder_flow == Flow::bidirectional ? 2 : 1;
      for (std::size_t i = 0; i < widths.size(); ++i) {
        const bool bad_enc = i >= 1 && (enc_mult * widths[i]) % se_ratio != 0;
        const bool bad_dec = i + 1 < widths.size() && (dec_mult * widths[i]) % se_ratio != 0;
        if (bad_enc || bad_dec) fail("se_ratio " + std::to_string(se_ratio) + " must divide every fused channel count");
      }
    }
  }
};

inline std::string to_string(Flow f) {
  switch (f) {
    case Flow::bidirectional: return "bi";
    case Flow::down: return "down";
    case Flow::up: return "up";
  }
  return "?";
}

inline Flow parse_flow(const std::string& s) {
  if (s == "bi" || s == "bidirectional") return Flow::bidirectional;
  if (s == "down") return Flow::down;
  if (s == "up") return Flow::up;
  throw std::invalid_argument("unknown flow '" + s + "' (expected bi, down or up)");
}

inline std::string to_string(InputMode m) { return m == InputMode::bitplanes ? "bitplanes" : "conv_slice"; }

inline InputMode parse_input_mode(const std::string& s) {
  if (s == "bitplanes") return InputMode::bitplanes;
  if (s == "conv_slice") return InputMode::conv_slice;
  throw std::invalid_argument("unknown input mode '" + s + "' (expected bitplanes or conv_slice)");
}

inline std::string to_string(Norm n) { return n == Norm::gdn ? "gdn" : "leaky_relu"; }

inline Norm parse_norm(const std::string& s) {
  if (s == "gdn") return Norm::gdn;
  if (s == "leaky_relu") return Norm::leaky_relu;
  throw std::invalid_argument("unknown normalization '" + s + "' (expected gdn or leaky_relu)");
}

/// Raw bits per pixel of one active branch before entropy coding: B / s^2.
inline double basic_bitrate(std::size_t binary_channels, std::size_t spatial_factor) {
  return double(binary_channels) / double(spatial_factor * spatial_factor);
}

inline double basic_bitrate(const CodecConfig& c) { return basic_bitrate(c.binary_channels, c.spatial_factor()); }

}  // namespace bcd
