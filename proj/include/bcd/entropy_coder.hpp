#pragma once

// Context-adaptive binary arithmetic coder for branch codes.
//
// 32-bit low/high registers with pending-bit (underflow) counting. Each context
// keeps add-one smoothed counts of zeros and ones; both are halved once their
// sum exceeds 2^16 so every interval split stays at least 2^14 wide. Bits are
// packed MSB first and the final byte is zero padded.
//
// Stream end: the 16-bit check pattern at probability 1/2, then a two-bit
// flush. A decoder that finds a different pattern, or a byte count other than
// the one its own bit consumption implies, reports the stream as damaged.
//
// Code tensors are scanned channel by channel in raster order. A symbol's
// context is (channel mod 4, left neighbour bit, above neighbour bit), with
// out-of-plane neighbours read as 0 and +1 coded as bit 1.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bcd/tensor.hpp"

namespace bcd {

class EntropyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace ac {
inline constexpr std::uint32_t kHalf = 0x80000000u;
inline constexpr std::uint32_t kQuarter = 0x40000000u;
inline constexpr std::uint32_t kThreeQuarters = 0xC0000000u;
inline constexpr std::uint32_t kMaxTotal = 1u << 16;
inline constexpr std::size_t kSpatialContexts = 16;
/// Extra context for the per-segment "branch active" flag.
inline constexpr std::size_t kFlagContext = 16;
inline constexpr std::size_t kContexts = 17;
/// Coded at probability 1/2 after the last symbol; lets the decoder reject
/// truncated or damaged streams.
inline constexpr std::uint32_t kCheckPattern = 0xA5C3;
}  // namespace ac

/// Adaptive zero/one counts per context.
class ContextModel {
 public:
  ContextModel() { counts_.fill({1, 1}); }

  std::uint32_t zeros(std::size_t ctx) const { return counts_[ctx][0]; }
  std::uint32_t total(std::size_t ctx) const { return counts_[ctx][0] + counts_[ctx][1]; }

  void update(std::size_t ctx, int bit) {
    auto& c = counts_[ctx];
    ++c[bit];
    if (c[0] + c[1] > ac::kMaxTotal) {
      c[0] = (c[0] + 1) / 2;
      c[1] = (c[1] + 1) / 2;
    }
  }

 private:
  std::array<std::array<std::uint32_t, 2>, ac::kContexts> counts_;
};

class ArithmeticEncoder {
 public:
  void encode(int bit, std::size_t ctx) {
    code(bit, model_.zeros(ctx), model_.total(ctx));
    model_.update(ctx, bit);
  }

  /// Appends the check pattern, then two bits that select a quarter inside
  /// the final interval.
  std::vector<std::uint8_t> finish() {
    for (int i = 15; i >= 0; --i) code((ac::kCheckPattern >> i) & 1, 1, 2);
    ++pending_;
    emit(low_ < ac::kQuarter ? 0 : 1);
    return std::move(bytes_);
  }

 private:
  void code(int bit, std::uint32_t zeros, std::uint32_t total) {
    const std::uint64_t range = std::uint64_t(high_) - low_ + 1;
    const std::uint32_t split = std::uint32_t(low_ + range * zeros / total - 1);
    if (bit) low_ = split + 1;
    else high_ = split;
    for (;;) {
      if (high_ < ac::kHalf) {
        emit(0);
      } else if (low_ >= ac::kHalf) {
        emit(1);
        low_ -= ac::kHalf;
        high_ -= ac::kHalf;
      } else if (low_ >= ac::kQuarter && high_ < ac::kThreeQuarters) {
        ++pending_;
        low_ -= ac::kQuarter;
        high_ -= ac::kQuarter;
      } else {
        break;
      }
      low_ <<= 1;
      high_ = (high_ << 1) | 1u;
    }
  }
  void put(int bit) {
    if (nbits_ % 8 == 0) bytes_.push_back(0);
    if (bit) bytes_.back() |= std::uint8_t(0x80u >> (nbits_ % 8));
    ++nbits_;
  }
  void emit(int bit) {
    put(bit);
    for (; pending_ > 0; --pending_) put(!bit);
  }

  std::uint32_t low_ = 0, high_ = 0xFFFFFFFFu;
  std::uint64_t pending_ = 0, nbits_ = 0;
  std::vector<std::uint8_t> bytes_;
  ContextModel model_;
};

class ArithmeticDecoder {
 public:
  explicit ArithmeticDecoder(std::span<const std::uint8_t> bytes) : bytes_(bytes) {
    for (int i = 0; i < 32; ++i) value_ = (value_ << 1) | next_bit();
  }

  int decode(std::size_t ctx) {
    const int bit = code(model_.zeros(ctx), model_.total(ctx));
    model_.update(ctx, bit);
    return bit;
  }

  /// Reads the check pattern and verifies that the stream has exactly the
  /// length the encoder would have produced; throws otherwise.
  void check_complete() {
    std::uint32_t tail = 0;
    for (int i = 0; i < 16; ++i) tail = (tail << 1) | std::uint32_t(code(1, 2));
    if (tail != ac::kCheckPattern) throw EntropyError("entropy stream corrupt or truncated: check pattern mismatch");
    const std::uint64_t expected = (consumed_ - 32 + 2 + 7) / 8;
    if (expected != bytes_.size())
      throw EntropyError("entropy stream corrupt or truncated: " + std::to_string(bytes_.size()) +
                         " bytes, coded symbols need " + std::to_string(expected));
  }

 private:
  int code(std::uint32_t zeros, std::uint32_t total) {
    const std::uint64_t range = std::uint64_t(high_) - low_ + 1;
    const std::uint32_t split = std::uint32_t(low_ + range * zeros / total - 1);
    const int bit = value_ > split ? 1 : 0;
    if (bit) low_ = split + 1;
    else high_ = split;
    for (;;) {
      if (high_ < ac::kHalf) {
      } else if (low_ >= ac::kHalf) {
        value_ -= ac::kHalf;
        low_ -= ac::kHalf;
        high_ -= ac::kHalf;
      } else if (low_ >= ac::kQuarter && high_ < ac::kThreeQuarters) {
        value_ -= ac::kQuarter;
        low_ -= ac::kQuarter;
        high_ -= ac::kQuarter;
      } else {
        break;
      }
      low_ <<= 1;
      high_ = (high_ << 1) | 1u;
      value_ = (value_ << 1) | next_bit();
    }
    return bit;
  }
  std::uint32_t next_bit() {
    const std::uint64_t pos = consumed_++;
    if (pos >= 8 * bytes_.size()) return 0;
    return (bytes_[pos / 8] >> (7 - pos % 8)) & 1u;
  }

  std::span<const std::uint8_t> bytes_;
  std::uint32_t low_ = 0, high_ = 0xFFFFFFFFu, value_ = 0;
  std::uint64_t consumed_ = 0;
  ContextModel model_;
};

namespace detail {
inline std::size_t code_context(std::size_t channel, int left, int above) {
  return (channel % 4) * 4 + std::size_t(left) * 2 + std::size_t(above);
}

inline void encode_symbols(ArithmeticEncoder& enc, const Tensor<float>& code) {
  const Shape s = code.shape();
  const std::size_t planes = s.n * s.c;
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const std::size_t channel = pl % s.c;
    const float* p = code.data() + pl * s.plane();
    for (std::size_t y = 0; y < s.h; ++y)
      for (std::size_t x = 0; x < s.w; ++x) {
        const float v = p[y * s.w + x];
        if (v != 1.0f && v != -1.0f)
          throw EntropyError("entropy_encode: non-binary code value " + std::to_string(v));
        const int left = x > 0 && p[y * s.w + x - 1] > 0;
        const int above = y > 0 && p[(y - 1) * s.w + x] > 0;
        enc.encode(v > 0, code_context(channel, left, above));
      }
  }
}

inline Tensor<float> decode_symbols(ArithmeticDecoder& dec, Shape shape) {
  Tensor<float> out(shape);
  const std::size_t planes = shape.n * shape.c;
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const std::size_t channel = pl % shape.c;
    float* p = out.data() + pl * shape.plane();
    for (std::size_t y = 0; y < shape.h; ++y)
      for (std::size_t x = 0; x < shape.w; ++x) {
        const int left = x > 0 && p[y * shape.w + x - 1] > 0;
        const int above = y > 0 && p[(y - 1) * shape.w + x] > 0;
        p[y * shape.w + x] = dec.decode(code_context(channel, left, above)) ? 1.0f : -1.0f;
      }
  }
  return out;
}
}  // namespace detail

/// Losslessly codes a tensor of -1/+1 values.
inline std::vector<std::uint8_t> entropy_encode(const Tensor<float>& code) {
  ArithmeticEncoder enc;
  detail::encode_symbols(enc, code);
  return enc.finish();
}

/// Inverse of entropy_encode for a known shape; throws EntropyError on a short stream.
inline Tensor<float> entropy_decode(std::span<const std::uint8_t> bytes, Shape shape) {
  ArithmeticDecoder dec(bytes);
  Tensor<float> out = detail::decode_symbols(dec, shape);
  dec.check_complete();
  return out;
}

/// A branch segment: one flag symbol (active or switched off), then the codes
/// when active. A switched-off branch costs a single byte.
inline std::vector<std::uint8_t> encode_segment(const Tensor<float>* code) {
  ArithmeticEncoder enc;
  enc.encode(code != nullptr, ac::kFlagContext);
  if (code) detail::encode_symbols(enc, *code);
  return enc.finish();
}

/// Returns the codes, or nullopt for a switched-off branch.
inline std::optional<Tensor<float>> decode_segment(std::span<const std::uint8_t> bytes, Shape shape) {
  if (bytes.empty()) throw EntropyError("decode_segment: empty segment");
  ArithmeticDecoder dec(bytes);
  std::optional<Tensor<float>> out;
  if (dec.decode(ac::kFlagContext)) out = detail::decode_symbols(dec, shape);
  dec.check_complete();
  return out;
}

}  // namespace bcd
