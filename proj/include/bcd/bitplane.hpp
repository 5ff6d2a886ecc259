#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bcd {

/// 8-bit RGB image stored planar: channel-major, then rows.
class RgbImage {
 public:
  static constexpr std::size_t channels = 3;

  RgbImage() = default;
  RgbImage(std::size_t height, std::size_t width, std::uint8_t fill = 0)
      : height_(height), width_(width), pixels_(channels * height * width, fill) {
    if (height == 0 || width == 0) throw std::invalid_argument("RgbImage: dimensions must be >= 1");
  }

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t pixel_count() const { return height_ * width_; }

  std::uint8_t& at(std::size_t c, std::size_t y, std::size_t x) {
    return pixels_[(c * height_ + y) * width_ + x];
  }
  std::uint8_t at(std::size_t c, std::size_t y, std::size_t x) const {
    return pixels_[(c * height_ + y) * width_ + x];
  }
  std::span<std::uint8_t> channel(std::size_t c) {
    return {pixels_.data() + c * pixel_count(), pixel_count()};
  }
  std::span<const std::uint8_t> channel(std::size_t c) const {
    return {pixels_.data() + c * pixel_count(), pixel_count()};
  }
  const std::vector<std::uint8_t>& pixels() const { return pixels_; }
  std::vector<std::uint8_t>& pixels() { return pixels_; }

  friend bool operator==(const RgbImage&, const RgbImage&) = default;

 private:
  std::size_t height_ = 0, width_ = 0;
  std::vector<std::uint8_t> pixels_;
};

/// The binary planes of an image. Level 1 is the most significant bit.
class BitPlaneStack {
 public:
  BitPlaneStack(std::size_t height, std::size_t width, std::size_t depth = 8)
      : height_(height), width_(width), depth_(depth),
        bits_(RgbImage::channels * depth * height * width, 0) {
    if (depth == 0 || depth > 8) throw std::invalid_argument("BitPlaneStack: depth must be in [1, 8]");
  }

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t depth() const { return depth_; }

  /// Plane for `channel` at significance `level` in [1, depth].
  std::span<std::uint8_t> plane(std::size_t channel, std::size_t level) {
    return {bits_.data() + offset(channel, level), height_ * width_};
  }
  std::span<const std::uint8_t> plane(std::size_t channel, std::size_t level) const {
    return {bits_.data() + offset(channel, level), height_ * width_};
  }

 private:
  std::size_t offset(std::size_t channel, std::size_t level) const {
    if (channel >= RgbImage::channels || level < 1 || level > depth_)
      throw std::out_of_range("BitPlaneStack: channel " + std::to_string(channel) + ", level " +
                              std::to_string(level) + " out of range");
    return (channel * depth_ + (level - 1)) * height_ * width_;
  }

  std::size_t height_, width_, depth_;
  std::vector<std::uint8_t> bits_;
};

/// Splits every channel into `depth` planes: plane l holds floor(v / 2^(depth-l)) mod 2.
inline BitPlaneStack decompose(const RgbImage& image, std::size_t depth = 8) {
  BitPlaneStack stack(image.height(), image.width(), depth);
  for (std::size_t c = 0; c < RgbImage::channels; ++c) {
    auto src = image.channel(c);
    for (std::size_t l = 1; l <= depth; ++l) {
      auto dst = stack.plane(c, l);
      const unsigned shift = unsigned(depth - l);
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] = std::uint8_t((src[i] >> shift) & 1u);
    }
  }
  return stack;
}

/// Inverse of decompose: v = sum_l 2^(depth-l) * plane_l. Throws on a non-binary plane value.
inline RgbImage reconstruct(const BitPlaneStack& stack) {
  RgbImage image(stack.height(), stack.width());
  const std::size_t depth = stack.depth();
  for (std::size_t c = 0; c < RgbImage::channels; ++c) {
    auto dst = image.channel(c);
    for (std::size_t l = 1; l <= depth; ++l) {
      auto src = stack.plane(c, l);
      const unsigned weight = 1u << (depth - l);
      for (std::size_t i = 0; i < src.size(); ++i) {
        if (src[i] > 1)
          throw std::invalid_argument("reconstruct: plane (channel " + std::to_string(c) + ", level " +
                                      std::to_string(l) + ") holds non-binary value " +
                                      std::to_string(int(src[i])));
        dst[i] = std::uint8_t(dst[i] + weight * src[i]);
      }
    }
  }
  return image;
}

namespace detail {
inline double entropy_term(double p) { return p > 0.0 ? -p * std::log2(p) : 0.0; }
}  // namespace detail

/// Order-0 empirical entropy of a binary plane, in bits per symbol.
inline double plane_entropy(std::span<const std::uint8_t> plane) {
  if (plane.empty()) return 0.0;
  std::size_t ones = 0;
  for (auto v : plane) {
    if (v > 1) throw std::invalid_argument("plane_entropy: non-binary value");
    ones += v;
  }
  const double p = double(ones) / double(plane.size());
  return detail::entropy_term(p) + detail::entropy_term(1.0 - p);
}

/// Order-0 entropy of one channel's 256-bin histogram, in bits per symbol.
inline double channel_entropy(std::span<const std::uint8_t> values) {
  std::array<std::size_t, 256> hist{};
  for (auto v : values) ++hist[v];
  double h = 0;
  for (auto count : hist) h += detail::entropy_term(double(count) / double(values.size()));
  return h;
}

/// Per-channel histogram entropy averaged over R, G, B.
inline double image_entropy(const RgbImage& image) {
  double h = 0;
  for (std::size_t c = 0; c < RgbImage::channels; ++c) h += channel_entropy(image.channel(c));
  return h / double(RgbImage::channels);
}

}  // namespace bcd
