#pragma once

// Progressive ".bcd" container.
//
//   offset  size  field
//   0       4     magic "BCD1"
//   4       1     version (1)
//   5       2     original height
//   7       2     original width
//   9       1     pad_h (rows reflected onto the bottom before encoding)
//   10      1     pad_w (columns reflected onto the right)
//   11      1     N, branch count
//   12      1     B, binary channels per branch
//   13      1     s, spatial factor
//   14      1     reserved (0)
//   15      4N    payload length of each segment
//   15+4N         segments 1..N, back to back
//
// Integers are little-endian. A segment length of 0 marks a branch removed by
// truncation; a switched-off branch still has a (three-byte) segment.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bcd/codec.hpp"
#include "bcd/entropy_coder.hpp"

namespace bcd {

class ContainerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Decoding asked for a level whose segments were truncated away.
class LevelUnavailable : public ContainerError {
 public:
  using ContainerError::ContainerError;
};

inline constexpr char kContainerMagic[4] = {'B', 'C', 'D', '1'};
inline constexpr std::uint8_t kContainerVersion = 1;

inline constexpr std::size_t container_header_size(std::size_t branches) { return 15 + 4 * branches; }

struct ContainerInfo {
  std::size_t height = 0, width = 0;  ///< original image size
  std::size_t pad_h = 0, pad_w = 0;
  std::size_t branches = 0;
  std::size_t binary_channels = 0;
  std::size_t spatial_factor = 0;

  Shape code_shape() const {
    return {1, binary_channels, (height + pad_h) / spatial_factor, (width + pad_w) / spatial_factor};
  }
  bool operator==(const ContainerInfo&) const = default;
};

struct Container {
  ContainerInfo info;
  std::vector<std::vector<std::uint8_t>> segments;  ///< empty = truncated away

  /// Levels decodable from this file: the longest run of present segments.
  std::size_t available_levels() const {
    std::size_t l = 0;
    while (l < segments.size() && !segments[l].empty()) ++l;
    return l;
  }
};

namespace detail {
inline void put_le(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(std::uint8_t(v >> (8 * i)));
}

inline std::uint64_t get_le(std::span<const std::uint8_t> in, std::size_t at, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= std::uint64_t(in[at + std::size_t(i)]) << (8 * i);
  return v;
}

inline void check_info(const ContainerInfo& info) {
  auto fail = [](const std::string& m) { throw ContainerError("container: " + m); };
  if (info.height == 0 || info.width == 0 || info.height > 0xFFFF || info.width > 0xFFFF)
    fail("image " + std::to_string(info.height) + "x" + std::to_string(info.width) + " outside 1..65535");
  if (info.branches == 0 || info.branches > 0xFF || info.binary_channels == 0 || info.binary_channels > 0xFF ||
      info.spatial_factor == 0 || info.spatial_factor > 0xFF)
    fail("N, B and s must each be in 1..255");
  if (info.pad_h >= info.spatial_factor || info.pad_w >= info.spatial_factor) fail("padding must be below s");
  if ((info.height + info.pad_h) % info.spatial_factor != 0 || (info.width + info.pad_w) % info.spatial_factor != 0)
    fail("padded size not divisible by s");
}
}  // namespace detail

inline std::vector<std::uint8_t> serialize_container(const Container& c) {
  detail::check_info(c.info);
  if (c.segments.size() != c.info.branches)
    throw ContainerError("container: " + std::to_string(c.segments.size()) + " segments for N = " +
                         std::to_string(c.info.branches));
  std::vector<std::uint8_t> out(std::begin(kContainerMagic), std::end(kContainerMagic));
  out.push_back(kContainerVersion);
  detail::put_le(out, c.info.height, 2);
  detail::put_le(out, c.info.width, 2);
  for (std::size_t v : {c.info.pad_h, c.info.pad_w, c.info.branches, c.info.binary_channels, c.info.spatial_factor})
    out.push_back(std::uint8_t(v));
  out.push_back(0);
  for (const auto& s : c.segments) detail::put_le(out, s.size(), 4);
  for (const auto& s : c.segments) out.insert(out.end(), s.begin(), s.end());
  return out;
}

inline Container parse_container(std::span<const std::uint8_t> bytes) {
  auto fail = [](const std::string& m) { throw ContainerError("container: " + m); };
  if (bytes.size() < container_header_size(0)) fail("file too short for a header");
  if (!std::equal(std::begin(kContainerMagic), std::end(kContainerMagic), bytes.begin())) fail("bad magic");
  if (bytes[4] != kContainerVersion) fail("unsupported version " + std::to_string(bytes[4]));
  Container c;
  c.info.height = detail::get_le(bytes, 5, 2);
  c.info.width = detail::get_le(bytes, 7, 2);
  c.info.pad_h = bytes[9];
  c.info.pad_w = bytes[10];
  c.info.branches = bytes[11];
  c.info.binary_channels = bytes[12];
  c.info.spatial_factor = bytes[13];
  detail::check_info(c.info);
  const std::size_t header = container_header_size(c.info.branches);
  if (bytes.size() < header) fail("file too short for " + std::to_string(c.info.branches) + " segment lengths");
  std::size_t at = header;
  for (std::size_t l = 0; l < c.info.branches; ++l) {
    const std::size_t len = detail::get_le(bytes, 15 + 4 * l, 4);
    if (len > bytes.size() - at)
      fail("segment " + std::to_string(l + 1) + " declares " + std::to_string(len) + " bytes, " +
           std::to_string(bytes.size() - at) + " remain");
    c.segments.emplace_back(bytes.begin() + std::ptrdiff_t(at), bytes.begin() + std::ptrdiff_t(at + len));
    at += len;
  }
  if (at != bytes.size()) fail(std::to_string(bytes.size() - at) + " trailing bytes after the last segment");
  return c;
}

/// Entropy codes every branch into its own segment.
inline std::vector<std::uint8_t> write_container(const BranchCodes& codes, const ContainerInfo& info) {
  detail::check_info(info);
  if (codes.branches() != info.branches || codes.active.size() != info.branches)
    throw ContainerError("container: codes carry " + std::to_string(codes.branches()) + " branches, header says " +
                         std::to_string(info.branches));
  Container c;
  c.info = info;
  for (std::size_t l = 0; l < info.branches; ++l) {
    if (codes.codes[l].shape() != info.code_shape())
      throw ContainerError("container: branch " + std::to_string(l + 1) + " codes " + to_string(codes.codes[l].shape()) +
                           ", expected " + to_string(info.code_shape()));
    c.segments.push_back(encode_segment(codes.active[l] ? &codes.codes[l] : nullptr));
  }
  return serialize_container(c);
}

/// Codes for decoding at `level`: branches 1..level from their segments, the
/// rest zero-filled and inactive. Throws LevelUnavailable when a needed segment
/// was truncated away.
inline BranchCodes read_codes(const Container& c, std::size_t level) {
  if (level < 1 || level > c.info.branches)
    throw ContainerError("level " + std::to_string(level) + " outside 1.." + std::to_string(c.info.branches));
  if (level > c.available_levels())
    throw LevelUnavailable("level unavailable: file holds " + std::to_string(c.available_levels()) +
                           " levels, level " + std::to_string(level) + " requested");
  BranchCodes out;
  for (std::size_t l = 0; l < c.info.branches; ++l) {
    std::optional<Tensor<float>> code;
    if (l < level) {
      try {
        code = decode_segment(c.segments[l], c.info.code_shape());
      } catch (const EntropyError& e) {
        throw ContainerError("segment " + std::to_string(l + 1) + ": " + e.what());
      }
    }
    out.active.push_back(code.has_value());
    out.codes.push_back(code ? std::move(*code) : Tensor<float>(c.info.code_shape()));
  }
  return out;
}

/// Keeps segments 1..level; later lengths become 0.
inline std::vector<std::uint8_t> truncate_to_level(std::span<const std::uint8_t> bytes, std::size_t level) {
  Container c = parse_container(bytes);
  if (level < 1 || level > c.info.branches)
    throw ContainerError("truncate: level " + std::to_string(level) + " outside 1.." + std::to_string(c.info.branches));
  for (std::size_t l = level; l < c.info.branches; ++l) c.segments[l].clear();
  return serialize_container(c);
}

/// Coded bits per original pixel for levels 1..level (all present segments by
/// default); the header is counted only on request.
inline double measured_bpp(const Container& c, std::optional<std::size_t> level = std::nullopt,
                           bool include_header = false) {
  const std::size_t upto = level.value_or(c.info.branches);
  if (upto > c.info.branches) throw ContainerError("measured_bpp: level beyond N");
  std::size_t bytes = include_header ? container_header_size(c.info.branches) : 0;
  for (std::size_t l = 0; l < upto; ++l) bytes += c.segments[l].size();
  return 8.0 * double(bytes) / double(c.info.height * c.info.width);
}

inline double measured_bpp(std::span<const std::uint8_t> bytes, bool include_header = false) {
  return measured_bpp(parse_container(bytes), std::nullopt, include_header);
}

/// Header fields for an image of the given size under `config`.
inline ContainerInfo container_info(const CodecConfig& config, std::size_t height, std::size_t width) {
  const std::size_t s = config.spatial_factor();
  ContainerInfo info{height, width, (s - height % s) % s, (s - width % s) % s, config.branches,
                     config.binary_channels, s};
  detail::check_info(info);
  return info;
}

inline void check_compatible(const ContainerInfo& info, const CodecConfig& config) {
  if (info.branches != config.branches || info.binary_channels != config.binary_channels ||
      info.spatial_factor != config.spatial_factor())
    throw ContainerError("container (N=" + std::to_string(info.branches) + ", B=" +
                         std::to_string(info.binary_channels) + ", s=" + std::to_string(info.spatial_factor) +
                         ") does not match the model (N=" + std::to_string(config.branches) + ", B=" +
                         std::to_string(config.binary_channels) + ", s=" + std::to_string(config.spatial_factor()) +
                         ")");
}

/// Pads, encodes and entropy codes an image of any size.
template <class T>
std::vector<std::uint8_t> compress(const RgbImage& image, CodecModel<T>& model, const std::vector<bool>& switch_mask) {
  const ContainerInfo info = container_info(model.config(), image.height(), image.width());
  const RgbImage padded = reflect_pad(image, info.pad_h, info.pad_w);
  return write_container(encode(padded, model, switch_mask), info);
}

template <class T>
std::vector<std::uint8_t> compress(const RgbImage& image, CodecModel<T>& model) {
  return compress(image, model, std::vector<bool>(model.branches(), true));
}

/// Reconstruction at `level`, cropped back to the original size.
template <class T>
RgbImage decompress(const Container& c, CodecModel<T>& model, std::size_t level) {
  check_compatible(c.info, model.config());
  const LevelReconstruction r = decode(read_codes(c, level), model, level);
  return crop(r.pixels, c.info.height, c.info.width);
}

template <class T>
RgbImage decompress(std::span<const std::uint8_t> bytes, CodecModel<T>& model, std::size_t level) {
  return decompress(parse_container(bytes), model, level);
}

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace bcd
