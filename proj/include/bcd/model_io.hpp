#pragma once

// Model checkpoint ("BCDM", version 1), little-endian:
//
//   magic "BCDM" | version u8
//   config: N u8 | B u8 | width count u8 | widths u16 each | first_kernel u8 |
//           gate_kernel u8 | fuse_kernel u8 | se_ratio u8 | encoder_flow u8 |
//           decoder_flow u8 | shared_gates u8 | input u8 | se u8 | norm u8
//   tensor count u32 | float count u64
//   float32 values of every parameter in CodecModel::for_each order
//
// Enum bytes: flow 0 bi, 1 down, 2 up; input 0 bitplanes, 1 conv_slice;
// norm 0 gdn, 1 leaky_relu.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bcd/codec.hpp"

namespace bcd {

class ModelFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kModelMagic[4] = {'B', 'C', 'D', 'M'};
inline constexpr std::uint8_t kModelVersion = 1;

namespace detail {
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> b) : bytes_(b) {}

  std::uint64_t le(int n) {
    need(std::size_t(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= std::uint64_t(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::uint8_t u8() { return std::uint8_t(le(1)); }
  float f32() { return std::bit_cast<float>(std::uint32_t(le(4))); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw ModelFormatError("model file truncated");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

inline void put_u(std::vector<std::uint8_t>& out, std::uint64_t v, int n) {
  for (int i = 0; i < n; ++i) out.push_back(std::uint8_t(v >> (8 * i)));
}

template <class E>
E enum_from(std::uint8_t v, std::uint8_t count, const char* what) {
  if (v >= count) throw ModelFormatError(std::string("model file: bad ") + what + " byte " + std::to_string(v));
  return E(v);
}
}  // namespace detail

inline void write_config_block(std::vector<std::uint8_t>& out, const CodecConfig& c) {
  for (std::size_t v : {c.branches, c.binary_channels, c.widths.size()}) detail::put_u(out, v, 1);
  for (std::size_t w : c.widths) {
    if (w > 0xFFFF) throw ModelFormatError("model file: width " + std::to_string(w) + " exceeds 65535");
    detail::put_u(out, w, 2);
  }
  for (std::size_t v : {c.first_kernel, c.gate_kernel, c.fuse_kernel, c.se_ratio}) detail::put_u(out, v, 1);
  for (int v : {int(c.encoder_flow), int(c.decoder_flow), int(c.shared_gates), int(c.input), int(c.se), int(c.norm)})
    detail::put_u(out, std::uint64_t(v), 1);
}

inline CodecConfig read_config_block(detail::ByteReader& r) {
  CodecConfig c;
  c.branches = r.u8();
  c.binary_channels = r.u8();
  c.widths.assign(r.u8(), 0);
  for (auto& w : c.widths) w = r.le(2);
  c.first_kernel = r.u8();
  c.gate_kernel = r.u8();
  c.fuse_kernel = r.u8();
  c.se_ratio = r.u8();
  c.encoder_flow = detail::enum_from<Flow>(r.u8(), 3, "encoder_flow");
  c.decoder_flow = detail::enum_from<Flow>(r.u8(), 3, "decoder_flow");
  c.shared_gates = detail::enum_from<std::uint8_t>(r.u8(), 2, "shared_gates") != 0;
  c.input = detail::enum_from<InputMode>(r.u8(), 2, "input");
  c.se = detail::enum_from<std::uint8_t>(r.u8(), 2, "se") != 0;
  c.norm = detail::enum_from<Norm>(r.u8(), 2, "norm");
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ModelFormatError(std::string("model file: ") + e.what());
  }
  return c;
}

template <class T>
std::vector<std::uint8_t> serialize_model(CodecModel<T>& model) {
  std::vector<std::uint8_t> out(std::begin(kModelMagic), std::end(kModelMagic));
  out.push_back(kModelVersion);
  write_config_block(out, model.config());
  std::size_t tensors = 0, floats = 0;
  model.for_each([&](Parameter<T>& p) {
    ++tensors;
    floats += p.value.size();
  });
  detail::put_u(out, tensors, 4);
  detail::put_u(out, floats, 8);
  model.for_each([&](Parameter<T>& p) {
    for (T v : p.value.values()) detail::put_u(out, std::bit_cast<std::uint32_t>(float(v)), 4);
  });
  return out;
}

/// Rebuilds a model from its checkpoint; the config comes from the file.
template <class T = float>
CodecModel<T> deserialize_model(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  char magic[4];
  for (char& ch : magic) ch = char(r.u8());
  if (std::memcmp(magic, kModelMagic, 4) != 0) throw ModelFormatError("model file: bad magic");
  const std::uint8_t version = r.u8();
  if (version != kModelVersion) throw ModelFormatError("model file: unsupported version " + std::to_string(version));
  const CodecConfig config = read_config_block(r);
  CodecModel<T> model(config, 0);
  const std::size_t tensors = r.le(4), floats = r.le(8);
  std::size_t want_tensors = 0, want_floats = 0;
  model.for_each([&](Parameter<T>& p) {
    ++want_tensors;
    want_floats += p.value.size();
  });
  if (tensors != want_tensors || floats != want_floats)
    throw ModelFormatError("model file: holds " + std::to_string(tensors) + " tensors / " + std::to_string(floats) +
                           " floats, config needs " + std::to_string(want_tensors) + " / " +
                           std::to_string(want_floats));
  if (r.remaining() != 4 * floats)
    throw ModelFormatError("model file: " + std::to_string(r.remaining()) + " parameter bytes, expected " +
                           std::to_string(4 * floats));
  model.for_each([&](Parameter<T>& p) {
    for (T& v : p.value.values()) v = T(r.f32());
  });
  return model;
}

template <class T>
void save_model(CodecModel<T>& model, const std::string& path) {
  const std::vector<std::uint8_t> bytes = serialize_model(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

template <class T = float>
CodecModel<T> load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open model file " + path);
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return deserialize_model<T>(bytes);
}

}  // namespace bcd
