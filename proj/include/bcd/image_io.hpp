#pragma once

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <stdexcept>
#include <string>
#include <vector>

#include "bcd/bitplane.hpp"

namespace bcd {

class ImageIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {
inline std::size_t read_ppm_field(std::istream& in, const std::string& what) {
  int ch = in.get();
  while (ch != EOF) {
    if (ch == '#') {
      while (ch != EOF && ch != '\n') ch = in.get();
    } else if (!std::isspace(ch)) {
      break;
    }
    ch = in.get();
  }
  std::string digits;
  while (ch != EOF && std::isdigit(ch)) {
    digits.push_back(char(ch));
    ch = in.get();
  }
  if (digits.empty() || digits.size() > 6) throw ImageIoError("ppm: malformed " + what);
  // `ch` is the single whitespace byte that terminates the field.
  return std::stoul(digits);
}
}  // namespace detail

/// Parses a binary PPM (P6, maxval 255).
inline RgbImage read_ppm(std::istream& in) {
  char magic[2] = {};
  if (!in.read(magic, 2) || magic[0] != 'P' || magic[1] != '6') throw ImageIoError("ppm: not a P6 file");
  const std::size_t w = detail::read_ppm_field(in, "width");
  const std::size_t h = detail::read_ppm_field(in, "height");
  const std::size_t maxval = detail::read_ppm_field(in, "maxval");
  if (w == 0 || h == 0) throw ImageIoError("ppm: zero dimension");
  if (maxval != 255) throw ImageIoError("ppm: only maxval 255 is supported, got " + std::to_string(maxval));
  std::vector<std::uint8_t> interleaved(3 * w * h);
  if (!in.read(reinterpret_cast<char*>(interleaved.data()), std::streamsize(interleaved.size())))
    throw ImageIoError("ppm: truncated pixel data");
  RgbImage img(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = interleaved[(y * w + x) * 3 + c];
  return img;
}

inline RgbImage read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageIoError("cannot open image " + path.string());
  try {
    return read_ppm(in);
  } catch (const ImageIoError& e) {
    throw ImageIoError(path.string() + ": " + e.what());
  }
}

inline void write_ppm(std::ostream& out, const RgbImage& img) {
  out << "P6\n" << img.width() << ' ' << img.height() << "\n255\n";
  std::vector<std::uint8_t> interleaved(3 * img.pixel_count());
  for (std::size_t y = 0; y < img.height(); ++y)
    for (std::size_t x = 0; x < img.width(); ++x)
      for (std::size_t c = 0; c < 3; ++c) interleaved[(y * img.width() + x) * 3 + c] = img.at(c, y, x);
  out.write(reinterpret_cast<const char*>(interleaved.data()), std::streamsize(interleaved.size()));
}

inline void write_ppm(const std::filesystem::path& path, const RgbImage& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ImageIoError("cannot write image " + path.string());
  write_ppm(out, img);
  if (!out) throw ImageIoError("failed writing image " + path.string());
}

}  // namespace bcd
