#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>

#include "xlut/binary.hpp"
#include "xlut/raster.hpp"
#include "xlut/resample.hpp"

namespace xlut {

/// Full dynamic range of a 16-bit radiograph.
inline constexpr int kMaxIntensity = 65535;
inline constexpr double kMaxIntensityF = 65535.0;

using Image16 = Raster<std::uint16_t>;
/// Normalized working representation, nominally in [0, 1].
using ImageF = Raster<double>;

namespace detail {

class PgmHeaderParser {
 public:
  explicit PgmHeaderParser(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  int next_int() {
    skip_space_and_comments();
    if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_])) throw FormatError("malformed PGM header");
    long v = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + (bytes_[pos_] - '0');
      if (v > 1'000'000'000L) throw FormatError("malformed PGM header: value too large");
      ++pos_;
    }
    return static_cast<int>(v);
  }

  /// Consumes the single whitespace byte that separates maxval from the raster.
  std::size_t payload_offset() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) throw FormatError("malformed PGM header");
    return pos_ + 1;
  }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 2;  // past the magic
};

}  // namespace detail

/// Decodes a binary PGM ("P5") with maxval 255 or 65535. 8-bit samples are
/// scaled by 257 onto the 16-bit range.
inline Image16 decode_pgm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw FormatError("unsupported format");
  detail::PgmHeaderParser parser(bytes);
  const int width = parser.next_int();
  const int height = parser.next_int();
  const int maxval = parser.next_int();
  if (width < 1 || height < 1) throw FormatError("malformed PGM header: empty image");
  if (maxval != 255 && maxval != 65535) {
    throw FormatError("unsupported PGM maxval " + std::to_string(maxval));
  }
  const std::size_t offset = parser.payload_offset();
  const std::size_t count = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  const std::size_t sample_bytes = maxval == 255 ? 1 : 2;
  if (bytes.size() < offset + count * sample_bytes) throw FormatError("truncated PGM pixel payload");

  Image16 img(width, height);
  auto px = img.pixels();
  const std::uint8_t* p = bytes.data() + offset;
  if (sample_bytes == 1) {
    for (std::size_t i = 0; i < count; ++i) px[i] = static_cast<std::uint16_t>(p[i] * 257);
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      px[i] = static_cast<std::uint16_t>((p[2 * i] << 8) | p[2 * i + 1]);
    }
  }
  return img;
}

/// Encodes as P5, maxval 65535, big-endian samples.
inline Bytes encode_pgm(const Image16& img) {
  const std::string header =
      "P5\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n65535\n";
  Bytes out(header.begin(), header.end());
  out.reserve(header.size() + img.size() * 2);
  for (std::uint16_t v : img.pixels()) {
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
  }
  return out;
}

inline Image16 read_pgm(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("no such file '" + path.string() + "'");
  return decode_pgm(read_file(path));
}

inline void write_pgm(const Image16& img, const std::filesystem::path& path) {
  write_file_atomic(path, encode_pgm(img));
}

inline ImageF normalize(const Image16& img) {
  ImageF out(img.width(), img.height());
  auto src = img.pixels();
  auto dst = out.pixels();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] / kMaxIntensityF;
  return out;
}

/// u*65535 rounded half away from zero, then clamped to [0, 65535].
inline std::uint16_t quantize(double u) {
  if (!std::isfinite(u)) throw InvariantError("denormalize: non-finite intensity");
  const double r = std::round(u * kMaxIntensityF);
  if (r <= 0.0) return 0;
  if (r >= kMaxIntensityF) return static_cast<std::uint16_t>(kMaxIntensity);
  return static_cast<std::uint16_t>(r);
}

inline Image16 denormalize(const ImageF& img) {
  Image16 out(img.width(), img.height());
  auto src = img.pixels();
  auto dst = out.pixels();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = quantize(src[i]);
  return out;
}

}  // namespace xlut
