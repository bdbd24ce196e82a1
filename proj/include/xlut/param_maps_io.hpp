#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"
#include "xlut/binary.hpp"
#include "xlut/remap.hpp"

namespace xlut {

// "XLUTMAPS" container:
//   8-byte magic, u32 version (1), u32 header length, UTF-8 JSON header
//   {map_w, map_h, downscale, channels: ["a","b","wc","ww"]}, then four
//   float32 planes in channel order, row-major. All integers little-endian.

inline constexpr std::string_view kMapsMagic = "XLUTMAPS";
inline constexpr std::uint32_t kMapsVersion = 1;

inline Bytes encode_maps(const ParamMaps& maps) {
  maps.validate();
  nlohmann::json header = {{"map_w", maps.map_w()},
                           {"map_h", maps.map_h()},
                           {"downscale", maps.downscale},
                           {"channels", {"a", "b", "wc", "ww"}}};
  const std::string text = header.dump();
  Bytes out;
  ByteWriter w(out);
  w.raw(kMapsMagic);
  w.u32(kMapsVersion);
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.raw(text);
  for (int c = 0; c < 4; ++c) {
    for (float v : maps.channel(c).pixels()) w.f32(v);
  }
  return out;
}

inline ParamMaps decode_maps(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "XLUTMAPS");
  if (r.raw(kMapsMagic.size()) != kMapsMagic) throw FormatError("XLUTMAPS: bad magic");
  if (const auto v = r.u32(); v != kMapsVersion) {
    throw FormatError("XLUTMAPS: unsupported version " + std::to_string(v));
  }
  const std::uint32_t header_len = r.u32();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.raw(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("XLUTMAPS: bad header: ") + e.what());
  }
  int map_w = 0, map_h = 0, downscale = 0;
  try {
    map_w = header.at("map_w").get<int>();
    map_h = header.at("map_h").get<int>();
    downscale = header.at("downscale").get<int>();
    if (header.at("channels") != nlohmann::json({"a", "b", "wc", "ww"})) {
      throw FormatError("XLUTMAPS: unexpected channel order");
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("XLUTMAPS: bad header: ") + e.what());
  }
  if (map_w < 1 || map_h < 1 || map_w > (1 << 20) || map_h > (1 << 20)) {
    throw FormatError("XLUTMAPS: bad plane size");
  }
  const std::size_t n = static_cast<std::size_t>(map_w) * static_cast<std::size_t>(map_h);
  if (r.remaining() != 4 * n * sizeof(float)) throw FormatError("XLUTMAPS: payload size mismatch");
  ParamMaps maps;
  maps.downscale = downscale;
  for (int c = 0; c < 4; ++c) {
    Plane p(map_w, map_h);
    for (float& v : p.pixels()) v = r.f32();
    maps.channel(c) = std::move(p);
  }
  try {
    maps.validate();
  } catch (const Error& e) {
    throw FormatError(std::string("XLUTMAPS: ") + e.what());
  }
  return maps;
}

inline void write_maps(const ParamMaps& maps, const std::filesystem::path& path) {
  write_file_atomic(path, encode_maps(maps));
}

inline ParamMaps read_maps(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("no such file '" + path.string() + "'");
  return decode_maps(read_file(path));
}

}  // namespace xlut
