#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>

#include "json.hpp"
#include "xlut/image_io.hpp"
#include "xlut/metrics.hpp"
#include "xlut/param_maps_io.hpp"
#include "xlut/remap.hpp"
#include "xlut/resample.hpp"
#include "xlut/rng.hpp"

namespace xlut {

inline constexpr const char* kGeneratorVersion = "xlut-synth-1";

/// Ranges of synthetic ground-truth parameters (a, b, wc, ww).
inline constexpr std::array<ChannelRange, 4> kSynthRanges{
    ChannelRange{0.5, 2.0}, ChannelRange{-0.25, 0.25}, ChannelRange{0.25, 0.75}, ChannelRange{0.3, 1.5}};

struct SampleMeta {
  int width = 0;
  int height = 0;
  int downscale = 8;
  std::string generator_version = kGeneratorVersion;
};

/// One training example. gt_img == apply_maps(input, gt_maps) bit-exactly.
struct Sample {
  Image16 input;
  ParamMaps gt_maps;
  Image16 gt_img;
  std::uint64_t seed = 0;
  SampleMeta meta;
};

/// Layered phantom: smooth illumination gradient, 3-8 soft-edged bright
/// ellipses, and mild signal-proportional noise, stretched to span at
/// least 70% of the dynamic range.
inline Image16 gen_phantom(std::uint64_t seed, int w, int h) {
  if (w < 32 || h < 32) throw ShapeError("gen_phantom: sides must be >= 32");
  Rng rng(derive_seed(seed, 1));
  const double base = rng.uniform(0.15, 0.35);
  const double gx = rng.uniform(-0.2, 0.2);
  const double gy = rng.uniform(-0.2, 0.2);

  struct Ellipse {
    double cx, cy, rx, ry, cos_t, sin_t, amp, soft;
  };
  const int count = rng.uniform_int(3, 8);
  std::vector<Ellipse> ellipses;
  for (int i = 0; i < count; ++i) {
    const double theta = rng.uniform(0.0, std::numbers::pi);
    ellipses.push_back({rng.uniform(0.15, 0.85) * w, rng.uniform(0.15, 0.85) * h,
                        rng.uniform(0.06, 0.3) * w, rng.uniform(0.06, 0.3) * h, std::cos(theta),
                        std::sin(theta), rng.uniform(0.15, 0.45), rng.uniform(0.04, 0.15)});
  }

  ImageF field(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double v = base + gx * (x / double(w - 1) - 0.5) + gy * (y / double(h - 1) - 0.5);
      for (const Ellipse& e : ellipses) {
        const double dx = x - e.cx, dy = y - e.cy;
        const double px = (dx * e.cos_t + dy * e.sin_t) / e.rx;
        const double py = (-dx * e.sin_t + dy * e.cos_t) / e.ry;
        const double r = std::sqrt(px * px + py * py);
        v += e.amp / (1.0 + std::exp(-(1.0 - r) / e.soft));
      }
      field(x, y) = v;
    }
  }

  const auto [lo_it, hi_it] = std::minmax_element(field.pixels().begin(), field.pixels().end());
  const double lo = *lo_it, hi = *hi_it;
  const double out_lo = rng.uniform(0.04, 0.14);
  const double out_hi = rng.uniform(0.86, 0.96);
  const double scale = hi > lo ? (out_hi - out_lo) / (hi - lo) : 0.0;
  Rng noise(derive_seed(seed, 2));
  Image16 img(w, h);
  for (std::size_t i = 0; i < field.size(); ++i) {
    double v = out_lo + (field.pixels()[i] - lo) * scale;
    v *= 1.0 + 0.015 * noise.normal();
    img.pixels()[i] = quantize(std::clamp(v, 0.0, 1.0));
  }
  return img;
}

namespace detail {

inline Plane to_plane(const Raster<double>& r, const ChannelRange& range) {
  Plane p(r.width(), r.height());
  for (std::size_t i = 0; i < r.size(); ++i) p.pixels()[i] = static_cast<float>(range.clamp(r.pixels()[i]));
  return p;
}

}  // namespace detail

/// Smooth random maps: a coarse uniform grid per channel (max(2, side/4)
/// cells per side), bilinearly upsampled, then mapped linearly into the
/// synthetic channel ranges.
inline ParamMaps gen_maps(std::uint64_t seed, int map_w, int map_h, int downscale = 8) {
  if (map_w < 2 || map_h < 2) throw ShapeError("gen_maps: map sides must be >= 2");
  ParamMaps maps;
  maps.downscale = downscale;
  const int gw = std::max(2, map_w / 4);
  const int gh = std::max(2, map_h / 4);
  for (int c = 0; c < 4; ++c) {
    Rng rng(derive_seed(seed, 100 + static_cast<std::uint64_t>(c)));
    Raster<double> coarse(gw, gh);
    for (double& v : coarse.pixels()) v = rng.uniform();
    Raster<double> fine = resize_bilinear(coarse, map_w, map_h);
    const ChannelRange& r = kSynthRanges[static_cast<std::size_t>(c)];
    for (double& v : fine.pixels()) v = r.lo + (r.hi - r.lo) * v;
    maps.channel(c) = detail::to_plane(fine, r);
  }
  return maps;
}

/// Reflect-pads to whole map cells and samples the map grid; this is the
/// low-resolution view the predictor sees.
inline ImageF downsample_to_map_grid(const Image16& img, int downscale) {
  const int mw = map_extent(img.width(), downscale);
  const int mh = map_extent(img.height(), downscale);
  const ImageF padded = reflect_pad(normalize(img), mw * downscale, mh * downscale);
  return resize_bilinear(padded, mw, mh);
}

/// Weight of the per-seed annotator variability (gen_maps) around the
/// content rule.
inline constexpr double kAnnotatorJitter = 0.1;

/// Ground-truth maps as an annotator would author them for `input`:
/// regional equalization that lifts dark regions and compresses bright ones
/// toward the image mean, a window centred near that mean, plus smooth
/// per-seed variability from gen_maps.
inline ParamMaps annotate_maps(const Image16& input, int downscale, std::uint64_t seed,
                               double jitter_weight = kAnnotatorJitter) {
  const ImageF low = downsample_to_map_grid(input, downscale);
  const int mw = low.width(), mh = low.height();
  if (mw < 2 || mh < 2) throw ShapeError("annotate_maps: need at least 2x2 map cells");

  double mean = 0.0;
  for (double v : low.pixels()) mean += v;
  mean /= static_cast<double>(low.size());

  Raster<double> local(mw, mh);
  for (int y = 0; y < mh; ++y) {
    for (int x = 0; x < mw; ++x) {
      double acc = 0.0;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          acc += low(std::clamp(x + dx, 0, mw - 1), std::clamp(y + dy, 0, mh - 1));
        }
      }
      local(x, y) = acc / 9.0;
    }
  }

  const ParamMaps jitter = gen_maps(seed, mw, mh, downscale);
  std::array<Raster<double>, 4> planes{Raster<double>(mw, mh), Raster<double>(mw, mh), Raster<double>(mw, mh),
                                       Raster<double>(mw, mh)};
  for (int y = 0; y < mh; ++y) {
    for (int x = 0; x < mw; ++x) {
      const double d = mean - local(x, y);
      const double a = kSynthRanges[0].clamp(1.2 + 2.5 * d);
      const double rule[4] = {a, mean - a * local(x, y), mean + 0.05, 0.8};
      for (int c = 0; c < 4; ++c) {
        const ChannelRange& r = kSynthRanges[static_cast<std::size_t>(c)];
        const double j = jitter.channel(c)(x, y) - 0.5 * (r.lo + r.hi);
        planes[static_cast<std::size_t>(c)](x, y) = rule[c] + jitter_weight * j;
      }
    }
  }
  ParamMaps maps;
  maps.downscale = downscale;
  for (int c = 0; c < 4; ++c) {
    maps.channel(c) = detail::to_plane(planes[static_cast<std::size_t>(c)], kSynthRanges[static_cast<std::size_t>(c)]);
  }
  return maps;
}

/// Builds a sample from explicit ground-truth maps.
inline Sample make_sample_with_maps(std::uint64_t seed, const Image16& input, ParamMaps maps) {
  maps.validate();
  Sample s;
  s.seed = seed;
  s.meta.width = input.width();
  s.meta.height = input.height();
  s.meta.downscale = maps.downscale;
  s.gt_img = apply_maps(input, maps);
  s.input = input;
  s.gt_maps = std::move(maps);
  return s;
}

/// Phantom input, annotator ground-truth maps at (w/s, h/s), and the
/// ground-truth image those maps produce.
inline Sample make_sample(std::uint64_t seed, int w, int h, int downscale) {
  if (downscale < 1 || w % downscale != 0 || h % downscale != 0) {
    throw ShapeError("make_sample: " + std::to_string(w) + "x" + std::to_string(h) +
                     " is not divisible by downscale " + std::to_string(downscale));
  }
  Image16 input = gen_phantom(seed, w, h);
  ParamMaps maps = annotate_maps(input, downscale, derive_seed(seed, 3));
  return make_sample_with_maps(seed, input, std::move(maps));
}

/// Re-checks the ground-truth invariant; throws InvariantError on mismatch.
inline void validate_sample(const Sample& s) {
  s.gt_maps.validate();
  require_same_shape(s.input, s.gt_img, "sample");
  if (apply_maps(s.input, s.gt_maps) != s.gt_img) throw InvariantError("ground-truth inconsistency");
}

inline void write_sample(const Sample& s, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_pgm(s.input, dir / "input.pgm");
  write_pgm(s.gt_img, dir / "gt.pgm");
  write_maps(s.gt_maps, dir / "maps.xlutmaps");
  const nlohmann::json meta = {{"seed", s.seed},
                               {"width", s.meta.width},
                               {"height", s.meta.height},
                               {"downscale", s.meta.downscale},
                               {"generator_version", s.meta.generator_version}};
  write_file_atomic(dir / "meta.json", meta.dump(2) + "\n");
}

inline Sample read_sample(const std::filesystem::path& dir) {
  for (const char* name : {"input.pgm", "gt.pgm", "maps.xlutmaps", "meta.json"}) {
    if (!std::filesystem::exists(dir / name)) {
      throw IoError("sample '" + dir.string() + "' is missing " + name);
    }
  }
  Sample s;
  try {
    const auto bytes = read_file(dir / "meta.json");
    const auto meta = nlohmann::json::parse(bytes.begin(), bytes.end());
    s.seed = meta.at("seed").get<std::uint64_t>();
    s.meta.width = meta.at("width").get<int>();
    s.meta.height = meta.at("height").get<int>();
    s.meta.downscale = meta.at("downscale").get<int>();
    s.meta.generator_version = meta.at("generator_version").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("sample '" + dir.string() + "': bad meta: " + e.what());
  }
  s.input = read_pgm(dir / "input.pgm");
  s.gt_img = read_pgm(dir / "gt.pgm");
  s.gt_maps = read_maps(dir / "maps.xlutmaps");
  if (s.input.width() != s.meta.width || s.input.height() != s.meta.height ||
      s.gt_maps.downscale != s.meta.downscale) {
    throw InvariantError("sample '" + dir.string() + "': meta does not match payload");
  }
  validate_sample(s);
  return s;
}

/// Sample directories directly under `root`, in lexicographic order.
inline std::vector<Sample> read_dataset(const std::filesystem::path& root) {
  if (!std::filesystem::is_directory(root)) throw IoError("no such dataset directory '" + root.string() + "'");
  std::vector<std::filesystem::path> dirs;
  for (const auto& e : std::filesystem::directory_iterator(root)) {
    if (e.is_directory() && std::filesystem::exists(e.path() / "meta.json")) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  std::vector<Sample> out;
  out.reserve(dirs.size());
  for (const auto& d : dirs) out.push_back(read_sample(d));
  return out;
}

/// Deterministic dataset: sample i uses derive_seed(seed, i).
inline std::vector<Sample> make_dataset(std::uint64_t seed, int count, int w, int h, int downscale) {
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    out.push_back(make_sample(derive_seed(seed, static_cast<std::uint64_t>(i)), w, h, downscale));
  }
  return out;
}

}  // namespace xlut
