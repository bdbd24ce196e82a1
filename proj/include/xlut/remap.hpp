#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "xlut/image_io.hpp"
#include "xlut/resample.hpp"

namespace xlut {

/// Smallest admissible window width (normalized units).
inline constexpr double kWwMin = 0.01;

/// Stored planes are 32-bit; a ww of 0.01 round-trips as 0.01f, which is
/// marginally below 0.01 in double. Admission compares against the float.
inline bool ww_admissible(double ww) noexcept {
  return ww >= static_cast<double>(static_cast<float>(kWwMin));
}

/// Closed value ranges used wherever parameters are authored or clamped
/// (control grids, tile fits, model heads). ParamMaps itself only demands
/// a > 0, b in [-1, 1], wc in [0, 1], ww >= ww_min.
struct ChannelRange {
  double lo;
  double hi;
  double clamp(double v) const noexcept { return std::clamp(v, lo, hi); }
  bool contains(double v) const noexcept { return v >= lo && v <= hi; }
};
inline constexpr ChannelRange kRangeA{1e-3, 4.0};
inline constexpr ChannelRange kRangeB{-1.0, 1.0};
inline constexpr ChannelRange kRangeWc{0.0, 1.0};
inline constexpr ChannelRange kRangeWw{kWwMin, 4.0};

/// Identity local LUT with a neutral global window.
struct RemapParams {
  double a = 1.0;
  double b = 0.0;
  double wc = 0.5;
  double ww = 1.0;
};

struct GlobalParams {
  double wc = 0.5;
  double ww = 1.0;
};

using Plane = Raster<float>;

inline constexpr std::array<const char*, 4> kChannelNames{"a", "b", "wc", "ww"};

/// Four co-registered low-resolution LUT parameter planes. One map cell
/// covers `downscale` x `downscale` full-resolution pixels.
struct ParamMaps {
  int downscale = 8;
  Plane a;
  Plane b;
  Plane wc;
  Plane ww;

  int map_w() const noexcept { return a.width(); }
  int map_h() const noexcept { return a.height(); }

  const Plane& channel(int c) const noexcept {
    switch (c) {
      case 0: return a;
      case 1: return b;
      case 2: return wc;
      default: return ww;
    }
  }
  Plane& channel(int c) noexcept { return const_cast<Plane&>(std::as_const(*this).channel(c)); }

  static ParamMaps constant(int map_w, int map_h, int downscale, const RemapParams& p) {
    ParamMaps m;
    m.downscale = downscale;
    m.a = Plane(map_w, map_h, static_cast<float>(p.a));
    m.b = Plane(map_w, map_h, static_cast<float>(p.b));
    m.wc = Plane(map_w, map_h, static_cast<float>(p.wc));
    m.ww = Plane(map_w, map_h, static_cast<float>(p.ww));
    return m;
  }

  /// Throws InvariantError/ShapeError when any invariant is violated.
  void validate() const {
    if (downscale < 1) throw InvariantError("ParamMaps: downscale must be >= 1");
    if (a.empty() || !a.same_shape(b) || !a.same_shape(wc) || !a.same_shape(ww)) {
      throw ShapeError("ParamMaps: planes must share one non-empty shape");
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double va = a.pixels()[i], vb = b.pixels()[i];
      const double vc = wc.pixels()[i], vw = ww.pixels()[i];
      if (!std::isfinite(va) || !std::isfinite(vb) || !std::isfinite(vc) || !std::isfinite(vw)) {
        throw InvariantError("ParamMaps: non-finite value");
      }
      if (!(va > 0.0)) throw InvariantError("ParamMaps: a must be > 0");
      if (vb < -1.0 || vb > 1.0) throw InvariantError("ParamMaps: b must lie in [-1, 1]");
      if (vc < 0.0 || vc > 1.0) throw InvariantError("ParamMaps: wc must lie in [0, 1]");
      if (!ww_admissible(vw)) throw InvariantError("ParamMaps: ww below minimum 0.01");
    }
  }

  friend bool operator==(const ParamMaps&, const ParamMaps&) = default;
};

/// Map-grid size for a full-resolution side under the pad-and-crop rule.
inline int map_extent(int full, int downscale) { return (full + downscale - 1) / downscale; }

// ---------------------------------------------------------------------------
// Scalar LUTs

/// Regional LUT: clamp(a*u + b, 0, 1). Three monotone pieces.
inline double local_lut(double u, double a, double b) {
  if (!(a > 0.0)) throw InvariantError("local_lut: slope a must be > 0");
  return std::clamp(a * u + b, 0.0, 1.0);
}

/// Global window: 1 / (1 + exp(-4 (v - wc) / ww)).
inline double global_lut(double v, double wc, double ww) {
  if (!ww_admissible(ww)) throw InvariantError("global_lut: ww below minimum 0.01");
  return 1.0 / (1.0 + std::exp(-4.0 * (v - wc) / ww));
}

/// Unchecked composite used by the pixel loops.
inline double remap_value(double u, double a, double b, double wc, double ww) noexcept {
  const double v = std::clamp(a * u + b, 0.0, 1.0);
  return 1.0 / (1.0 + std::exp(-4.0 * (v - wc) / ww));
}

struct RemapJacobian {
  double y = 0.0;
  double du = 0.0;
  double da = 0.0;
  double db = 0.0;
  double dwc = 0.0;
  double dww = 0.0;
};

/// Partials of y = G(L(u)). Clamped points of L get a zero subgradient.
inline RemapJacobian remap_jacobian(double u, double a, double b, double wc, double ww) {
  if (!(a > 0.0)) throw InvariantError("remap_jacobian: slope a must be > 0");
  if (!ww_admissible(ww)) throw InvariantError("remap_jacobian: ww below minimum 0.01");
  RemapJacobian j;
  const double lin = a * u + b;
  const bool open = lin > 0.0 && lin < 1.0;
  const double v = std::clamp(lin, 0.0, 1.0);
  j.y = 1.0 / (1.0 + std::exp(-4.0 * (v - wc) / ww));
  const double slope = 4.0 * j.y * (1.0 - j.y) / ww;
  if (open) {
    j.du = slope * a;
    j.da = slope * u;
    j.db = slope;
  }
  j.dwc = -slope;
  j.dww = -slope * (v - wc) / ww;
  return j;
}

/// n evenly spaced samples of G(L(u)) over [0, 1].
inline std::vector<std::pair<double, double>> render_lut(double a, double b, double wc, double ww, int n) {
  if (n < 2) throw InvariantError("render_lut: need at least 2 samples");
  if (!(a > 0.0)) throw InvariantError("render_lut: slope a must be > 0");
  if (!ww_admissible(ww)) throw InvariantError("render_lut: ww below minimum 0.01");
  std::vector<std::pair<double, double>> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double u = static_cast<double>(i) / static_cast<double>(n - 1);
    out.emplace_back(u, remap_value(u, a, b, wc, ww));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Full-resolution application

inline void check_map_geometry(const Image16& img, const ParamMaps& maps) {
  const int s = maps.downscale;
  if (maps.map_w() != map_extent(img.width(), s) || maps.map_h() != map_extent(img.height(), s)) {
    throw ShapeError("apply_maps: maps " + std::to_string(maps.map_w()) + "x" +
                     std::to_string(maps.map_h()) + " at downscale " + std::to_string(s) +
                     " do not cover image " + std::to_string(img.width()) + "x" +
                     std::to_string(img.height()));
  }
}

/// Upsamples every plane to the padded full-resolution grid (map * s),
/// crops to the image and evaluates both LUTs per pixel.
///
/// The interpolation is fused: each map row is resampled horizontally once,
/// then blended vertically per output row. Results are identical to
/// resize_bilinear of each plane followed by remap_value.
inline Image16 apply_maps(const Image16& img, const ParamMaps& maps) {
  maps.validate();
  check_map_geometry(img, maps);
  const int s = maps.downscale;
  const int mw = maps.map_w(), mh = maps.map_h();
  const int w = img.width(), h = img.height();
  const auto xt = edge_aligned_taps(mw, mw * s);
  const auto yt = edge_aligned_taps(mh, mh * s);

  // rows[c][my * w + x]: channel c of map row my, horizontally upsampled.
  std::array<std::vector<double>, 4> rows;
  for (int c = 0; c < 4; ++c) {
    const Plane& p = maps.channel(c);
    auto& r = rows[static_cast<std::size_t>(c)];
    r.resize(static_cast<std::size_t>(mh) * static_cast<std::size_t>(w));
    for (int my = 0; my < mh; ++my) {
      for (int x = 0; x < w; ++x) {
        const AxisTap& t = xt[static_cast<std::size_t>(x)];
        r[static_cast<std::size_t>(my) * w + x] = blend(p(t.i0, my), p(t.i1, my), t);
      }
    }
  }

  Image16 out(w, h);
  for (int y = 0; y < h; ++y) {
    const AxisTap& t = yt[static_cast<std::size_t>(y)];
    const std::size_t r0 = static_cast<std::size_t>(t.i0) * w;
    const std::size_t r1 = static_cast<std::size_t>(t.i1) * w;
    for (int x = 0; x < w; ++x) {
      double p[4];
      for (int c = 0; c < 4; ++c) {
        const auto& r = rows[static_cast<std::size_t>(c)];
        p[c] = blend(r[r0 + x], r[r1 + x], t);
      }
      const double u = img(x, y) / kMaxIntensityF;
      out(x, y) = quantize(remap_value(u, p[0], p[1], p[2], p[3]));
    }
  }
  return out;
}

inline void validate(const GlobalParams& g) {
  if (!std::isfinite(g.wc) || g.wc < 0.0 || g.wc > 1.0) throw InvariantError("GlobalParams: wc must lie in [0, 1]");
  if (!std::isfinite(g.ww) || !ww_admissible(g.ww)) throw InvariantError("GlobalParams: ww below minimum 0.01");
}

/// Global-only presentation: identity local LUT, scalar window.
inline Image16 apply_global(const Image16& img, const GlobalParams& g) {
  validate(g);
  Image16 out(img.width(), img.height());
  auto src = img.pixels();
  auto dst = out.pixels();
  if (src.size() < 16384) {
    for (std::size_t i = 0; i < src.size(); ++i) {
      dst[i] = quantize(remap_value(src[i] / kMaxIntensityF, 1.0, 0.0, g.wc, g.ww));
    }
    return out;
  }
  // Large images: one table entry per possible input value.
  std::vector<std::uint16_t> lut(kMaxIntensity + 1);
  for (int v = 0; v <= kMaxIntensity; ++v) {
    lut[static_cast<std::size_t>(v)] = quantize(remap_value(v / kMaxIntensityF, 1.0, 0.0, g.wc, g.ww));
  }
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = lut[src[i]];
  return out;
}

}  // namespace xlut
