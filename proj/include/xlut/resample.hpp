#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "xlut/raster.hpp"

namespace xlut {

/// One output coordinate of an edge-aligned linear resampling along an axis.
///
/// The source position of output index i is i*(in-1)/(out-1). Weights are
/// formed from the exact integer remainder so that mirroring the axis swaps
/// (w0, w1) bit-exactly.
struct AxisTap {
  int i0 = 0;
  int i1 = 0;
  double w0 = 1.0;
  double w1 = 0.0;
};

inline std::vector<AxisTap> edge_aligned_taps(int in_size, int out_size) {
  std::vector<AxisTap> taps(static_cast<std::size_t>(out_size));
  if (out_size == 1 || in_size == 1) return taps;
  const std::int64_t denom = out_size - 1;
  for (int i = 0; i < out_size; ++i) {
    const std::int64_t num = static_cast<std::int64_t>(i) * (in_size - 1);
    const auto base = static_cast<int>(num / denom);
    const std::int64_t rem = num % denom;
    AxisTap& t = taps[static_cast<std::size_t>(i)];
    t.i0 = base;
    if (rem == 0) {
      t.i1 = base;
    } else {
      t.i1 = base + 1;
      t.w0 = static_cast<double>(denom - rem) / static_cast<double>(denom);
      t.w1 = static_cast<double>(rem) / static_cast<double>(denom);
    }
  }
  return taps;
}

/// Two-point blend. Equal endpoints return the endpoint exactly and the
/// result never leaves [min(p0,p1), max(p0,p1)].
inline double blend(double p0, double p1, const AxisTap& t) noexcept {
  if (t.i0 == t.i1 || p0 == p1) return p0;
  const double v = t.w0 * p0 + t.w1 * p1;
  return std::clamp(v, std::min(p0, p1), std::max(p0, p1));
}

/// Edge-aligned ("corners map to corners") bilinear resampling. Rows are
/// interpolated horizontally first, then blended vertically.
template <typename T>
Raster<double> resize_bilinear(const Raster<T>& img, int out_w, int out_h) {
  if (img.empty()) throw ShapeError("resize_bilinear: empty input");
  if (out_w < 1 || out_h < 1) throw ShapeError("resize_bilinear: output size must be positive");
  const auto xt = edge_aligned_taps(img.width(), out_w);
  const auto yt = edge_aligned_taps(img.height(), out_h);

  // Horizontally resampled source rows.
  Raster<double> rows(out_w, img.height());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < out_w; ++x) {
      const AxisTap& t = xt[static_cast<std::size_t>(x)];
      rows(x, y) = blend(static_cast<double>(img(t.i0, y)), static_cast<double>(img(t.i1, y)), t);
    }
  }
  Raster<double> out(out_w, out_h);
  for (int y = 0; y < out_h; ++y) {
    const AxisTap& t = yt[static_cast<std::size_t>(y)];
    for (int x = 0; x < out_w; ++x) out(x, y) = blend(rows(x, t.i0), rows(x, t.i1), t);
  }
  return out;
}

/// Reflect-pads (mirror without repeating the edge sample) on the right and
/// bottom. Falls back to edge replication for single-sample axes.
template <typename T>
Raster<T> reflect_pad(const Raster<T>& img, int out_w, int out_h) {
  if (out_w < img.width() || out_h < img.height()) {
    throw ShapeError("reflect_pad: target smaller than input");
  }
  auto reflect = [](int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i %= period;
    return i < n ? i : period - i;
  };
  Raster<T> out(out_w, out_h);
  for (int y = 0; y < out_h; ++y) {
    const int sy = reflect(y, img.height());
    for (int x = 0; x < out_w; ++x) out(x, y) = img(reflect(x, img.width()), sy);
  }
  return out;
}

template <typename T>
Raster<T> crop(const Raster<T>& img, int out_w, int out_h) {
  if (out_w > img.width() || out_h > img.height()) throw ShapeError("crop: target larger than input");
  if (out_w == img.width() && out_h == img.height()) return img;
  Raster<T> out(out_w, out_h);
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) out(x, y) = img(x, y);
  }
  return out;
}

}  // namespace xlut
