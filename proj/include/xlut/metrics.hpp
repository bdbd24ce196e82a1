#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <span>

#include "xlut/image_io.hpp"
#include "xlut/remap.hpp"

namespace xlut {

template <typename T, typename U>
double mse(std::span<const T> x, std::span<const U> y) {
  if (x.size() != y.size()) throw ShapeError("mse: length mismatch");
  if (x.empty()) throw ShapeError("mse: empty input");
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x[i]) - static_cast<double>(y[i]);
    sum += d * d;
  }
  return sum / static_cast<double>(x.size());
}

template <typename T, typename U>
double mse(const Raster<T>& x, const Raster<U>& y) {
  require_same_shape(x, y, "mse");
  return mse(x.pixels(), y.pixels());
}

/// PSNR in dB over the 16-bit range. Identical images yield +infinity.
inline double psnr(const Image16& x, const Image16& y) {
  const double err = mse(x, y);
  if (err == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(kMaxIntensityF * kMaxIntensityF / err);
}

namespace detail {

inline constexpr int kSsimWindow = 11;

inline std::array<double, kSsimWindow> gaussian_taps(double sigma) {
  std::array<double, kSsimWindow> g{};
  double sum = 0.0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double d = i - kSsimWindow / 2;
    g[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += g[static_cast<std::size_t>(i)];
  }
  for (double& v : g) v /= sum;
  return g;
}

/// Separable "valid" Gaussian filter (no padding).
inline Raster<double> filter_valid(const Raster<double>& src, const std::array<double, kSsimWindow>& g) {
  const int ow = src.width() - kSsimWindow + 1;
  const int oh = src.height() - kSsimWindow + 1;
  Raster<double> tmp(ow, src.height());
  for (int y = 0; y < src.height(); ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k < kSsimWindow; ++k) acc += g[static_cast<std::size_t>(k)] * src(x + k, y);
      tmp(x, y) = acc;
    }
  }
  Raster<double> out(ow, oh);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k < kSsimWindow; ++k) acc += g[static_cast<std::size_t>(k)] * tmp(x, y + k);
      out(x, y) = acc;
    }
  }
  return out;
}

}  // namespace detail

/// Mean SSIM: 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03,
/// dynamic range 65535, averaged over the valid window positions only.
/// Computed on normalized intensities, which leaves the index unchanged.
inline double ssim(const Image16& x, const Image16& y) {
  require_same_shape(x, y, "ssim");
  if (x.width() < detail::kSsimWindow || x.height() < detail::kSsimWindow) {
    throw ShapeError("ssim: image smaller than the 11x11 window");
  }
  const auto g = detail::gaussian_taps(1.5);
  const ImageF fx = normalize(x);
  const ImageF fy = normalize(y);
  ImageF xx(x.width(), x.height()), yy(x.width(), x.height()), xy(x.width(), x.height());
  for (std::size_t i = 0; i < fx.size(); ++i) {
    const double a = fx.pixels()[i], b = fy.pixels()[i];
    xx.pixels()[i] = a * a;
    yy.pixels()[i] = b * b;
    xy.pixels()[i] = a * b;
  }
  const auto mx = detail::filter_valid(fx, g);
  const auto my = detail::filter_valid(fy, g);
  const auto sxx = detail::filter_valid(xx, g);
  const auto syy = detail::filter_valid(yy, g);
  const auto sxy = detail::filter_valid(xy, g);

  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;
  double total = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double ux = mx.pixels()[i], uy = my.pixels()[i];
    const double vx = sxx.pixels()[i] - ux * ux;
    const double vy = syy.pixels()[i] - uy * uy;
    const double cxy = sxy.pixels()[i] - ux * uy;
    total += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
  }
  return total / static_cast<double>(mx.size());
}

/// Per-term values of the five-term training objective.
struct LossBreakdown {
  double image_term = 0.0;
  double a_term = 0.0;
  double b_term = 0.0;
  double ww_term = 0.0;
  double wc_term = 0.0;
  double total = 0.0;

  double map_terms() const noexcept { return a_term + b_term + ww_term + wc_term; }

  LossBreakdown& operator+=(const LossBreakdown& o) noexcept {
    image_term += o.image_term;
    a_term += o.a_term;
    b_term += o.b_term;
    ww_term += o.ww_term;
    wc_term += o.wc_term;
    total += o.total;
    return *this;
  }
  LossBreakdown& operator/=(double n) noexcept {
    image_term /= n;
    a_term /= n;
    b_term /= n;
    ww_term /= n;
    wc_term /= n;
    total /= n;
    return *this;
  }
};

inline void finalize_total(LossBreakdown& l) noexcept {
  l.total = l.image_term + l.a_term + l.b_term + l.ww_term + l.wc_term;
}

/// Unweighted sum of the image MSE (normalized, full resolution) and the
/// four map MSEs (native map resolution).
inline LossBreakdown composite_loss(const ImageF& pred_img, const ImageF& gt_img, const ParamMaps& pred,
                                    const ParamMaps& gt) {
  if (!pred.a.same_shape(gt.a)) throw ShapeError("composite_loss: map shape mismatch");
  LossBreakdown l;
  l.image_term = mse(pred_img, gt_img);
  l.a_term = mse(pred.a, gt.a);
  l.b_term = mse(pred.b, gt.b);
  l.ww_term = mse(pred.ww, gt.ww);
  l.wc_term = mse(pred.wc, gt.wc);
  finalize_total(l);
  return l;
}

}  // namespace xlut
