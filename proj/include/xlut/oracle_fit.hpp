#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "xlut/image_io.hpp"
#include "xlut/remap.hpp"
#include "xlut/resample.hpp"

namespace xlut {

struct GlobalFit {
  GlobalParams params;
  double residual = 0.0;  // normalized MSE of apply_global(input) vs target
};

namespace detail {

/// Image MSE of apply_global against a target, evaluated per distinct input
/// value: sum_v n_v f_v^2 - 2 f_v S_v + Q_v.
class GlobalObjective {
 public:
  GlobalObjective(const Image16& input, const Image16& target) {
    std::vector<double> count(kMaxIntensity + 1, 0.0), sum(kMaxIntensity + 1, 0.0), sumsq(kMaxIntensity + 1, 0.0);
    for (std::size_t i = 0; i < input.size(); ++i) {
      const auto v = input.pixels()[i];
      const double t = target.pixels()[i] / kMaxIntensityF;
      count[v] += 1.0;
      sum[v] += t;
      sumsq[v] += t * t;
    }
    for (int v = 0; v <= kMaxIntensity; ++v) {
      if (count[static_cast<std::size_t>(v)] > 0.0) {
        bins_.push_back({v / kMaxIntensityF, count[static_cast<std::size_t>(v)], sum[static_cast<std::size_t>(v)],
                         sumsq[static_cast<std::size_t>(v)]});
      }
    }
    n_ = static_cast<double>(input.size());
  }

  double operator()(double wc, double ww) const {
    double acc = 0.0;
    for (const Bin& b : bins_) {
      const double f = quantize(remap_value(b.u, 1.0, 0.0, wc, ww)) / kMaxIntensityF;
      acc += b.n * f * f - 2.0 * f * b.s + b.q;
    }
    return std::max(acc / n_, 0.0);
  }

 private:
  struct Bin {
    double u, n, s, q;
  };
  std::vector<Bin> bins_;
  double n_ = 1.0;
};

}  // namespace detail

/// Derivative-free global window fit. Coarse grid wc in {0, 0.02, ..., 1} x
/// ww at 24 log-spaced points in [0.05, 2], then successive local passes,
/// each 10x finer than the last, around the incumbent.
inline GlobalFit fit_global(const Image16& input, const Image16& target, int refine_passes = 6) {
  require_same_shape(input, target, "fit_global");
  const auto [lo, hi] = std::minmax_element(target.pixels().begin(), target.pixels().end());
  if (*lo == *hi) throw DegenerateInputError("fit_global: constant target, window width is unidentifiable");

  const detail::GlobalObjective objective(input, target);
  constexpr double kWcStep = 0.02;
  const double log_lo = std::log(0.05);
  const double log_step = (std::log(2.0) - log_lo) / 23.0;

  double best_wc = 0.0, best_log_ww = log_lo;
  double best = objective(best_wc, std::exp(best_log_ww));
  for (int i = 0; i <= 50; ++i) {
    for (int j = 0; j < 24; ++j) {
      const double wc = i * kWcStep;
      const double lww = log_lo + j * log_step;
      const double e = objective(wc, std::exp(lww));
      if (e < best) {
        best = e;
        best_wc = wc;
        best_log_ww = lww;
      }
    }
  }

  double wc_step = kWcStep, lww_step = log_step;
  for (int pass = 0; pass < refine_passes; ++pass) {
    wc_step /= 10.0;
    lww_step /= 10.0;
    const double c_wc = best_wc, c_lww = best_log_ww;
    for (int i = -10; i <= 10; ++i) {
      for (int j = -10; j <= 10; ++j) {
        const double wc = std::clamp(c_wc + i * wc_step, 0.0, 1.0);
        const double lww = std::max(c_lww + j * lww_step, std::log(kWwMin));
        const double e = objective(wc, std::exp(lww));
        if (e < best) {
          best = e;
          best_wc = wc;
          best_log_ww = lww;
        }
      }
    }
  }
  return {GlobalParams{best_wc, std::exp(best_log_ww)}, best};
}

/// Per-tile least-squares fit of the regional LUT given a known window.
/// Target pixels are pushed back through the inverse window; saturated or
/// near-clamp pixels are ignored. Tiles with fewer than 8 usable pixels or
/// no input variance fall back to the identity (a = 1, b = 0).
inline ParamMaps fit_local_tiles(const Image16& input, const Image16& target, const GlobalParams& g, int tile) {
  require_same_shape(input, target, "fit_local_tiles");
  validate(g);
  if (tile < 1 || input.width() % tile != 0 || input.height() % tile != 0) {
    throw ShapeError("fit_local_tiles: image " + std::to_string(input.width()) + "x" +
                     std::to_string(input.height()) + " is not divisible by tile " + std::to_string(tile));
  }
  constexpr double kClampMargin = 1e-3;
  constexpr int kMinPixels = 8;
  const int mw = input.width() / tile, mh = input.height() / tile;
  ParamMaps maps = ParamMaps::constant(mw, mh, tile, RemapParams{1.0, 0.0, g.wc, g.ww});

  for (int ty = 0; ty < mh; ++ty) {
    for (int tx = 0; tx < mw; ++tx) {
      int n = 0;
      double su = 0.0, sv = 0.0, suu = 0.0, suv = 0.0;
      for (int y = ty * tile; y < (ty + 1) * tile; ++y) {
        for (int x = tx * tile; x < (tx + 1) * tile; ++x) {
          const double yv = target(x, y) / kMaxIntensityF;
          if (yv <= 0.0 || yv >= 1.0) continue;
          const double v = g.wc - (g.ww / 4.0) * std::log(1.0 / yv - 1.0);
          if (v < kClampMargin || v > 1.0 - kClampMargin) continue;
          const double u = input(x, y) / kMaxIntensityF;
          ++n;
          su += u;
          sv += v;
          suu += u * u;
          suv += u * v;
        }
      }
      if (n < kMinPixels) continue;
      const double mu = su / n, mv = sv / n;
      const double var = suu / n - mu * mu;
      if (!(var > 1e-12)) continue;
      const double a = (suv / n - mu * mv) / var;
      const double b = mv - a * mu;
      maps.a(tx, ty) = static_cast<float>(kRangeA.clamp(a));
      maps.b(tx, ty) = static_cast<float>(kRangeB.clamp(b));
    }
  }
  return maps;
}

/// Coarse lattice of authored parameter values (row-major, grid_w x grid_h
/// per channel).
struct ControlGrid {
  int grid_w = 2;
  int grid_h = 2;
  std::vector<double> a;
  std::vector<double> b;
  std::vector<double> wc;
  std::vector<double> ww;

  const std::vector<double>& channel(int c) const noexcept {
    switch (c) {
      case 0: return a;
      case 1: return b;
      case 2: return wc;
      default: return ww;
    }
  }
  std::vector<double>& channel(int c) noexcept { return const_cast<std::vector<double>&>(std::as_const(*this).channel(c)); }

  static ControlGrid uniform(int grid_w, int grid_h, const RemapParams& p) {
    const auto n = static_cast<std::size_t>(grid_w) * static_cast<std::size_t>(grid_h);
    return {grid_w, grid_h, std::vector<double>(n, p.a), std::vector<double>(n, p.b),
            std::vector<double>(n, p.wc), std::vector<double>(n, p.ww)};
  }

  friend bool operator==(const ControlGrid&, const ControlGrid&) = default;
};

inline constexpr std::array<ChannelRange, 4> kGridRanges{kRangeA, kRangeB, kRangeWc, kRangeWw};

inline void validate(const ControlGrid& grid) {
  if (grid.grid_w < 2 || grid.grid_h < 2) throw InvariantError("control grid must be at least 2x2");
  const auto n = static_cast<std::size_t>(grid.grid_w) * static_cast<std::size_t>(grid.grid_h);
  for (int c = 0; c < 4; ++c) {
    const auto& values = grid.channel(c);
    if (values.size() != n) throw ShapeError(std::string("control grid channel '") + kChannelNames[c] + "' has wrong length");
    const ChannelRange& r = kGridRanges[static_cast<std::size_t>(c)];
    for (double v : values) {
      if (!std::isfinite(v) || !r.contains(v)) {
        throw InvariantError(std::string("control grid value out of range for channel '") + kChannelNames[c] + "'");
      }
    }
  }
}

/// Edge-aligned bilinear interpolation of each channel lattice to map size.
inline ParamMaps maps_from_control_grid(const ControlGrid& grid, int map_w, int map_h, int downscale) {
  validate(grid);
  ParamMaps maps;
  maps.downscale = downscale;
  for (int c = 0; c < 4; ++c) {
    const Raster<double> lattice(grid.grid_w, grid.grid_h, grid.channel(c));
    const Raster<double> fine = resize_bilinear(lattice, map_w, map_h);
    Plane p(map_w, map_h);
    for (std::size_t i = 0; i < fine.size(); ++i) p.pixels()[i] = static_cast<float>(fine.pixels()[i]);
    maps.channel(c) = std::move(p);
  }
  maps.validate();
  return maps;
}

}  // namespace xlut
