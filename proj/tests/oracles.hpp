#pragma once

// Independent reference implementations used only by the tests. Nothing
// here calls into the library's resampling or LUT code.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "xlut/image_io.hpp"
#include "xlut/remap.hpp"

namespace oracle {

/// Edge-aligned bilinear sample of a row-major w x h grid, evaluated from
/// the closed-form source position.
inline double bilinear_at(const std::vector<double>& g, int w, int h, int out_w, int out_h, int x, int y) {
  const double sx = out_w > 1 ? static_cast<double>(x) * (w - 1) / (out_w - 1) : 0.0;
  const double sy = out_h > 1 ? static_cast<double>(y) * (h - 1) / (out_h - 1) : 0.0;
  const int x0 = std::min(static_cast<int>(std::floor(sx)), w - 1);
  const int y0 = std::min(static_cast<int>(std::floor(sy)), h - 1);
  const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
  const double fx = sx - x0, fy = sy - y0;
  auto at = [&](int i, int j) { return g[static_cast<std::size_t>(j) * w + i]; };
  return (1 - fy) * ((1 - fx) * at(x0, y0) + fx * at(x1, y0)) + fy * ((1 - fx) * at(x0, y1) + fx * at(x1, y1));
}

inline double remap(double u, double a, double b, double wc, double ww) {
  double v = a * u + b;
  if (v < 0) v = 0;
  if (v > 1) v = 1;
  return 1.0 / (1.0 + std::exp(-4.0 * (v - wc) / ww));
}

/// Round half away from zero onto [0, 65535].
inline long to_raw(double y) {
  const double r = y * 65535.0;
  long q = r >= 0 ? static_cast<long>(std::floor(r + 0.5)) : -static_cast<long>(std::floor(-r + 0.5));
  return std::clamp(q, 0L, 65535L);
}

/// Per-pixel scalar remap: upsample every plane to the padded extent
/// (map * s), evaluate both LUTs in double precision, quantize.
inline std::vector<long> apply_maps(const xlut::Image16& img, const xlut::ParamMaps& maps) {
  const int s = maps.downscale, mw = maps.map_w(), mh = maps.map_h();
  std::vector<std::vector<double>> planes(4);
  for (int c = 0; c < 4; ++c) {
    const auto px = maps.channel(c).pixels();
    planes[c].assign(px.begin(), px.end());
  }
  std::vector<long> out(img.size());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      double p[4];
      for (int c = 0; c < 4; ++c) p[c] = bilinear_at(planes[c], mw, mh, mw * s, mh * s, x, y);
      const double u = img(x, y) / 65535.0;
      out[static_cast<std::size_t>(y) * img.width() + x] = to_raw(remap(u, p[0], p[1], p[2], p[3]));
    }
  }
  return out;
}

/// Uniform random image.
inline xlut::Image16 random_image(std::mt19937_64& rng, int w, int h) {
  std::uniform_int_distribution<int> d(0, 65535);
  xlut::Image16 img(w, h);
  for (auto& v : img.pixels()) v = static_cast<std::uint16_t>(d(rng));
  return img;
}

/// Random maps inside the ParamMaps invariants (biased away from the exact
/// bounds only where the float representation would fall outside them).
inline xlut::ParamMaps random_maps(std::mt19937_64& rng, int mw, int mh, int s) {
  std::uniform_real_distribution<double> ua(0.05, 4.0), ub(-1.0, 1.0), uc(0.0, 1.0), uw(0.011, 4.0);
  xlut::ParamMaps m = xlut::ParamMaps::constant(mw, mh, s, {});
  for (std::size_t i = 0; i < m.a.size(); ++i) {
    m.a.pixels()[i] = static_cast<float>(ua(rng));
    m.b.pixels()[i] = static_cast<float>(ub(rng));
    m.wc.pixels()[i] = static_cast<float>(uc(rng));
    m.ww.pixels()[i] = static_cast<float>(uw(rng));
  }
  return m;
}

/// Naive two-pass mean squared error.
inline double mse(const std::vector<double>& x, const std::vector<double>& y) {
  std::vector<double> sq(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) sq[i] = (x[i] - y[i]) * (x[i] - y[i]);
  long double acc = 0;
  for (double v : sq) acc += v;
  return static_cast<double>(acc / sq.size());
}

/// Fresh scratch directory under the system temp dir, removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("xlut-" + tag + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& p) const { return path_ / p; }

 private:
  std::filesystem::path path_;
};

}  // namespace oracle
