#pragma once

#include <array>
#include <vector>

#include "xlut/image_io.hpp"
#include "xlut/metrics.hpp"
#include "xlut/nn/model.hpp"
#include "xlut/remap.hpp"
#include "xlut/resample.hpp"
#include "xlut/synth.hpp"

namespace xlut {

struct ObjectiveResult {
  LossBreakdown loss;
  nn::Tensor dmaps;  // d total / d predicted maps, 1 x 4 x map_h x map_w
};

/// Five-term training loss for real-valued predicted maps, with gradients
/// on the four map planes.
///
/// The image term upsamples the predicted planes to full resolution (same
/// edge-aligned taps as apply_maps), remaps the normalized input without
/// quantization, and backpropagates through the LUT partials and the
/// transpose of the interpolation. Map terms compare at map resolution.
inline ObjectiveResult training_objective(const nn::Tensor& pred, const ImageF& input, const ImageF& gt_img,
                                          const ParamMaps& gt_maps, int downscale, bool with_grad = true) {
  const int mw = pred.shape().w, mh = pred.shape().h;
  require_same_shape(input, gt_img, "training_objective");
  if (pred.shape().c != 4 || mw != gt_maps.map_w() || mh != gt_maps.map_h() ||
      mw != map_extent(input.width(), downscale) || mh != map_extent(input.height(), downscale)) {
    throw ShapeError("training_objective: predicted maps " + pred.shape().str() + " do not match the sample");
  }
  ObjectiveResult res;
  if (with_grad) res.dmaps = nn::Tensor(pred.shape());

  const int w = input.width(), h = input.height();
  const auto xt = edge_aligned_taps(mw, mw * downscale);
  const auto yt = edge_aligned_taps(mh, mh * downscale);
  const double inv_n = 1.0 / static_cast<double>(input.size());
  double image_sum = 0.0;
  for (int y = 0; y < h; ++y) {
    const AxisTap& ty = yt[static_cast<std::size_t>(y)];
    for (int x = 0; x < w; ++x) {
      const AxisTap& tx = xt[static_cast<std::size_t>(x)];
      double p[4];
      for (int c = 0; c < 4; ++c) {
        const double top = tx.w0 * pred.at(0, c, ty.i0, tx.i0) + tx.w1 * pred.at(0, c, ty.i0, tx.i1);
        const double bot = tx.w0 * pred.at(0, c, ty.i1, tx.i0) + tx.w1 * pred.at(0, c, ty.i1, tx.i1);
        p[c] = ty.w0 * top + ty.w1 * bot;
      }
      const RemapJacobian j = remap_jacobian(input(x, y), p[0], p[1], p[2], p[3]);
      const double diff = j.y - gt_img(x, y);
      image_sum += diff * diff;
      if (!with_grad) continue;
      const double g = 2.0 * diff * inv_n;
      const double dp[4] = {g * j.da, g * j.db, g * j.dwc, g * j.dww};
      for (int c = 0; c < 4; ++c) {
        res.dmaps.at(0, c, ty.i0, tx.i0) += dp[c] * ty.w0 * tx.w0;
        res.dmaps.at(0, c, ty.i0, tx.i1) += dp[c] * ty.w0 * tx.w1;
        res.dmaps.at(0, c, ty.i1, tx.i0) += dp[c] * ty.w1 * tx.w0;
        res.dmaps.at(0, c, ty.i1, tx.i1) += dp[c] * ty.w1 * tx.w1;
      }
    }
  }
  res.loss.image_term = image_sum * inv_n;

  const double inv_m = 1.0 / static_cast<double>(mw * mh);
  std::array<double, 4> map_terms{};
  for (int c = 0; c < 4; ++c) {
    const Plane& gt = gt_maps.channel(c);
    double sum = 0.0;
    for (int y = 0; y < mh; ++y) {
      for (int x = 0; x < mw; ++x) {
        const double d = pred.at(0, c, y, x) - static_cast<double>(gt(x, y));
        sum += d * d;
        if (with_grad) res.dmaps.at(0, c, y, x) += 2.0 * d * inv_m;
      }
    }
    map_terms[static_cast<std::size_t>(c)] = sum * inv_m;
  }
  res.loss.a_term = map_terms[0];
  res.loss.b_term = map_terms[1];
  res.loss.wc_term = map_terms[2];
  res.loss.ww_term = map_terms[3];
  finalize_total(res.loss);
  return res;
}

/// Full inference path: low-resolution view, predicted maps, full-resolution
/// remap.
struct Enhanced {
  Image16 image;
  ParamMaps maps;
};

inline Enhanced enhance(const nn::Model& model, const Image16& input) {
  const int s = model.config().downscale;
  const nn::Prediction pred = model.forward(downsample_to_map_grid(input, s));
  Enhanced out;
  out.maps = pred.param_maps(s);
  out.image = apply_maps(input, out.maps);
  return out;
}

}  // namespace xlut
