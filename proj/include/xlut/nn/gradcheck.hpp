#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "xlut/nn/model.hpp"
#include "xlut/objective.hpp"
#include "xlut/rng.hpp"
#include "xlut/synth.hpp"

namespace xlut::nn {

/// |analytic - numeric| / max(|analytic|, |numeric|, floor). The floor keeps
/// near-zero gradients from amplifying round-off in the numeric estimate.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Central difference of a scalar function of one coordinate. The
/// coordinate is restored bit-exactly afterwards.
inline double central_difference(double& x, double step, const std::function<double()>& f) {
  const double saved = x;
  x = saved + step;
  const double up = f();
  x = saved - step;
  const double down = f();
  x = saved;
  return (up - down) / (2.0 * step);
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::string worst;
};

struct GradCheckOptions {
  int levels = 3;
  int net_side = 16;
  int downscale = 8;
  int features = 32;
  double leaky_slope = 0.01;
  std::size_t min_coordinates = 512;
  double step = 1e-5;
};

/// End-to-end check of the five-term loss gradient with respect to model
/// parameters. Every parameter tensor contributes an equal share of the
/// sampled coordinates.
inline GradCheckResult check_model_gradients(std::uint64_t seed, const GradCheckOptions& opt = {}) {
  ModelConfig cfg;
  cfg.levels = opt.levels;
  cfg.features = opt.features;
  cfg.downscale = opt.downscale;
  cfg.leaky_slope = opt.leaky_slope;
  Model model(cfg, seed);

  const int side = opt.net_side * opt.downscale;
  const Sample sample = make_sample(derive_seed(seed, 11), side, side, opt.downscale);
  const ImageF input = normalize(sample.input);
  const ImageF gt = normalize(sample.gt_img);
  const ImageF low = downsample_to_map_grid(sample.input, opt.downscale);

  auto loss = [&]() {
    const Prediction p = model.forward(low);
    return training_objective(p.maps, input, gt, sample.gt_maps, opt.downscale, false).loss.total;
  };

  model.zero_grad();
  {
    const Prediction p = model.forward(low);
    const auto obj = training_objective(p.maps, input, gt, sample.gt_maps, opt.downscale, true);
    model.backward(p.cache, obj.dmaps);
  }

  auto params = model.parameters();
  const std::size_t per_tensor = (opt.min_coordinates + params.size() - 1) / params.size();
  Rng rng(derive_seed(seed, 12));
  GradCheckResult result;
  for (auto& p : params) {
    const std::size_t n = std::min(per_tensor, p.tensor.size());
    std::vector<std::size_t> picks;
    if (n == p.tensor.size()) {
      for (std::size_t i = 0; i < n; ++i) picks.push_back(i);
    } else {
      while (picks.size() < n) {
        const auto i = static_cast<std::size_t>(rng() % p.tensor.size());
        if (std::find(picks.begin(), picks.end(), i) == picks.end()) picks.push_back(i);
      }
    }
    for (std::size_t i : picks) {
      const double analytic = p.tensor.grad()[i];
      const double numeric = central_difference(p.tensor.data()[i], opt.step, loss);
      const double err = relative_error(analytic, numeric);
      ++result.checked;
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst = p.name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return result;
}

}  // namespace xlut::nn
