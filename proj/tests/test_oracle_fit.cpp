#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "xlut/oracle_fit.hpp"
#include "xlut/synth.hpp"

using namespace xlut;

namespace {

void expect_recovers(const Image16& input, GlobalParams truth) {
  const GlobalFit f = fit_global(input, apply_global(input, truth));
  EXPECT_NEAR(f.params.wc, truth.wc, 0.02);
  EXPECT_NEAR(f.params.ww, truth.ww, 0.05 * truth.ww);
  EXPECT_LT(f.residual, 1e-6);
}

/// Phantom squeezed into [0.1, 0.7] of the range so a = 1.5, b = -0.1 never
/// clamps and every tile keeps usable pixels.
Image16 unclamped_phantom(std::uint64_t seed, int w, int h) {
  Image16 img = gen_phantom(seed, w, h);
  for (auto& v : img.pixels()) v = quantize(0.1 + 0.6 * (v / 65535.0));
  return img;
}

}  // namespace

TEST(FitGlobal, RecoversKnownWindow) {
  const Image16 input = gen_phantom(1, 64, 64);
  expect_recovers(input, {0.37, 0.8});
  expect_recovers(input, {0.5, 1.0});
}

TEST(FitGlobal, RecoversOverSeeds) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> uc(0.2, 0.8), uw(0.1, 1.8);
  for (std::uint64_t s = 0; s < 20; ++s) expect_recovers(gen_phantom(s, 48, 48), {uc(rng), uw(rng)});
}

TEST(FitGlobal, ResidualMatchesDirectMse) {
  const Image16 input = gen_phantom(3, 32, 32);
  const Image16 target = apply_global(gen_phantom(4, 32, 32), {0.4, 0.6});
  const GlobalFit f = fit_global(input, target);
  const Image16 out = apply_global(input, f.params);
  std::vector<double> x, y;
  for (std::size_t i = 0; i < out.size(); ++i) {
    x.push_back(out.pixels()[i] / 65535.0);
    y.push_back(target.pixels()[i] / 65535.0);
  }
  EXPECT_NEAR(f.residual, oracle::mse(x, y), 1e-12);
}

TEST(FitGlobal, ConstantTargetIsDegenerate) {
  EXPECT_THROW(fit_global(gen_phantom(1, 32, 32), Image16(32, 32, 30000)), DegenerateInputError);
}

TEST(FitGlobal, ShapeMismatch) { EXPECT_THROW(fit_global(Image16(4, 4), Image16(4, 5)), ShapeError); }

TEST(FitTiles, RecoversConstantLocalMaps) {
  const Image16 input = unclamped_phantom(5, 64, 64);
  const GlobalParams g{0.5, 1.0};
  const ParamMaps truth = ParamMaps::constant(8, 8, 8, {1.5, -0.1, g.wc, g.ww});
  const ParamMaps fit = fit_local_tiles(input, apply_maps(input, truth), g, 8);
  EXPECT_NO_THROW(fit.validate());
  for (std::size_t i = 0; i < fit.a.size(); ++i) {
    EXPECT_NEAR(fit.a.pixels()[i], 1.5, 0.02) << "tile " << i;
    EXPECT_NEAR(fit.b.pixels()[i], -0.1, 0.02) << "tile " << i;
    EXPECT_EQ(fit.wc.pixels()[i], 0.5f);
    EXPECT_EQ(fit.ww.pixels()[i], 1.0f);
  }
}

TEST(FitTiles, FlatTileFallsBackToIdentity) {
  Image16 input = unclamped_phantom(6, 32, 32);
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) input(x, y) = 20000;
  }
  const GlobalParams g{0.5, 1.0};
  const ParamMaps truth = ParamMaps::constant(4, 4, 8, {1.5, -0.1, g.wc, g.ww});
  const ParamMaps fit = fit_local_tiles(input, apply_maps(input, truth), g, 8);
  EXPECT_EQ(fit.a(0, 0), 1.0f);
  EXPECT_EQ(fit.b(0, 0), 0.0f);
  EXPECT_NEAR(fit.a(1, 1), 1.5, 0.02);
}

TEST(FitTiles, ResultsStayValidOnArbitraryPairs) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const ParamMaps fit = fit_local_tiles(gen_phantom(s, 32, 32), gen_phantom(s + 100, 32, 32), {0.5, 0.3}, 4);
    EXPECT_NO_THROW(fit.validate());
  }
}

TEST(FitTiles, RejectsBadTile) {
  EXPECT_THROW(fit_local_tiles(Image16(30, 32), Image16(30, 32), {0.5, 1.0}, 8), ShapeError);
}

TEST(ControlGrid, ConstantGridGivesConstantMaps) {
  const ParamMaps m = maps_from_control_grid(ControlGrid::uniform(2, 2, {1.2, 0.1, 0.4, 0.9}), 5, 3, 8);
  EXPECT_EQ(m, ParamMaps::constant(5, 3, 8, {1.2, 0.1, 0.4, 0.9}));
}

TEST(ControlGrid, LinearRows) {
  ControlGrid g = ControlGrid::uniform(2, 2, {});
  g.a = {1, 2, 1, 2};
  const ParamMaps m = maps_from_control_grid(g, 4, 2, 8);
  const float expected[] = {1.0f, static_cast<float>(4.0 / 3.0), static_cast<float>(5.0 / 3.0), 2.0f};
  for (int y = 0; y < 2; ++y) {
    for (int x = 0; x < 4; ++x) EXPECT_FLOAT_EQ(m.a(x, y), expected[x]);
  }
}

TEST(ControlGrid, RejectsZeroWindow) {
  ControlGrid g = ControlGrid::uniform(2, 2, {});
  g.ww[3] = 0.0;
  EXPECT_THROW(maps_from_control_grid(g, 4, 4, 8), InvariantError);
  g = ControlGrid::uniform(1, 2, {});
  EXPECT_THROW(maps_from_control_grid(g, 4, 4, 8), InvariantError);
  g = ControlGrid::uniform(2, 2, {});
  g.b.pop_back();
  EXPECT_THROW(maps_from_control_grid(g, 4, 4, 8), ShapeError);
}

TEST(ControlGrid, StaysInsideConvexHull) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    std::uniform_int_distribution<int> side(2, 5);
    ControlGrid g = ControlGrid::uniform(side(rng), side(rng), {});
    for (int c = 0; c < 4; ++c) {
      std::uniform_real_distribution<double> u(kGridRanges[c].lo, kGridRanges[c].hi);
      for (double& v : g.channel(c)) v = u(rng);
    }
    const ParamMaps m = maps_from_control_grid(g, 13, 9, 8);
    for (int c = 0; c < 4; ++c) {
      const auto [lo, hi] = std::minmax_element(g.channel(c).begin(), g.channel(c).end());
      for (float v : m.channel(c).pixels()) {
        EXPECT_GE(v, static_cast<float>(*lo));
        EXPECT_LE(v, static_cast<float>(*hi));
      }
    }
  }
}
