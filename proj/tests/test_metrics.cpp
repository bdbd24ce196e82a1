#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "xlut/metrics.hpp"

using namespace xlut;

namespace {

ImageF random_float(std::mt19937_64& rng, int w, int h) {
  std::uniform_real_distribution<double> u(0, 1);
  ImageF img(w, h);
  for (double& v : img.pixels()) v = u(rng);
  return img;
}

std::vector<double> flat(const auto& r) { return std::vector<double>(r.pixels().begin(), r.pixels().end()); }

Image16 add_noise(const Image16& img, int amplitude, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> d(-amplitude, amplitude);
  Image16 out = img;
  for (auto& v : out.pixels()) v = static_cast<std::uint16_t>(std::clamp(v + d(rng), 0, 65535));
  return out;
}

}  // namespace

TEST(Mse, TrivialCases) {
  const ImageF z(2, 1, 0.0), o(2, 1, 1.0);
  EXPECT_EQ(mse(z, z), 0.0);
  EXPECT_EQ(mse(z, o), 1.0);
}

TEST(Mse, MatchesTwoPassReference) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const ImageF x = random_float(rng, 37, 29), y = random_float(rng, 37, 29);
    EXPECT_NEAR(mse(x, y), oracle::mse(flat(x), flat(y)), 1e-12);
    EXPECT_EQ(mse(x, y), mse(y, x));
  }
}

TEST(Mse, ShapeMismatch) { EXPECT_THROW(mse(ImageF(2, 2), ImageF(2, 3)), ShapeError); }

TEST(Psnr, IdenticalIsInfinite) {
  const Image16 x(16, 16, 1234);
  EXPECT_TRUE(std::isinf(psnr(x, x)));
  EXPECT_GT(psnr(x, x), 0);
}

TEST(Psnr, ConstantOffset655) {
  const Image16 x(32, 32, 1000), y(32, 32, 1655);
  EXPECT_NEAR(psnr(x, y), 40.005, 1e-3);
  EXPECT_NEAR(psnr(x, y), 20.0 * std::log10(65535.0 / 655.0), 1e-9);
}

TEST(Psnr, Symmetric) {
  std::mt19937_64 rng(2);
  const Image16 x = oracle::random_image(rng, 20, 20), y = oracle::random_image(rng, 20, 20);
  EXPECT_EQ(psnr(x, y), psnr(y, x));
}

TEST(Psnr, DecreasesWithNoiseAmplitude) {
  std::mt19937_64 rng(3);
  const Image16 x = oracle::random_image(rng, 64, 64);
  const double p1 = psnr(x, add_noise(x, 100, 7));
  const double p2 = psnr(x, add_noise(x, 1000, 7));
  const double p3 = psnr(x, add_noise(x, 5000, 7));
  EXPECT_GT(p1, p2);
  EXPECT_GT(p2, p3);
}

TEST(Ssim, SelfIsOne) {
  std::mt19937_64 rng(4);
  const Image16 x = oracle::random_image(rng, 40, 30);
  EXPECT_NEAR(ssim(x, x), 1.0, 1e-9);
}

TEST(Ssim, ConstantBlackVersusWhite) {
  EXPECT_NEAR(ssim(Image16(16, 16, 0), Image16(16, 16, 65535)), 1.0e-4, 1e-6);
  EXPECT_NEAR(ssim(Image16(16, 16, 0), Image16(16, 16, 65535)), 1e-4 / (1.0 + 1e-4), 1e-12);
}

TEST(Ssim, SymmetricAndBounded) {
  std::mt19937_64 rng(5);
  const Image16 x = oracle::random_image(rng, 24, 24);
  const Image16 y = add_noise(x, 8000, 9);
  EXPECT_DOUBLE_EQ(ssim(x, y), ssim(y, x));
  EXPECT_LT(ssim(x, y), 1.0);
  EXPECT_GT(ssim(x, y), -1.0);
}

TEST(Ssim, MirrorInvariant) {
  std::mt19937_64 rng(6);
  const Image16 x = oracle::random_image(rng, 33, 21);
  const Image16 y = add_noise(x, 3000, 10);
  EXPECT_NEAR(ssim(mirror_horizontal(x), mirror_horizontal(y)), ssim(x, y), 1e-12);
}

TEST(Ssim, TooSmall) { EXPECT_THROW(ssim(Image16(10, 30), Image16(10, 30)), ShapeError); }

TEST(CompositeLoss, AllIdenticalIsZero) {
  std::mt19937_64 rng(7);
  const ImageF img = random_float(rng, 16, 16);
  const ParamMaps m = oracle::random_maps(rng, 2, 2, 8);
  const LossBreakdown l = composite_loss(img, img, m, m);
  EXPECT_EQ(l.total, 0.0);
}

TEST(CompositeLoss, TermIsolation) {
  std::mt19937_64 rng(8);
  const ImageF x = random_float(rng, 16, 16), y = random_float(rng, 16, 16);
  const ParamMaps m = oracle::random_maps(rng, 2, 2, 8);
  const LossBreakdown l = composite_loss(x, y, m, m);
  EXPECT_GT(l.image_term, 0.0);
  EXPECT_EQ(l.total, l.image_term);
  EXPECT_EQ(l.map_terms(), 0.0);
}

TEST(CompositeLoss, RecomposesFromIndependentTerms) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    const ImageF x = random_float(rng, 24, 16), y = random_float(rng, 24, 16);
    const ParamMaps p = oracle::random_maps(rng, 3, 2, 8), g = oracle::random_maps(rng, 3, 2, 8);
    const LossBreakdown l = composite_loss(x, y, p, g);
    double expected = oracle::mse(flat(x), flat(y));
    for (int c = 0; c < 4; ++c) expected += oracle::mse(flat(p.channel(c)), flat(g.channel(c)));
    EXPECT_NEAR(l.total, expected, 1e-12);
    EXPECT_GE(l.image_term, 0.0);
    EXPECT_GE(l.a_term, 0.0);
    EXPECT_GE(l.b_term, 0.0);
    EXPECT_GE(l.wc_term, 0.0);
    EXPECT_GE(l.ww_term, 0.0);
  }
}

TEST(CompositeLoss, ShapeMismatch) {
  const ImageF x(16, 16);
  EXPECT_THROW(composite_loss(x, x, ParamMaps::constant(2, 2, 8, {}), ParamMaps::constant(3, 2, 8, {})), ShapeError);
  EXPECT_THROW(composite_loss(x, ImageF(8, 16), ParamMaps::constant(2, 2, 8, {}), ParamMaps::constant(2, 2, 8, {})),
               ShapeError);
}
