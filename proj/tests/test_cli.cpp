#include <gmock/gmock.h>
#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "oracles.hpp"
#include "xlut/cli.hpp"

using namespace xlut;
using ::testing::HasSubstr;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "xlut");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

}  // namespace

TEST(Cli, SynthWritesReadableSamples) {
  oracle::TempDir dir("cli-synth");
  const Outcome r = run({"synth", "--count", "3", "--size", "48x32", "--downscale", "8", "--seed", "4", "--out",
                     dir.path().string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto set = read_dataset(dir.path());
  ASSERT_EQ(set.size(), 3u);
  const auto ref = make_dataset(4, 3, 48, 32, 8);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(set[i].input, ref[i].input);
    EXPECT_EQ(set[i].gt_img, ref[i].gt_img);
    EXPECT_EQ(set[i].gt_maps.map_w(), 6);
    EXPECT_EQ(set[i].gt_maps.map_h(), 4);
  }
}

TEST(Cli, RemapMatchesScalarReference) {
  oracle::TempDir dir("cli-remap");
  std::mt19937_64 rng(21);
  const Image16 img = oracle::random_image(rng, 37, 29);
  const ParamMaps maps = oracle::random_maps(rng, map_extent(37, 8), map_extent(29, 8), 8);
  write_pgm(img, dir / "in.pgm");
  write_maps(maps, dir / "m.xlutmaps");
  const Outcome r = run({"remap", "--input", (dir / "in.pgm").string(), "--maps", (dir / "m.xlutmaps").string(), "--out",
                     (dir / "out.pgm").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const Image16 out = read_pgm(dir / "out.pgm");
  const auto ref = oracle::apply_maps(img, maps);
  for (std::size_t i = 0; i < ref.size(); ++i) ASSERT_LE(std::abs(out.pixels()[i] - ref[i]), 1) << i;
}

TEST(Cli, FitGlobalRecoversWindow) {
  oracle::TempDir dir("cli-fit");
  Image16 in(64, 64);
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) in(x, y) = static_cast<std::uint16_t>(6000 + 800 * x + 100 * y);
  }
  const Image16 tgt = apply_global(in, GlobalParams{0.4, 0.6});
  write_pgm(in, dir / "in.pgm");
  write_pgm(tgt, dir / "t.pgm");
  const Outcome r = run({"fit", "--input", (dir / "in.pgm").string(), "--target", (dir / "t.pgm").string(), "--mode",
                     "global", "--out", (dir / "m.xlutmaps").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  double wc = 0, ww = 0;
  ASSERT_EQ(std::sscanf(r.out.c_str(), "wc %lf ww %lf", &wc, &ww), 2) << r.out;
  EXPECT_NEAR(wc, 0.4, 0.01);
  EXPECT_NEAR(ww, 0.6, 0.01);
  const ParamMaps m = read_maps(dir / "m.xlutmaps");
  EXPECT_EQ(m.map_w(), 8);
  EXPECT_FLOAT_EQ(m.wc(3, 3), static_cast<float>(wc));
}

TEST(Cli, FitTilesNeedsTileSize) {
  oracle::TempDir dir("cli-tiles");
  const Sample s = make_sample(1, 32, 32, 8);
  write_pgm(s.input, dir / "in.pgm");
  write_pgm(s.gt_img, dir / "t.pgm");
  std::vector<std::string> args = {"fit", "--input", (dir / "in.pgm").string(), "--target", (dir / "t.pgm").string(),
                                   "--mode", "tiles", "--out", (dir / "m.xlutmaps").string()};
  const Outcome bad = run(args);
  EXPECT_EQ(bad.code, 1);
  EXPECT_THAT(bad.err, HasSubstr("--tile"));
  args.insert(args.end(), {"--tile", "8"});
  ASSERT_EQ(run(args).code, 0);
  EXPECT_EQ(read_maps(dir / "m.xlutmaps").map_w(), 4);
}

TEST(Cli, TrainEnhanceEvalPipeline) {
  oracle::TempDir dir("cli-train");
  const std::string tr = (dir / "train").string(), va = (dir / "val").string();
  ASSERT_EQ(run({"synth", "--count", "2", "--size", "32x32", "--downscale", "8", "--seed", "1", "--out", tr}).code, 0);
  ASSERT_EQ(run({"synth", "--count", "1", "--size", "32x32", "--downscale", "8", "--seed", "2", "--out", va}).code, 0);
  const std::string ck = (dir / "m.ckpt").string();
  const Outcome t = run({"train", "--data", tr, "--val", va, "--downscale", "8", "--levels", "2", "--features", "4",
                     "--epochs", "2", "--ckpt", ck, "--history", (dir / "h.tsv").string(), "--no-augment"});
  ASSERT_EQ(t.code, 0) << t.err;
  EXPECT_THAT(t.out, HasSubstr("epoch 2"));
  EXPECT_TRUE(std::filesystem::exists(dir / "h.tsv"));

  const std::string in = va + "/sample-0000/input.pgm";
  ASSERT_EQ(run({"enhance", "--ckpt", ck, "--input", in, "--out", (dir / "e.pgm").string(), "--maps-out",
                 (dir / "e.xlutmaps").string()})
                .code,
            0);
  const Image16 enhanced = read_pgm(dir / "e.pgm");
  EXPECT_EQ(enhanced, apply_maps(read_pgm(in), read_maps(dir / "e.xlutmaps")));

  const Outcome e = run({"eval", "--ckpt", ck, "--data", va, "--report", (dir / "r.txt").string(), "--identity",
                     "--baseline-global"});
  ASSERT_EQ(e.code, 0) << e.err;
  const auto bytes = read_file(dir / "r.txt");
  const auto reports = parse_reports(std::string(bytes.begin(), bytes.end()));
  ASSERT_EQ(reports.size(), 3u);
  EXPECT_EQ(reports[0].model_id, "m");
  EXPECT_EQ(reports[1].model_id, "baseline_global");
  EXPECT_EQ(reports[2].model_id, "identity");
}

TEST(Cli, GradcheckPasses) {
  const Outcome r = run({"gradcheck", "--seed", "1"});
  EXPECT_EQ(r.code, 0) << r.out << r.err;
  EXPECT_THAT(r.out, HasSubstr("max relative error"));
}

TEST(Cli, BadFlagsFail) {
  EXPECT_NE(run({}).code, 0);
  EXPECT_NE(run({"nosuch"}).code, 0);
  EXPECT_NE(run({"synth", "--count", "0", "--size", "8x8", "--downscale", "8", "--seed", "1", "--out", "/tmp/x"}).code,
            0);
  EXPECT_NE(run({"synth", "--count", "1", "--size", "8by8", "--downscale", "8", "--seed", "1", "--out", "/tmp/x"}).code,
            0);
  EXPECT_NE(run({"fit", "--input", "a", "--target", "b", "--mode", "sideways", "--out", "c"}).code, 0);
  EXPECT_NE(run({"eval", "--data", "/nonexistent", "--report", "/tmp/r"}).code, 0);
}

TEST(Cli, MissingFilesFail) {
  const Outcome r = run({"remap", "--input", "/nonexistent/in.pgm", "--maps", "/nonexistent/m", "--out", "/tmp/o.pgm"});
  EXPECT_EQ(r.code, 1);
  EXPECT_THAT(r.err, HasSubstr("does not exist"));
  EXPECT_EQ(run({"enhance", "--ckpt", "/nonexistent/c", "--input", "x", "--out", "y"}).code, 1);
}

TEST(Cli, ServeWithoutHookFails) {
  const Outcome r = run({"serve", "--port", "0", "--data", "/tmp/xlut-none"});
  EXPECT_EQ(r.code, 1);
  EXPECT_THAT(r.err, HasSubstr("serve"));
}

TEST(Cli, HelpExitsZero) { EXPECT_EQ(run({"--help"}).code, 0); }
