#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <future>
#include <iomanip>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "xlut/metrics.hpp"
#include "xlut/nn/adam.hpp"
#include "xlut/nn/checkpoint.hpp"
#include "xlut/nn/model.hpp"
#include "xlut/objective.hpp"
#include "xlut/oracle_fit.hpp"
#include "xlut/remap.hpp"
#include "xlut/rng.hpp"
#include "xlut/synth.hpp"

namespace xlut {

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentConfig {
  bool enabled = true;
  double mirror_p = 0.5;
  double max_rotation_deg = 15.0;
  double max_shear = 0.1;
};

/// One draw of the joint geometric transform.
struct Transform {
  bool mirror = false;
  double rotation_deg = 0.0;
  double shear = 0.0;

  bool identity() const noexcept { return !mirror && rotation_deg == 0.0 && shear == 0.0; }
};

inline Transform draw_transform(std::uint64_t seed, const AugmentConfig& cfg) {
  Rng rng(seed);
  Transform t;
  t.mirror = rng.bernoulli(cfg.mirror_p);
  t.rotation_deg = rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg);
  t.shear = rng.uniform(-cfg.max_shear, cfg.max_shear);
  return t;
}

namespace detail {

/// Maps an output position (centred, full-resolution pixel units) to its
/// source position. Content is sheared, rotated, then mirrored.
struct InverseWarp {
  double m00 = 1, m01 = 0, m10 = 0, m11 = 1;
  bool mirror = false;

  explicit InverseWarp(const Transform& t) : mirror(t.mirror) {
    const double th = t.rotation_deg * std::numbers::pi / 180.0;
    const double c = std::cos(th), s = std::sin(th);
    // forward = R * [[1, k], [0, 1]]; inverse = [[1, -k], [0, 1]] * R^T
    const double k = t.shear;
    m00 = c + k * s;
    m01 = s - k * c;
    m10 = -s;
    m11 = c;
  }

  void operator()(double x, double y, double& sx, double& sy) const noexcept {
    if (mirror) x = -x;
    sx = m00 * x + m01 * y;
    sy = m10 * x + m11 * y;
  }
};

inline double snap(double v) noexcept {
  const double r = std::round(v);
  return std::abs(v - r) < 1e-9 ? r : v;
}

/// Bilinear sample. Out-of-frame positions clamp to the border when
/// `replicate` is set and return `fill` otherwise.
inline double sample_at(const Raster<double>& src, double x, double y, bool replicate, double fill) {
  const int w = src.width(), h = src.height();
  x = snap(x);
  y = snap(y);
  if (replicate) {
    x = std::clamp(x, 0.0, static_cast<double>(w - 1));
    y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  } else if (x < 0.0 || y < 0.0 || x > w - 1 || y > h - 1) {
    return fill;
  }
  const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
  const double fx = x - x0, fy = y - y0;
  if (fx == 0.0 && fy == 0.0) return src(x0, y0);
  const double top = (1.0 - fx) * src(x0, y0) + fx * src(x1, y0);
  const double bot = (1.0 - fx) * src(x0, y1) + fx * src(x1, y1);
  return (1.0 - fy) * top + fy * bot;
}

}  // namespace detail

/// Applies `t` to the input image and the four ground-truth planes with one
/// shared geometry, then recomputes gt_img from the warped pair so the
/// sample invariant holds exactly.
inline Sample apply_transform(const Sample& sample, const Transform& t) {
  if (t.identity()) return sample;
  const detail::InverseWarp warp(t);
  const int w = sample.input.width(), h = sample.input.height();
  const double cx = 0.5 * (w - 1), cy = 0.5 * (h - 1);

  Raster<double> src(w, h);
  for (std::size_t i = 0; i < src.size(); ++i) src.pixels()[i] = sample.input.pixels()[i];
  Image16 input(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double sx, sy;
      warp(x - cx, y - cy, sx, sy);
      const double v = detail::sample_at(src, sx + cx, sy + cy, true, 0.0);
      input(x, y) = static_cast<std::uint16_t>(std::clamp(std::round(v), 0.0, kMaxIntensityF));
    }
  }

  const ParamMaps& gm = sample.gt_maps;
  const int mw = gm.map_w(), mh = gm.map_h(), s = gm.downscale;
  // Full-resolution pixels per map index step (edge-aligned upsampling).
  const double kx = mw > 1 ? static_cast<double>(mw * s - 1) / (mw - 1) : 1.0;
  const double ky = mh > 1 ? static_cast<double>(mh * s - 1) / (mh - 1) : 1.0;
  const double mcx = 0.5 * (mw - 1), mcy = 0.5 * (mh - 1);
  static constexpr std::array<ChannelRange, 4> ranges{kRangeA, kRangeB, kRangeWc, kRangeWw};
  const RemapParams id;
  const double fills[4] = {id.a, id.b, id.wc, id.ww};

  ParamMaps maps;
  maps.downscale = s;
  for (int c = 0; c < 4; ++c) {
    const Plane& plane = gm.channel(c);
    Raster<double> p(mw, mh);
    for (std::size_t i = 0; i < p.size(); ++i) p.pixels()[i] = plane.pixels()[i];
    Plane out(mw, mh);
    for (int y = 0; y < mh; ++y) {
      for (int x = 0; x < mw; ++x) {
        double sx, sy;
        warp((x - mcx) * kx, (y - mcy) * ky, sx, sy);
        const double v = detail::sample_at(p, sx / kx + mcx, sy / ky + mcy, false, fills[c]);
        out(x, y) = static_cast<float>(ranges[static_cast<std::size_t>(c)].clamp(v));
      }
    }
    maps.channel(c) = std::move(out);
  }

  Sample res = make_sample_with_maps(sample.seed, input, std::move(maps));
  res.meta = sample.meta;
  return res;
}

/// Random mirror / rotation / shear drawn from `seed`, applied jointly.
inline Sample augment(const Sample& sample, std::uint64_t seed, const AugmentConfig& cfg = {}) {
  if (!cfg.enabled) return sample;
  return apply_transform(sample, draw_transform(seed, cfg));
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  double lr = 1e-5;
  int epochs_max = 100;
  int patience = 10;
  double min_delta = 1e-6;
  std::uint64_t seed = 0;
  int downscale = 8;
  int levels = 3;
  int features = 32;
  AugmentConfig augment;

  void validate() const {
    if (!(lr > 0.0)) throw InvariantError("TrainConfig: lr must be > 0");
    if (patience < 1) throw InvariantError("TrainConfig: patience must be >= 1");
    if (epochs_max < 1) throw InvariantError("TrainConfig: epochs_max must be >= 1");
  }

  nn::ModelConfig model_config() const {
    nn::ModelConfig c;
    c.levels = levels;
    c.features = features;
    c.downscale = downscale;
    return c;
  }
};

struct HistoryRow {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;

  friend bool operator==(const HistoryRow&, const HistoryRow&) = default;
};

struct TrainResult {
  nn::Checkpoint best;
  std::vector<HistoryRow> history;
  int best_epoch = 0;                // 0 = the initialization was never beaten
  LossBreakdown initial_val;         // validation loss before the first step
  LossBreakdown best_val;
};

/// Saturated or non-finite head outputs (a or ww at 0) only occur once the
/// weights have blown up.
inline void check_prediction(const nn::Tensor& maps, const std::string& where) {
  const auto& sh = maps.shape();
  for (int y = 0; y < sh.h; ++y) {
    for (int x = 0; x < sh.w; ++x) {
      bool ok = maps.at(0, 0, y, x) > 0.0 && maps.at(0, 3, y, x) > 0.0;
      for (int c = 0; c < 4; ++c) ok = ok && std::isfinite(maps.at(0, c, y, x));
      if (!ok) throw DivergenceError("training diverged: degenerate model output " + where);
    }
  }
}

/// Mean five-term loss of `model` over `set`, without augmentation.
inline LossBreakdown mean_loss(const nn::Model& model, const std::vector<Sample>& set) {
  if (set.empty()) throw InvariantError("mean_loss: empty set");
  const int s = model.config().downscale;
  LossBreakdown acc;
  for (const Sample& smp : set) {
    const nn::Prediction p = model.forward(downsample_to_map_grid(smp.input, s));
    check_prediction(p.maps, "on evaluation set");
    acc += training_objective(p.maps, normalize(smp.input), normalize(smp.gt_img), smp.gt_maps, s, false).loss;
  }
  acc /= static_cast<double>(set.size());
  return acc;
}

inline void check_downscale(const std::vector<Sample>& set, int downscale, const char* what) {
  for (const Sample& s : set) {
    if (s.gt_maps.downscale != downscale) {
      throw ShapeError(std::string(what) + ": sample downscale " + std::to_string(s.gt_maps.downscale) +
                       " does not match model downscale " + std::to_string(downscale));
    }
  }
}

/// Called after each epoch; return false to stop early.
using EpochCallback = std::function<bool(const HistoryRow&)>;

/// Batch-1 Adam on the five-term loss with patience-based early stopping on
/// the mean validation loss. Returns the best-validation checkpoint.
inline TrainResult train(const TrainConfig& tc, const std::vector<Sample>& train_set,
                         const std::vector<Sample>& val_set, const EpochCallback& on_epoch = {}) {
  tc.validate();
  if (train_set.empty() || val_set.empty()) throw InvariantError("train: training and validation sets must be non-empty");
  check_downscale(train_set, tc.downscale, "train");
  check_downscale(val_set, tc.downscale, "train");

  nn::Model model(tc.model_config(), derive_seed(tc.seed, 1));
  nn::AdamState opt;
  nn::AdamConfig acfg;
  acfg.lr = tc.lr;

  TrainResult res;
  res.initial_val = mean_loss(model, val_set);
  res.best_val = res.initial_val;
  res.best = nn::make_checkpoint(model, opt);
  double best = res.initial_val.total;
  int stale = 0;

  std::vector<std::size_t> order(train_set.size());
  for (int epoch = 1; epoch <= tc.epochs_max; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle(derive_seed(tc.seed, 1000 + static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle() % i]);

    double epoch_loss = 0.0;
    for (std::size_t k = 0; k < order.size(); ++k) {
      const std::uint64_t aug_seed =
          derive_seed(tc.seed, (static_cast<std::uint64_t>(epoch) << 32) | static_cast<std::uint64_t>(k));
      const Sample smp = augment(train_set[order[k]], aug_seed, tc.augment);
      const nn::Prediction p = model.forward(downsample_to_map_grid(smp.input, tc.downscale));
      check_prediction(p.maps, "at epoch " + std::to_string(epoch) + ", step " + std::to_string(k));
      const ObjectiveResult obj =
          training_objective(p.maps, normalize(smp.input), normalize(smp.gt_img), smp.gt_maps, tc.downscale, true);
      if (!std::isfinite(obj.loss.total)) {
        throw DivergenceError("training diverged: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                              std::to_string(k) + " (lr " + std::to_string(tc.lr) + ")");
      }
      epoch_loss += obj.loss.total;
      model.zero_grad();
      model.backward(p.cache, obj.dmaps);
      nn::adam_step(model.parameters(), opt, acfg);
      model.snap_to_float();
    }

    const LossBreakdown val = mean_loss(model, val_set);
    if (!std::isfinite(val.total)) {
      throw DivergenceError("training diverged: non-finite validation loss at epoch " + std::to_string(epoch));
    }
    const HistoryRow row{epoch, epoch_loss / static_cast<double>(order.size()), val.total};
    res.history.push_back(row);
    if (val.total < best - tc.min_delta) {
      best = val.total;
      stale = 0;
      res.best_epoch = epoch;
      res.best_val = val;
      res.best = nn::make_checkpoint(model, opt);
    } else if (++stale >= tc.patience) {
      break;
    }
    if (on_epoch && !on_epoch(row)) break;
  }
  return res;
}

inline std::string format_history(const std::vector<HistoryRow>& history) {
  std::ostringstream os;
  os << "epoch\ttrain_loss\tval_loss\n";
  os << std::setprecision(17);
  for (const auto& r : history) os << r.epoch << '\t' << r.train_loss << '\t' << r.val_loss << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Evaluation reports

struct EvalRow {
  std::string id;
  double psnr_db = 0.0;
  double ssim = 0.0;
  double seconds = 0.0;
};

struct EvalReport {
  std::string model_id;
  int downscale = 0;
  std::vector<EvalRow> rows;
  std::vector<std::string> skipped;  // ids excluded from the means
  double mean_psnr_db = 0.0;
  double mean_ssim = 0.0;
  double mean_seconds = 0.0;

  void recompute_means() {
    mean_psnr_db = mean_ssim = mean_seconds = 0.0;
    if (rows.empty()) return;
    for (const auto& r : rows) {
      mean_psnr_db += r.psnr_db;
      mean_ssim += r.ssim;
      mean_seconds += r.seconds;
    }
    const double n = static_cast<double>(rows.size());
    mean_psnr_db /= n;
    mean_ssim /= n;
    mean_seconds /= n;
  }
};

/// Equality of everything except wall-clock fields.
inline bool same_results(const EvalReport& x, const EvalReport& y) {
  if (x.model_id != y.model_id || x.downscale != y.downscale || x.skipped != y.skipped ||
      x.rows.size() != y.rows.size()) {
    return false;
  }
  auto same = [](double p, double q) { return p == q || (std::isnan(p) && std::isnan(q)); };
  for (std::size_t i = 0; i < x.rows.size(); ++i) {
    if (x.rows[i].id != y.rows[i].id || !same(x.rows[i].psnr_db, y.rows[i].psnr_db) ||
        !same(x.rows[i].ssim, y.rows[i].ssim)) {
      return false;
    }
  }
  return same(x.mean_psnr_db, y.mean_psnr_db) && same(x.mean_ssim, y.mean_ssim);
}

inline std::string sample_id(const Sample& s) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << s.seed;
  return os.str();
}

namespace detail {

inline std::string format_real(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

inline double parse_real(const std::string& s) {
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw FormatError("report: bad number '" + s + "'");
  }
  if (used != s.size()) throw FormatError("report: bad number '" + s + "'");
  return v;
}

template <typename Fn>
EvalReport timed_report(const std::string& model_id, int downscale, const std::vector<Sample>& set, Fn&& predict) {
  EvalReport rep;
  rep.model_id = model_id;
  rep.downscale = downscale;
  for (const Sample& s : set) {
    const auto t0 = std::chrono::steady_clock::now();
    std::optional<Image16> out = predict(s);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!out) {
      rep.skipped.push_back(sample_id(s));
      continue;
    }
    rep.rows.push_back({sample_id(s), psnr(*out, s.gt_img), ssim(*out, s.gt_img), secs});
  }
  rep.recompute_means();
  return rep;
}

}  // namespace detail

/// Header line, then one tab-separated row per image: id, psnr_db, ssim,
/// seconds, then one "skip<TAB>id" line per excluded image. Infinite PSNR is
/// written as "inf".
inline std::string format_report(const EvalReport& r) {
  if (r.model_id.empty() || r.model_id.find_first_of(" \t\n") != std::string::npos) {
    throw InvariantError("report: model id must be a non-empty token");
  }
  std::ostringstream os;
  os << "report model_id=" << r.model_id << " downscale=" << r.downscale << " images=" << r.rows.size()
     << " skipped=" << r.skipped.size() << " mean_psnr_db=" << detail::format_real(r.mean_psnr_db)
     << " mean_ssim=" << detail::format_real(r.mean_ssim) << " mean_seconds=" << detail::format_real(r.mean_seconds)
     << '\n';
  for (const auto& row : r.rows) {
    os << row.id << '\t' << detail::format_real(row.psnr_db) << '\t' << detail::format_real(row.ssim) << '\t'
       << detail::format_real(row.seconds) << '\n';
  }
  for (const auto& id : r.skipped) os << "skip\t" << id << '\n';
  return os.str();
}

/// Parses one or more concatenated reports.
inline std::vector<EvalReport> parse_reports(const std::string& text) {
  std::vector<EvalReport> out;
  std::istringstream in(text);
  std::string line;
  std::size_t expected = 0, expected_skipped = 0;
  auto check_counts = [&] {
    if (!out.empty() && (out.back().rows.size() != expected || out.back().skipped.size() != expected_skipped)) {
      throw FormatError("report: row count mismatch");
    }
  };
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.rfind("report ", 0) == 0) {
      check_counts();
      EvalReport r;
      std::istringstream fields(line.substr(7));
      std::string kv;
      while (fields >> kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw FormatError("report: bad header field '" + kv + "'");
        const std::string k = kv.substr(0, eq), v = kv.substr(eq + 1);
        if (k == "model_id") r.model_id = v;
        else if (k == "downscale") r.downscale = static_cast<int>(detail::parse_real(v));
        else if (k == "images") expected = static_cast<std::size_t>(detail::parse_real(v));
        else if (k == "skipped") expected_skipped = static_cast<std::size_t>(detail::parse_real(v));
        else if (k == "mean_psnr_db") r.mean_psnr_db = detail::parse_real(v);
        else if (k == "mean_ssim") r.mean_ssim = detail::parse_real(v);
        else if (k == "mean_seconds") r.mean_seconds = detail::parse_real(v);
        else throw FormatError("report: unknown header field '" + k + "'");
      }
      out.push_back(std::move(r));
      continue;
    }
    if (out.empty()) throw FormatError("report: row before header");
    if (line.rfind("skip\t", 0) == 0) {
      out.back().skipped.push_back(line.substr(5));
      continue;
    }
    std::istringstream fields(line);
    std::string id, p, s, t;
    if (!std::getline(fields, id, '\t') || !std::getline(fields, p, '\t') || !std::getline(fields, s, '\t') ||
        !std::getline(fields, t)) {
      throw FormatError("report: malformed row '" + line + "'");
    }
    out.back().rows.push_back({id, detail::parse_real(p), detail::parse_real(s), detail::parse_real(t)});
  }
  check_counts();
  return out;
}

/// Full pipeline per test image (downsample, predict, upsample, remap),
/// scored against gt_img.
inline EvalReport evaluate(const nn::Model& model, const std::vector<Sample>& test_set,
                           const std::string& model_id = "model") {
  const int s = model.config().downscale;
  check_downscale(test_set, s, "evaluate");
  return detail::timed_report(model_id, s, test_set,
                              [&](const Sample& smp) -> std::optional<Image16> { return enhance(model, smp.input).image; });
}

inline EvalReport evaluate(const nn::Checkpoint& ck, const std::vector<Sample>& test_set,
                           const std::string& model_id = "model") {
  return evaluate(nn::model_from_checkpoint(ck), test_set, model_id);
}

/// Output = input.
inline EvalReport identity_baseline(const std::vector<Sample>& test_set) {
  const int s = test_set.empty() ? 0 : test_set.front().gt_maps.downscale;
  return detail::timed_report("identity", s, test_set, [](const Sample& smp) -> std::optional<Image16> { return smp.input; });
}

/// Best scalar window per image, fitted against its ground truth. Images
/// with a constant target are skipped.
inline EvalReport baseline_global(const std::vector<Sample>& test_set) {
  if (test_set.empty()) throw InvariantError("baseline_global: empty set");
  return detail::timed_report("baseline_global", test_set.front().gt_maps.downscale, test_set,
                              [](const Sample& smp) -> std::optional<Image16> {
                                try {
                                  return apply_global(smp.input, fit_global(smp.input, smp.gt_img).params);
                                } catch (const DegenerateInputError&) {
                                  return std::nullopt;
                                }
                              });
}

// ---------------------------------------------------------------------------
// Downscale study

struct DatasetSpec {
  std::uint64_t seed = 0;
  int train = 64;
  int val = 8;
  int test = 8;
  int width = 64;
  int height = 64;
};

struct Splits {
  std::vector<Sample> train, val, test;
};

inline Splits make_splits(const DatasetSpec& d, int downscale) {
  return {make_dataset(derive_seed(d.seed, 0), d.train, d.width, d.height, downscale),
          make_dataset(derive_seed(d.seed, 1), d.val, d.width, d.height, downscale),
          make_dataset(derive_seed(d.seed, 2), d.test, d.width, d.height, downscale)};
}

struct StudyEntry {
  int downscale = 0;
  EvalReport model;
  EvalReport identity;
  TrainResult training;
};

/// One model per factor under the same seed; datasets are regenerated per
/// factor so map sizes match. Factors train on separate threads; each run
/// is self-contained, so results do not depend on scheduling.
inline std::vector<StudyEntry> compare_downscales(const TrainConfig& tc, const std::vector<int>& factors,
                                                  const DatasetSpec& data) {
  std::vector<std::future<StudyEntry>> jobs;
  for (int s : factors) {
    jobs.push_back(std::async(std::launch::async, [tc, s, data] {
      TrainConfig c = tc;
      c.downscale = s;
      const Splits sp = make_splits(data, s);
      StudyEntry e;
      e.downscale = s;
      e.training = train(c, sp.train, sp.val);
      e.model = evaluate(e.training.best, sp.test, "downscale" + std::to_string(s));
      e.identity = identity_baseline(sp.test);
      return e;
    }));
  }
  std::vector<StudyEntry> out;
  for (auto& j : jobs) out.push_back(j.get());
  return out;
}

inline std::string format_study(const std::vector<StudyEntry>& study) {
  std::string out;
  for (const auto& e : study) out += format_report(e.model);
  return out;
}

}  // namespace xlut
