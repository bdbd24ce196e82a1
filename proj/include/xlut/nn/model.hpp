#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "xlut/image_io.hpp"
#include "xlut/nn/layers.hpp"
#include "xlut/nn/tensor.hpp"
#include "xlut/remap.hpp"
#include "xlut/resample.hpp"
#include "xlut/rng.hpp"

namespace xlut::nn {

struct ModelConfig {
  int levels = 3;
  int features = 32;
  int downscale = 8;
  double leaky_slope = 0.01;
  double a_max = 4.0;
  double b_span = 1.0;
  double ww_min = kWwMin;
  double ww_max = 4.0;

  void validate() const {
    if (levels < 2) throw InvariantError("ModelConfig: levels must be >= 2");
    if (features < 1) throw InvariantError("ModelConfig: features must be >= 1");
    if (downscale < 1) throw InvariantError("ModelConfig: downscale must be >= 1");
    if (!(a_max > 0.0) || !(b_span > 0.0) || b_span > 1.0 || ww_min < kWwMin || !(ww_max > ww_min)) {
      throw InvariantError("ModelConfig: invalid activation ranges");
    }
  }

  /// Network input sides are padded to a multiple of this.
  int size_multiple() const noexcept { return 1 << (levels - 1); }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

namespace detail {

inline constexpr std::size_t kNoBias = static_cast<std::size_t>(-1);

struct ConvRef {
  std::size_t weight = 0;
  std::size_t bias = kNoBias;
  int stride = 1;
};

struct NormRef {
  std::size_t gamma = 0;
  std::size_t beta = 0;
};

struct ResBlockRef {
  NormRef norm[3];
  ConvRef conv[3];
};

struct LevelCache {
  ResBlockCache block;
  Tensor down_in;      // encoder: input of the stride-2 conv
  Tensor up_in;        // decoder: upsampled tensor fed to the up conv
  Shape up_src_shape;  // decoder: shape before upsampling
  Tensor fuse_in;      // decoder: concatenation
  int up_channels = 0;
};

}  // namespace detail

/// Everything the reverse pass needs from one forward evaluation.
struct ForwardCache {
  std::uint64_t generation = 0;
  int out_h = 0;
  int out_w = 0;
  Tensor stem_in;
  std::vector<detail::LevelCache> encoder;
  std::vector<detail::LevelCache> decoder;
  Tensor head_in;
  Tensor head_out;  // pre-activations z, padded extent
};

/// Activated map channels (1 x 4 x map_h x map_w) plus the reverse-pass cache.
struct Prediction {
  Tensor maps;
  ForwardCache cache;

  /// Converts to stored 32-bit planes, clamped into the authored ranges.
  ParamMaps param_maps(int downscale) const {
    const Shape& s = maps.shape();
    ParamMaps out;
    out.downscale = downscale;
    static constexpr std::array<ChannelRange, 4> ranges{kRangeA, kRangeB, kRangeWc, kRangeWw};
    for (int c = 0; c < 4; ++c) {
      Plane p(s.w, s.h);
      for (int y = 0; y < s.h; ++y) {
        for (int x = 0; x < s.w; ++x) {
          p(x, y) = static_cast<float>(ranges[static_cast<std::size_t>(c)].clamp(maps.at(0, c, y, x)));
        }
      }
      out.channel(c) = std::move(p);
    }
    return out;
  }
};

inline double sigmoid(double z) noexcept { return 1.0 / (1.0 + std::exp(-z)); }

/// Residual encoder-decoder predicting per-pixel (a, b, wc, ww) maps from a
/// low-resolution normalized image.
///
/// stem 3x3 1->F; encoder level: res block, then stride-2 3x3 conv (all but
/// the deepest); decoder level: nearest x2 + 3x3 conv, concat skip (2F),
/// 1x1 conv 2F->F, res block; head 1x1 F->4 with range activations
///   a = a_max*sigmoid, b = b_span*tanh, wc = sigmoid,
///   ww = ww_min + (ww_max - ww_min)*sigmoid.
class Model {
 public:
  static constexpr double kHeadGain = 0.01;

  explicit Model(const ModelConfig& config, std::uint64_t seed = 0) : config_(config) {
    config_.validate();
    build();
    initialize(seed);
  }

  const ModelConfig& config() const noexcept { return config_; }

  std::span<const NamedTensor> parameters() const noexcept { return params_; }
  /// Mutable access invalidates outstanding forward caches.
  std::span<NamedTensor> parameters() noexcept {
    ++generation_;
    return params_;
  }

  std::size_t parameter_count() const noexcept {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  /// Rounds every parameter to the nearest float so that 32-bit checkpoints
  /// reproduce forward outputs exactly.
  void snap_to_float() {
    for (auto& p : params_) {
      for (double& v : p.tensor.data()) v = static_cast<double>(static_cast<float>(v));
    }
    ++generation_;
  }

  Prediction forward(const ImageF& low) const {
    const int m = config_.size_multiple();
    const int pw = (low.width() + m - 1) / m * m;
    const int ph = (low.height() + m - 1) / m * m;
    const ImageF padded = reflect_pad(low, pw, ph);

    Prediction pred;
    ForwardCache& cache = pred.cache;
    cache.generation = generation_;
    cache.out_h = low.height();
    cache.out_w = low.width();
    cache.stem_in = Tensor(Shape{1, 1, ph, pw});
    std::copy(padded.pixels().begin(), padded.pixels().end(), cache.stem_in.data().begin());

    const int levels = config_.levels;
    cache.encoder.resize(static_cast<std::size_t>(levels));
    cache.decoder.resize(static_cast<std::size_t>(levels - 1));

    Tensor h = conv(stem_, cache.stem_in);
    std::vector<Tensor> skips(static_cast<std::size_t>(levels));
    for (int l = 0; l < levels; ++l) {
      auto& lc = cache.encoder[static_cast<std::size_t>(l)];
      Tensor e = res_block(encoder_[static_cast<std::size_t>(l)], h, lc.block);
      if (l < levels - 1) {
        lc.down_in = e;
        h = conv(down_[static_cast<std::size_t>(l)], e);
        skips[static_cast<std::size_t>(l)] = std::move(e);
      } else {
        h = std::move(e);
      }
    }
    for (int l = levels - 2; l >= 0; --l) {
      auto& lc = cache.decoder[static_cast<std::size_t>(l)];
      const Tensor& skip = skips[static_cast<std::size_t>(l)];
      lc.up_src_shape = h.shape();
      lc.up_in = upsample_nearest2x(h, skip.shape().h, skip.shape().w);
      Tensor u = conv(up_[static_cast<std::size_t>(l)], lc.up_in);
      lc.up_channels = u.shape().c;
      lc.fuse_in = concat_channels(u, skip);
      Tensor f = conv(fuse_[static_cast<std::size_t>(l)], lc.fuse_in);
      h = res_block(decoder_[static_cast<std::size_t>(l)], f, lc.block);
    }
    cache.head_in = h;
    cache.head_out = conv(head_, h);

    pred.maps = Tensor(Shape{1, 4, cache.out_h, cache.out_w});
    for (int c = 0; c < 4; ++c) {
      for (int y = 0; y < cache.out_h; ++y) {
        for (int x = 0; x < cache.out_w; ++x) pred.maps.at(0, c, y, x) = activate(c, cache.head_out.at(0, c, y, x));
      }
    }
    return pred;
  }

  /// Accumulates parameter gradients for upstream gradients on the activated
  /// map channels (same shape as Prediction::maps).
  void backward(const ForwardCache& cache, const Tensor& dmaps) {
    if (cache.generation != generation_) throw InvariantError("backward: stale forward cache");
    require_shape(dmaps, Shape{1, 4, cache.out_h, cache.out_w}, "backward upstream");
    for (auto& p : params_) {
      if (!p.tensor.has_grad()) p.tensor.zero_grad();
    }

    Tensor dz(cache.head_out.shape());
    for (int c = 0; c < 4; ++c) {
      for (int y = 0; y < cache.out_h; ++y) {
        for (int x = 0; x < cache.out_w; ++x) {
          dz.at(0, c, y, x) = dmaps.at(0, c, y, x) * activation_slope(c, cache.head_out.at(0, c, y, x));
        }
      }
    }
    Tensor dh = conv_backward(head_, cache.head_in, dz);

    const int levels = config_.levels;
    std::vector<Tensor> dskips(static_cast<std::size_t>(levels));
    for (int l = 0; l <= levels - 2; ++l) {
      const auto& lc = cache.decoder[static_cast<std::size_t>(l)];
      Tensor df = res_block_backward(decoder_[static_cast<std::size_t>(l)], lc.block, dh);
      Tensor dcat = conv_backward(fuse_[static_cast<std::size_t>(l)], lc.fuse_in, df);
      auto [du, dskip] = split_channels(dcat, lc.up_channels);
      dskips[static_cast<std::size_t>(l)] = std::move(dskip);
      Tensor dup = conv_backward(up_[static_cast<std::size_t>(l)], lc.up_in, du);
      dh = upsample_nearest2x_backward(lc.up_src_shape, dup);
    }
    for (int l = levels - 1; l >= 0; --l) {
      const auto& lc = cache.encoder[static_cast<std::size_t>(l)];
      if (l < levels - 1) add_inplace(dh, dskips[static_cast<std::size_t>(l)]);
      Tensor din = res_block_backward(encoder_[static_cast<std::size_t>(l)], lc.block, dh);
      if (l > 0) {
        dh = conv_backward(down_[static_cast<std::size_t>(l - 1)], cache.encoder[static_cast<std::size_t>(l - 1)].down_in, din);
      } else {
        conv_backward(stem_, cache.stem_in, din);
      }
    }
  }

 private:
  double activate(int channel, double z) const noexcept {
    switch (channel) {
      case 0: return config_.a_max * sigmoid(z);
      case 1: return config_.b_span * std::tanh(z);
      case 2: return sigmoid(z);
      default: return config_.ww_min + (config_.ww_max - config_.ww_min) * sigmoid(z);
    }
  }

  double activation_slope(int channel, double z) const noexcept {
    const double s = sigmoid(z);
    switch (channel) {
      case 0: return config_.a_max * s * (1.0 - s);
      case 1: {
        const double t = std::tanh(z);
        return config_.b_span * (1.0 - t * t);
      }
      case 2: return s * (1.0 - s);
      default: return (config_.ww_max - config_.ww_min) * s * (1.0 - s);
    }
  }

  std::size_t add_param(std::string name, Shape shape) {
    params_.push_back({std::move(name), Tensor(shape)});
    return params_.size() - 1;
  }

  detail::ConvRef add_conv(const std::string& name, int in_c, int out_c, int k, int stride, bool bias = true) {
    detail::ConvRef ref;
    ref.weight = add_param(name + ".weight", Shape{out_c, in_c, k, k});
    if (bias) ref.bias = add_param(name + ".bias", Shape{1, out_c, 1, 1});
    ref.stride = stride;
    return ref;
  }

  detail::ResBlockRef add_res_block(const std::string& name) {
    const int f = config_.features;
    detail::ResBlockRef ref;
    for (int i = 0; i < 3; ++i) {
      const std::string n = name + ".norm" + std::to_string(i + 1);
      ref.norm[i].gamma = add_param(n + ".gamma", Shape{1, f, 1, 1});
      ref.norm[i].beta = add_param(n + ".beta", Shape{1, f, 1, 1});
      ref.conv[i] = add_conv(name + ".conv" + std::to_string(i + 1), f, f, 3, 1, i == 2);
    }
    return ref;
  }

  void build() {
    const int f = config_.features;
    const int levels = config_.levels;
    stem_ = add_conv("stem", 1, f, 3, 1);
    for (int l = 0; l < levels; ++l) {
      encoder_.push_back(add_res_block("enc" + std::to_string(l)));
      if (l < levels - 1) down_.push_back(add_conv("down" + std::to_string(l), f, f, 3, 2));
    }
    up_.resize(static_cast<std::size_t>(levels - 1));
    fuse_.resize(static_cast<std::size_t>(levels - 1));
    decoder_.resize(static_cast<std::size_t>(levels - 1));
    for (int l = levels - 2; l >= 0; --l) {
      const std::string sl = std::to_string(l);
      up_[static_cast<std::size_t>(l)] = add_conv("up" + sl, f, f, 3, 1);
      fuse_[static_cast<std::size_t>(l)] = add_conv("fuse" + sl, 2 * f, f, 1, 1);
      decoder_[static_cast<std::size_t>(l)] = add_res_block("dec" + sl);
    }
    head_ = add_conv("head", f, 4, 1, 1);
  }

  /// Fan-in scaled normal conv weights, zero biases, gamma = 1, beta = 0.
  /// The head gets a kHeadGain-scaled draw: residual features are
  /// unnormalized and a full-scale head saturates the range activations.
  void initialize(std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0x6d6f64656cULL));
    for (auto& p : params_) {
      const std::string& n = p.name;
      if (n.ends_with(".weight")) {
        const Shape& s = p.tensor.shape();
        const double gain = n == "head.weight" ? kHeadGain : 1.0;
        const double std_dev = gain * std::sqrt(2.0 / static_cast<double>(s.c * s.h * s.w));
        for (double& v : p.tensor.data()) v = std_dev * rng.normal();
      } else if (n.ends_with(".gamma")) {
        for (double& v : p.tensor.data()) v = 1.0;
      }
    }
    snap_to_float();
  }

  Tensor conv(const detail::ConvRef& ref, const Tensor& x) const {
    return conv2d(x, params_[ref.weight].tensor, params_[ref.bias].tensor, ref.stride);
  }

  Tensor conv_backward(const detail::ConvRef& ref, const Tensor& x, const Tensor& dy) {
    return conv2d_backward(x, params_[ref.weight].tensor, params_[ref.bias].tensor, ref.stride, dy);
  }

  template <typename T, typename Params>
  static ResBlockTensors<T> block_tensors(const detail::ResBlockRef& ref, Params& params) {
    ResBlockTensors<T> t{};
    for (int i = 0; i < 3; ++i) {
      t.gamma[i] = &params[ref.norm[i].gamma].tensor;
      t.beta[i] = &params[ref.norm[i].beta].tensor;
      t.weight[i] = &params[ref.conv[i].weight].tensor;
      t.bias[i] = ref.conv[i].bias == detail::kNoBias ? nullptr : &params[ref.conv[i].bias].tensor;
    }
    return t;
  }

  Tensor res_block(const detail::ResBlockRef& ref, const Tensor& x, ResBlockCache& cache) const {
    return nn::res_block(block_tensors<const Tensor>(ref, params_), x, config_.leaky_slope, cache);
  }

  Tensor res_block_backward(const detail::ResBlockRef& ref, const ResBlockCache& cache, const Tensor& dy) {
    return nn::res_block_backward(block_tensors<Tensor>(ref, params_), cache, config_.leaky_slope, dy);
  }

  ModelConfig config_;
  std::vector<NamedTensor> params_;
  std::uint64_t generation_ = 0;
  detail::ConvRef stem_;
  std::vector<detail::ResBlockRef> encoder_;
  std::vector<detail::ConvRef> down_;
  std::vector<detail::ConvRef> up_;
  std::vector<detail::ConvRef> fuse_;
  std::vector<detail::ResBlockRef> decoder_;
  detail::ConvRef head_;
};

}  // namespace xlut::nn
