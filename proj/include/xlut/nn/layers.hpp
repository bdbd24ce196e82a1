#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "xlut/nn/tensor.hpp"

namespace xlut::nn {

// Each layer is a forward function plus a reverse function. Reverse passes
// return the input gradient and accumulate parameter gradients into the
// parameter tensors' grad buffers (which must have been zeroed).

// ---------------------------------------------------------------------------
// Convolution: square kernel k in {1, 3}, zero padding k/2, stride 1 or 2.
// weight: (out_c, in_c, k, k), bias: (1, out_c, 1, 1).

inline int conv_out_extent(int in, int stride) { return (in + stride - 1) / stride; }

inline void check_conv(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride) {
  const Shape& ws = weight.shape();
  if (ws.h != ws.w || (ws.h != 1 && ws.h != 3)) throw ShapeError("conv2d: kernel must be 1x1 or 3x3");
  if (stride != 1 && stride != 2) throw ShapeError("conv2d: stride must be 1 or 2");
  if (x.shape().c != ws.c) {
    throw ShapeError("conv2d: input has " + std::to_string(x.shape().c) + " channels, kernel expects " +
                     std::to_string(ws.c));
  }
  require_shape(bias, Shape{1, ws.n, 1, 1}, "conv2d bias");
}

/// Output indices o in [lo, hi) whose input tap o*stride + offset lies
/// inside [0, in).
struct TapRange {
  int lo = 0;
  int hi = 0;
  TapRange(int offset, int stride, int in, int out) {
    lo = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
    hi = std::min(out, (in - 1 - offset) / stride + 1);
    if (in - 1 - offset < 0) hi = 0;
    if (hi < lo) hi = lo;
  }
};

inline Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride) {
  check_conv(x, weight, bias, stride);
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  const int k = ws.h, pad = k / 2;
  const int oh = conv_out_extent(xs.h, stride), ow = conv_out_extent(xs.w, stride);
  Tensor y(Shape{xs.n, ws.n, oh, ow});
  for (int n = 0; n < xs.n; ++n) {
    for (int oc = 0; oc < ws.n; ++oc) {
      double* out = y.plane(n, oc);
      std::fill(out, out + static_cast<std::size_t>(oh) * ow, bias.data()[static_cast<std::size_t>(oc)]);
      for (int ic = 0; ic < xs.c; ++ic) {
        const double* in = x.plane(n, ic);
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            const double wv = weight.at(oc, ic, ky, kx);
            const TapRange ry(ky - pad, stride, xs.h, oh), rx(kx - pad, stride, xs.w, ow);
            for (int oy = ry.lo; oy < ry.hi; ++oy) {
              const double* in_row = in + static_cast<std::size_t>(oy * stride + ky - pad) * xs.w + (kx - pad);
              double* out_row = out + static_cast<std::size_t>(oy) * ow;
              for (int ox = rx.lo; ox < rx.hi; ++ox) out_row[ox] += wv * in_row[ox * stride];
            }
          }
        }
      }
    }
  }
  return y;
}

inline Tensor conv2d_backward(const Tensor& x, Tensor& weight, Tensor& bias, int stride, const Tensor& dy) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  const int k = ws.h, pad = k / 2;
  const int oh = dy.shape().h, ow = dy.shape().w;
  Tensor dx(xs);
  auto dw = weight.grad();
  auto db = bias.grad();
  for (int n = 0; n < xs.n; ++n) {
    for (int oc = 0; oc < ws.n; ++oc) {
      const double* g = dy.plane(n, oc);
      double gsum = 0.0;
      for (std::size_t i = 0; i < static_cast<std::size_t>(oh) * ow; ++i) gsum += g[i];
      db[static_cast<std::size_t>(oc)] += gsum;
      for (int ic = 0; ic < xs.c; ++ic) {
        const double* in = x.plane(n, ic);
        double* din = dx.plane(n, ic);
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            const double wv = weight.at(oc, ic, ky, kx);
            const TapRange ry(ky - pad, stride, xs.h, oh), rx(kx - pad, stride, xs.w, ow);
            double acc = 0.0;
            for (int oy = ry.lo; oy < ry.hi; ++oy) {
              const std::size_t row = static_cast<std::size_t>(oy * stride + ky - pad) * xs.w + (kx - pad);
              const double* in_row = in + row;
              double* din_row = din + row;
              const double* g_row = g + static_cast<std::size_t>(oy) * ow;
              for (int ox = rx.lo; ox < rx.hi; ++ox) {
                acc += g_row[ox] * in_row[ox * stride];
                din_row[ox * stride] += wv * g_row[ox];
              }
            }
            dw[weight.offset(oc, ic, ky, kx)] += acc;
          }
        }
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Instance normalization with per-channel affine (gamma, beta: (1, C, 1, 1)).

inline constexpr double kNormEps = 1e-5;

struct InstanceNormCache {
  Tensor xhat;
  std::vector<double> inv_std;  // per (n, c)
};

inline Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, InstanceNormCache* cache) {
  const Shape& s = x.shape();
  require_shape(gamma, Shape{1, s.c, 1, 1}, "instance_norm gamma");
  require_shape(beta, Shape{1, s.c, 1, 1}, "instance_norm beta");
  const std::size_t m = s.plane();
  Tensor y(s);
  Tensor xhat(s);
  std::vector<double> inv_std(static_cast<std::size_t>(s.n) * s.c);
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const double* in = x.plane(n, c);
      double mean = 0.0;
      for (std::size_t i = 0; i < m; ++i) mean += in[i];
      mean /= static_cast<double>(m);
      double var = 0.0;
      for (std::size_t i = 0; i < m; ++i) var += (in[i] - mean) * (in[i] - mean);
      var /= static_cast<double>(m);
      const double is = 1.0 / std::sqrt(var + kNormEps);
      inv_std[static_cast<std::size_t>(n) * s.c + c] = is;
      const double g = gamma.data()[static_cast<std::size_t>(c)];
      const double b = beta.data()[static_cast<std::size_t>(c)];
      double* xh = xhat.plane(n, c);
      double* out = y.plane(n, c);
      for (std::size_t i = 0; i < m; ++i) {
        xh[i] = (in[i] - mean) * is;
        out[i] = xh[i] * g + b;
      }
    }
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

inline Tensor instance_norm_backward(const InstanceNormCache& cache, Tensor& gamma, Tensor& beta, const Tensor& dy) {
  const Shape& s = dy.shape();
  const std::size_t m = s.plane();
  const double inv_m = 1.0 / static_cast<double>(m);
  Tensor dx(s);
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const double* g = dy.plane(n, c);
      const double* xh = cache.xhat.plane(n, c);
      double sum_g = 0.0, sum_gx = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        sum_g += g[i];
        sum_gx += g[i] * xh[i];
      }
      gamma.grad()[static_cast<std::size_t>(c)] += sum_gx;
      beta.grad()[static_cast<std::size_t>(c)] += sum_g;
      const double gm = gamma.data()[static_cast<std::size_t>(c)];
      const double is = cache.inv_std[static_cast<std::size_t>(n) * s.c + c];
      double* out = dx.plane(n, c);
      // d xhat = g * gamma; dx = is * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))
      for (std::size_t i = 0; i < m; ++i) {
        out[i] = gm * is * (g[i] - sum_g * inv_m - xh[i] * sum_gx * inv_m);
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// LeakyReLU. The subgradient at 0 is taken as 1.

inline Tensor leaky_relu(const Tensor& x, double slope) {
  Tensor y(x.shape());
  auto in = x.data();
  auto out = y.data();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] >= 0.0 ? in[i] : slope * in[i];
  return y;
}

inline Tensor leaky_relu_backward(const Tensor& x, double slope, const Tensor& dy) {
  Tensor dx(x.shape());
  auto in = x.data();
  auto g = dy.data();
  auto out = dx.data();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] >= 0.0 ? g[i] : slope * g[i];
  return dx;
}

// ---------------------------------------------------------------------------
// Nearest-neighbour upsampling by 2 onto an explicit target extent.

inline Tensor upsample_nearest2x(const Tensor& x, int out_h, int out_w) {
  const Shape& s = x.shape();
  if (conv_out_extent(out_h, 2) != s.h || conv_out_extent(out_w, 2) != s.w) {
    throw ShapeError("upsample_nearest2x: target " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                     " incompatible with " + s.str());
  }
  Tensor y(Shape{s.n, s.c, out_h, out_w});
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      for (int oy = 0; oy < out_h; ++oy) {
        for (int ox = 0; ox < out_w; ++ox) y.at(n, c, oy, ox) = x.at(n, c, oy / 2, ox / 2);
      }
    }
  }
  return y;
}

inline Tensor upsample_nearest2x_backward(const Shape& in_shape, const Tensor& dy) {
  Tensor dx(in_shape);
  const Shape& s = dy.shape();
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      for (int oy = 0; oy < s.h; ++oy) {
        for (int ox = 0; ox < s.w; ++ox) dx.at(n, c, oy / 2, ox / 2) += dy.at(n, c, oy, ox);
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Channel concatenation.

inline Tensor concat_channels(const Tensor& first, const Tensor& second) {
  const Shape& a = first.shape();
  const Shape& b = second.shape();
  if (a.n != b.n || a.h != b.h || a.w != b.w) throw ShapeError("concat_channels: " + a.str() + " vs " + b.str());
  Tensor y(Shape{a.n, a.c + b.c, a.h, a.w});
  for (int n = 0; n < a.n; ++n) {
    std::copy_n(first.plane(n, 0), static_cast<std::size_t>(a.c) * a.plane(), y.plane(n, 0));
    std::copy_n(second.plane(n, 0), static_cast<std::size_t>(b.c) * b.plane(), y.plane(n, a.c));
  }
  return y;
}

/// Splits a concatenated gradient back into its two operands.
inline std::pair<Tensor, Tensor> split_channels(const Tensor& dy, int first_c) {
  const Shape& s = dy.shape();
  Tensor da(Shape{s.n, first_c, s.h, s.w});
  Tensor db(Shape{s.n, s.c - first_c, s.h, s.w});
  for (int n = 0; n < s.n; ++n) {
    std::copy_n(dy.plane(n, 0), static_cast<std::size_t>(first_c) * s.plane(), da.plane(n, 0));
    std::copy_n(dy.plane(n, first_c), static_cast<std::size_t>(s.c - first_c) * s.plane(), db.plane(n, 0));
  }
  return {std::move(da), std::move(db)};
}

inline void add_inplace(Tensor& acc, const Tensor& x) {
  require_shape(x, acc.shape(), "add_inplace");
  auto a = acc.data();
  auto b = x.data();
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

// ---------------------------------------------------------------------------
// Pre-activation residual block: x + C3(A(C2(A(C1(A(x)))))), with
// A = LeakyReLU(IN(.)) and Ci 3x3 stride-1 convs.

/// Borrowed views of one block's parameters. T is `const Tensor` for the
/// forward pass and `Tensor` for the reverse pass. A null bias means the conv
/// has none; the first two convs feed a normalization, which cancels any
/// per-channel offset.
template <typename T>
struct ResBlockTensors {
  T* gamma[3];
  T* beta[3];
  T* weight[3];
  T* bias[3];
};

struct ResBlockCache {
  InstanceNormCache norm[3];
  Tensor normed[3];   // IN outputs (LeakyReLU inputs)
  Tensor conv_in[3];  // LeakyReLU outputs (conv inputs)
};

inline Tensor res_block(const ResBlockTensors<const Tensor>& p, const Tensor& x, double slope, ResBlockCache& cache) {
  if (p.weight[0]->shape().c != x.shape().c || p.weight[2]->shape().n != x.shape().c) {
    throw ShapeError("res_block: channel mismatch for input " + x.shape().str());
  }
  Tensor h = x;
  for (int i = 0; i < 3; ++i) {
    cache.normed[i] = instance_norm(h, *p.gamma[i], *p.beta[i], &cache.norm[i]);
    cache.conv_in[i] = leaky_relu(cache.normed[i], slope);
    const Tensor no_bias(Shape{1, p.weight[i]->shape().n, 1, 1});
    h = conv2d(cache.conv_in[i], *p.weight[i], p.bias[i] ? *p.bias[i] : no_bias, 1);
  }
  add_inplace(h, x);
  return h;
}

inline Tensor res_block_backward(const ResBlockTensors<Tensor>& p, const ResBlockCache& cache, double slope,
                                 const Tensor& dy) {
  Tensor g = dy;
  for (int i = 2; i >= 0; --i) {
    Tensor scratch;
    if (!p.bias[i]) {
      scratch = Tensor(Shape{1, p.weight[i]->shape().n, 1, 1});
      scratch.zero_grad();
    }
    g = conv2d_backward(cache.conv_in[i], *p.weight[i], p.bias[i] ? *p.bias[i] : scratch, 1, g);
    g = leaky_relu_backward(cache.normed[i], slope, g);
    g = instance_norm_backward(cache.norm[i], *p.gamma[i], *p.beta[i], g);
  }
  add_inplace(g, dy);
  return g;
}

}  // namespace xlut::nn
