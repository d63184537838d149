#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "msgnet/errors.hpp"
#include "msgnet/tensor.hpp"

// Differentiable operations over Tensor. Every op validates shapes, computes
// its forward values with double accumulators, and records a backward rule on
// the active tape when an input requires gradient.
namespace msgnet {

enum class PadMode { zero, reflect };

struct PaddingSpec {
  PadMode mode = PadMode::zero;
  int amount = 0;

  static PaddingSpec none() { return {PadMode::zero, 0}; }
  static PaddingSpec zeros(int p) { return {PadMode::zero, p}; }
  static PaddingSpec reflect(int p) { return {PadMode::reflect, p}; }
};

namespace detail {

inline void require_rank(const Tensor& t, int rank, const char* op, const char* what) {
  if (t.ndim() != rank) {
    raise<ShapeError>(op, ": ", what, " must have rank ", rank, ", got shape ", shape_str(t.shape()));
  }
}

inline void accumulate(float* dst, std::span<const double> src) {
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += static_cast<float>(src[i]);
}

// Zero-padded copy of an NCHW buffer.
inline std::vector<float> zero_pad_nchw(std::span<const float> x, std::int64_t planes, std::int64_t h,
                                        std::int64_t w, int pad) {
  if (pad == 0) return {x.begin(), x.end()};
  const std::int64_t hp = h + 2 * pad, wp = w + 2 * pad;
  std::vector<float> out(static_cast<std::size_t>(planes * hp * wp), 0.0f);
  for (std::int64_t p = 0; p < planes; ++p)
    for (std::int64_t y = 0; y < h; ++y)
      std::copy_n(x.data() + (p * h + y) * w, w, out.data() + (p * hp + y + pad) * wp + pad);
  return out;
}

inline std::int64_t reflect_index(std::int64_t i, std::int64_t n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * (n - 1) - i;
  return i;
}

}  // namespace detail

// Mirror padding that does not repeat the edge sample: [1,2,3] pad 1 -> [2,1,2,3,2].
inline Tensor reflect_pad(const Tensor& input, int top, int bottom, int left, int right) {
  detail::require_rank(input, 4, "reflect_pad", "input");
  const auto n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (top < 0 || bottom < 0 || left < 0 || right < 0) raise<ShapeError>("reflect_pad: negative padding");
  if (std::max(top, bottom) >= h) {
    raise<ShapeError>("reflect_pad: vertical padding ", std::max(top, bottom), " must be smaller than height ", h);
  }
  if (std::max(left, right) >= w) {
    raise<ShapeError>("reflect_pad: horizontal padding ", std::max(left, right), " must be smaller than width ", w);
  }
  const std::int64_t ho = h + top + bottom, wo = w + left + right;
  std::vector<std::int64_t> src(static_cast<std::size_t>(ho * wo));
  for (std::int64_t y = 0; y < ho; ++y)
    for (std::int64_t x = 0; x < wo; ++x)
      src[static_cast<std::size_t>(y * wo + x)] =
          detail::reflect_index(y - top, h) * w + detail::reflect_index(x - left, w);

  const auto in = input.data();
  std::vector<float> out(static_cast<std::size_t>(n * c * ho * wo));
  for (std::int64_t p = 0; p < n * c; ++p)
    for (std::int64_t k = 0; k < ho * wo; ++k)
      out[static_cast<std::size_t>(p * ho * wo + k)] = in[static_cast<std::size_t>(p * h * w + src[static_cast<std::size_t>(k)])];

  return detail::make_result("reflect_pad", {n, c, ho, wo}, std::move(out), {input},
                             [input, src, n, c, h, w, ho, wo](std::span<const float> g) {
                               float* gi = detail::grad_sink(input);
                               if (!gi) return;
                               std::vector<double> acc(static_cast<std::size_t>(h * w));
                               for (std::int64_t p = 0; p < n * c; ++p) {
                                 std::fill(acc.begin(), acc.end(), 0.0);
                                 for (std::int64_t k = 0; k < ho * wo; ++k)
                                   acc[static_cast<std::size_t>(src[static_cast<std::size_t>(k)])] +=
                                       g[static_cast<std::size_t>(p * ho * wo + k)];
                                 detail::accumulate(gi + p * h * w, acc);
                               }
                             });
}

inline Tensor reflect_pad(const Tensor& input, int pad) { return reflect_pad(input, pad, pad, pad, pad); }

// Cropping window [top, top+height) x [left, left+width) of an NCHW tensor.
inline Tensor crop(const Tensor& input, std::int64_t top, std::int64_t left, std::int64_t height, std::int64_t width) {
  detail::require_rank(input, 4, "crop", "input");
  const auto n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (top < 0 || left < 0 || height <= 0 || width <= 0 || top + height > h || left + width > w) {
    raise<ShapeError>("crop: window (", top, ", ", left, ", ", height, ", ", width, ") exceeds input ", shape_str(input.shape()));
  }
  const auto in = input.data();
  std::vector<float> out(static_cast<std::size_t>(n * c * height * width));
  for (std::int64_t p = 0; p < n * c; ++p)
    for (std::int64_t y = 0; y < height; ++y)
      std::copy_n(in.data() + (p * h + top + y) * w + left, width, out.data() + (p * height + y) * width);
  return detail::make_result("crop", {n, c, height, width}, std::move(out), {input},
                             [=](std::span<const float> g) {
                               float* gi = detail::grad_sink(input);
                               if (!gi) return;
                               for (std::int64_t p = 0; p < n * c; ++p)
                                 for (std::int64_t y = 0; y < height; ++y)
                                   for (std::int64_t x = 0; x < width; ++x)
                                     gi[(p * h + top + y) * w + left + x] += g[static_cast<std::size_t>((p * height + y) * width + x)];
                             });
}

// Cross-correlation of NCHW input with OIKK weight. `bias` may be undefined.
inline Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride = 1,
                     PaddingSpec padding = PaddingSpec::none()) {
  detail::require_rank(input, 4, "conv2d", "input");
  detail::require_rank(weight, 4, "conv2d", "weight");
  if (stride < 1) raise<ShapeError>("conv2d: stride must be positive, got ", stride);
  if (padding.amount < 0) raise<ShapeError>("conv2d: negative padding");
  if (padding.mode == PadMode::reflect && padding.amount > 0) {
    return conv2d(reflect_pad(input, padding.amount), weight, bias, stride, PaddingSpec::none());
  }
  const auto n = input.dim(0), ci = input.dim(1), h = input.dim(2), w = input.dim(3);
  const auto co = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(1) != ci) {
    raise<ShapeError>("conv2d: input channel dimension is ", ci, " but weight expects ", weight.dim(1));
  }
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != co)) {
    raise<ShapeError>("conv2d: bias must have shape [", co, "], got ", shape_str(bias.shape()));
  }
  const int pad = padding.amount;
  const std::int64_t hp = h + 2 * pad, wp = w + 2 * pad;
  if (kh > hp || kw > wp) {
    raise<ShapeError>("conv2d: kernel ", kh, "x", kw, " does not fit padded input ", hp, "x", wp);
  }
  const std::int64_t ho = (hp - kh) / stride + 1, wo = (wp - kw) / stride + 1;
  const auto xp = detail::zero_pad_nchw(input.data(), n * ci, h, w, pad);
  const auto wt = weight.data();

  std::vector<float> out(static_cast<std::size_t>(n * co * ho * wo));
  std::vector<double> acc(static_cast<std::size_t>(ho * wo));
  for (std::int64_t b = 0; b < n; ++b) {
    for (std::int64_t o = 0; o < co; ++o) {
      std::fill(acc.begin(), acc.end(), bias.defined() ? static_cast<double>(bias.data()[static_cast<std::size_t>(o)]) : 0.0);
      for (std::int64_t i = 0; i < ci; ++i) {
        const float* plane = xp.data() + (b * ci + i) * hp * wp;
        for (std::int64_t ky = 0; ky < kh; ++ky) {
          for (std::int64_t kx = 0; kx < kw; ++kx) {
            const double wv = wt[static_cast<std::size_t>(((o * ci + i) * kh + ky) * kw + kx)];
            for (std::int64_t y = 0; y < ho; ++y) {
              const float* row = plane + (y * stride + ky) * wp + kx;
              double* arow = acc.data() + y * wo;
              for (std::int64_t x = 0; x < wo; ++x) arow[x] += wv * row[x * stride];
            }
          }
        }
      }
      float* dst = out.data() + (b * co + o) * ho * wo;
      for (std::int64_t k = 0; k < ho * wo; ++k) dst[k] = static_cast<float>(acc[static_cast<std::size_t>(k)]);
    }
  }

  return detail::make_result(
      "conv2d", {n, co, ho, wo}, std::move(out), {input, weight, bias.defined() ? bias : weight},
      [=](std::span<const float> g) {
        if (float* gb = bias.defined() ? detail::grad_sink(bias) : nullptr) {
          for (std::int64_t o = 0; o < co; ++o) {
            double s = 0.0;
            for (std::int64_t b = 0; b < n; ++b)
              for (std::int64_t k = 0; k < ho * wo; ++k) s += g[static_cast<std::size_t>((b * co + o) * ho * wo + k)];
            gb[o] += static_cast<float>(s);
          }
        }
        if (float* gw = detail::grad_sink(weight)) {
          for (std::int64_t o = 0; o < co; ++o)
            for (std::int64_t i = 0; i < ci; ++i)
              for (std::int64_t ky = 0; ky < kh; ++ky)
                for (std::int64_t kx = 0; kx < kw; ++kx) {
                  double s = 0.0;
                  for (std::int64_t b = 0; b < n; ++b) {
                    const float* plane = xp.data() + (b * ci + i) * hp * wp;
                    const float* gp = g.data() + (b * co + o) * ho * wo;
                    for (std::int64_t y = 0; y < ho; ++y) {
                      const float* row = plane + (y * stride + ky) * wp + kx;
                      const float* grow = gp + y * wo;
                      for (std::int64_t x = 0; x < wo; ++x) s += static_cast<double>(grow[x]) * row[x * stride];
                    }
                  }
                  gw[((o * ci + i) * kh + ky) * kw + kx] += static_cast<float>(s);
                }
        }
        if (float* gi = detail::grad_sink(input)) {
          std::vector<double> gxp(static_cast<std::size_t>(hp * wp));
          for (std::int64_t b = 0; b < n; ++b) {
            for (std::int64_t i = 0; i < ci; ++i) {
              std::fill(gxp.begin(), gxp.end(), 0.0);
              for (std::int64_t o = 0; o < co; ++o) {
                const float* gp = g.data() + (b * co + o) * ho * wo;
                for (std::int64_t ky = 0; ky < kh; ++ky)
                  for (std::int64_t kx = 0; kx < kw; ++kx) {
                    const double wv = wt[static_cast<std::size_t>(((o * ci + i) * kh + ky) * kw + kx)];
                    for (std::int64_t y = 0; y < ho; ++y) {
                      double* row = gxp.data() + (y * stride + ky) * wp + kx;
                      const float* grow = gp + y * wo;
                      for (std::int64_t x = 0; x < wo; ++x) row[x * stride] += wv * grow[x];
                    }
                  }
              }
              float* dst = gi + (b * ci + i) * h * w;
              for (std::int64_t y = 0; y < h; ++y)
                for (std::int64_t x = 0; x < w; ++x)
                  dst[y * w + x] += static_cast<float>(gxp[static_cast<std::size_t>((y + pad) * wp + x + pad)]);
            }
          }
        }
      });
}

inline Tensor conv2d(const Tensor& input, const Tensor& weight, int stride = 1, PaddingSpec padding = PaddingSpec::none()) {
  return conv2d(input, weight, Tensor(), stride, padding);
}

// Fractionally-strided convolution: the adjoint of conv2d with the same
// weight and stride. Weight layout is I x O x K x K. Output extent is
// (H - 1) * stride + K + output_padding.
inline Tensor conv2d_transposed(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride = 1,
                                int output_padding = 0) {
  detail::require_rank(input, 4, "conv2d_transposed", "input");
  detail::require_rank(weight, 4, "conv2d_transposed", "weight");
  if (stride < 1) raise<ShapeError>("conv2d_transposed: stride must be positive, got ", stride);
  if (output_padding < 0 || output_padding >= stride) {
    raise<ShapeError>("conv2d_transposed: output_padding must lie in [0, stride), got ", output_padding);
  }
  const auto n = input.dim(0), ci = input.dim(1), h = input.dim(2), w = input.dim(3);
  const auto co = weight.dim(1), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(0) != ci) {
    raise<ShapeError>("conv2d_transposed: input channel dimension is ", ci, " but weight expects ", weight.dim(0));
  }
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != co)) {
    raise<ShapeError>("conv2d_transposed: bias must have shape [", co, "], got ", shape_str(bias.shape()));
  }
  const std::int64_t ho = (h - 1) * stride + kh + output_padding;
  const std::int64_t wo = (w - 1) * stride + kw + output_padding;
  const auto x = input.data();
  const auto wt = weight.data();

  std::vector<float> out(static_cast<std::size_t>(n * co * ho * wo));
  std::vector<double> acc(static_cast<std::size_t>(ho * wo));
  for (std::int64_t b = 0; b < n; ++b) {
    for (std::int64_t o = 0; o < co; ++o) {
      std::fill(acc.begin(), acc.end(), bias.defined() ? static_cast<double>(bias.data()[static_cast<std::size_t>(o)]) : 0.0);
      for (std::int64_t i = 0; i < ci; ++i) {
        const float* plane = x.data() + (b * ci + i) * h * w;
        for (std::int64_t ky = 0; ky < kh; ++ky)
          for (std::int64_t kx = 0; kx < kw; ++kx) {
            const double wv = wt[static_cast<std::size_t>(((i * co + o) * kh + ky) * kw + kx)];
            for (std::int64_t y = 0; y < h; ++y) {
              double* arow = acc.data() + (y * stride + ky) * wo + kx;
              const float* row = plane + y * w;
              for (std::int64_t xx = 0; xx < w; ++xx) arow[xx * stride] += wv * row[xx];
            }
          }
      }
      float* dst = out.data() + (b * co + o) * ho * wo;
      for (std::int64_t k = 0; k < ho * wo; ++k) dst[k] = static_cast<float>(acc[static_cast<std::size_t>(k)]);
    }
  }

  return detail::make_result(
      "conv2d_transposed", {n, co, ho, wo}, std::move(out), {input, weight, bias.defined() ? bias : weight},
      [=](std::span<const float> g) {
        if (float* gb = bias.defined() ? detail::grad_sink(bias) : nullptr) {
          for (std::int64_t o = 0; o < co; ++o) {
            double s = 0.0;
            for (std::int64_t b = 0; b < n; ++b)
              for (std::int64_t k = 0; k < ho * wo; ++k) s += g[static_cast<std::size_t>((b * co + o) * ho * wo + k)];
            gb[o] += static_cast<float>(s);
          }
        }
        if (float* gw = detail::grad_sink(weight)) {
          for (std::int64_t i = 0; i < ci; ++i)
            for (std::int64_t o = 0; o < co; ++o)
              for (std::int64_t ky = 0; ky < kh; ++ky)
                for (std::int64_t kx = 0; kx < kw; ++kx) {
                  double s = 0.0;
                  for (std::int64_t b = 0; b < n; ++b) {
                    const float* plane = x.data() + (b * ci + i) * h * w;
                    const float* gp = g.data() + (b * co + o) * ho * wo;
                    for (std::int64_t y = 0; y < h; ++y) {
                      const float* grow = gp + (y * stride + ky) * wo + kx;
                      const float* row = plane + y * w;
                      for (std::int64_t xx = 0; xx < w; ++xx) s += static_cast<double>(row[xx]) * grow[xx * stride];
                    }
                  }
                  gw[((i * co + o) * kh + ky) * kw + kx] += static_cast<float>(s);
                }
        }
        if (float* gi = detail::grad_sink(input)) {
          std::vector<double> gacc(static_cast<std::size_t>(h * w));
          for (std::int64_t b = 0; b < n; ++b)
            for (std::int64_t i = 0; i < ci; ++i) {
              std::fill(gacc.begin(), gacc.end(), 0.0);
              for (std::int64_t o = 0; o < co; ++o) {
                const float* gp = g.data() + (b * co + o) * ho * wo;
                for (std::int64_t ky = 0; ky < kh; ++ky)
                  for (std::int64_t kx = 0; kx < kw; ++kx) {
                    const double wv = wt[static_cast<std::size_t>(((i * co + o) * kh + ky) * kw + kx)];
                    for (std::int64_t y = 0; y < h; ++y) {
                      const float* grow = gp + (y * stride + ky) * wo + kx;
                      double* arow = gacc.data() + y * w;
                      for (std::int64_t xx = 0; xx < w; ++xx) arow[xx] += wv * grow[xx * stride];
                    }
                  }
              }
              detail::accumulate(gi + (b * ci + i) * h * w, gacc);
            }
        }
      });
}

inline Tensor conv2d_transposed(const Tensor& input, const Tensor& weight, int stride = 1, int output_padding = 0) {
  return conv2d_transposed(input, weight, Tensor(), stride, output_padding);
}

// Per-sample, per-channel standardization over H x W with biased variance.
inline Tensor instance_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, float epsilon = 1e-5f) {
  detail::require_rank(input, 4, "instance_norm", "input");
  const auto n = input.dim(0), c = input.dim(1), m = input.dim(2) * input.dim(3);
  if (gamma.ndim() != 1 || gamma.dim(0) != c) raise<ShapeError>("instance_norm: gamma must have shape [", c, "], got ", shape_str(gamma.shape()));
  if (beta.ndim() != 1 || beta.dim(0) != c) raise<ShapeError>("instance_norm: beta must have shape [", c, "], got ", shape_str(beta.shape()));
  if (!(epsilon > 0.0f)) raise<ConfigError>("instance_norm: epsilon must be positive");

  const auto x = input.data();
  const auto gm = gamma.data();
  const auto bt = beta.data();
  std::vector<float> xhat(static_cast<std::size_t>(n * c * m));
  std::vector<double> inv_std(static_cast<std::size_t>(n * c));
  std::vector<float> out(xhat.size());
  for (std::int64_t p = 0; p < n * c; ++p) {
    const float* src = x.data() + p * m;
    double mean = 0.0;
    for (std::int64_t k = 0; k < m; ++k) mean += src[k];
    mean /= static_cast<double>(m);
    double var = 0.0;
    for (std::int64_t k = 0; k < m; ++k) {
      const double d = src[k] - mean;
      var += d * d;
    }
    var /= static_cast<double>(m);
    const double inv = 1.0 / std::sqrt(var + epsilon);
    inv_std[static_cast<std::size_t>(p)] = inv;
    const auto ch = static_cast<std::size_t>(p % c);
    for (std::int64_t k = 0; k < m; ++k) {
      const double xh = (src[k] - mean) * inv;
      xhat[static_cast<std::size_t>(p * m + k)] = static_cast<float>(xh);
      out[static_cast<std::size_t>(p * m + k)] = static_cast<float>(gm[ch] * xh + bt[ch]);
    }
  }

  return detail::make_result(
      "instance_norm", input.shape(), std::move(out), {input, gamma, beta},
      [=](std::span<const float> g) {
        float* gi = detail::grad_sink(input);
        float* gg = detail::grad_sink(gamma);
        float* gb = detail::grad_sink(beta);
        const auto gmv = gamma.data();
        std::vector<double> dgamma(static_cast<std::size_t>(c)), dbeta(static_cast<std::size_t>(c));
        for (std::int64_t p = 0; p < n * c; ++p) {
          const auto ch = static_cast<std::size_t>(p % c);
          const float* gp = g.data() + p * m;
          const float* xh = xhat.data() + p * m;
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::int64_t k = 0; k < m; ++k) {
            sum_g += gp[k];
            sum_gx += static_cast<double>(gp[k]) * xh[k];
          }
          dgamma[ch] += sum_gx;
          dbeta[ch] += sum_g;
          if (gi) {
            const double scale = gmv[ch] * inv_std[static_cast<std::size_t>(p)];
            const double mean_g = sum_g / static_cast<double>(m);
            const double mean_gx = sum_gx / static_cast<double>(m);
            for (std::int64_t k = 0; k < m; ++k)
              gi[p * m + k] += static_cast<float>(scale * (gp[k] - mean_g - xh[k] * mean_gx));
          }
        }
        if (gg) detail::accumulate(gg, dgamma);
        if (gb) detail::accumulate(gb, dbeta);
      });
}

// When set, every relu folds its sign pattern into this hash. Two evaluations
// with equal hashes ran through the same linear region of the network.
inline std::uint64_t*& relu_pattern_sink() {
  thread_local std::uint64_t* sink = nullptr;
  return sink;
}

inline Tensor relu(const Tensor& input) {
  const auto x = input.data();
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0f ? x[i] : 0.0f;
  if (std::uint64_t* h = relu_pattern_sink()) {
    for (std::size_t i = 0; i < x.size(); ++i) *h = (*h ^ (x[i] > 0.0f ? 0x9eu : 0x3bu)) * 0x100000001b3ull;
    *h = (*h ^ x.size()) * 0x100000001b3ull;
  }
  return detail::make_result("relu", input.shape(), std::move(out), {input}, [input](std::span<const float> g) {
    float* gi = detail::grad_sink(input);
    if (!gi) return;
    const auto xv = input.data();
    for (std::size_t i = 0; i < xv.size(); ++i)
      if (xv[i] > 0.0f) gi[i] += g[i];
  });
}

// Dense M x K times K x N.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "matmul", "left operand");
  detail::require_rank(b, 2, "matmul", "right operand");
  const auto m = a.dim(0), k = a.dim(1), nn = b.dim(1);
  if (b.dim(0) != k) raise<ShapeError>("matmul: inner dimensions differ (", k, " vs ", b.dim(0), ")");
  const auto av = a.data(), bv = b.data();
  std::vector<float> out(static_cast<std::size_t>(m * nn));
  std::vector<double> row(static_cast<std::size_t>(nn));
  for (std::int64_t i = 0; i < m; ++i) {
    std::fill(row.begin(), row.end(), 0.0);
    for (std::int64_t p = 0; p < k; ++p) {
      const double aip = av[static_cast<std::size_t>(i * k + p)];
      const float* brow = bv.data() + p * nn;
      for (std::int64_t j = 0; j < nn; ++j) row[static_cast<std::size_t>(j)] += aip * brow[j];
    }
    for (std::int64_t j = 0; j < nn; ++j) out[static_cast<std::size_t>(i * nn + j)] = static_cast<float>(row[static_cast<std::size_t>(j)]);
  }
  return detail::make_result("matmul", {m, nn}, std::move(out), {a, b}, [=](std::span<const float> g) {
    const auto av2 = a.data(), bv2 = b.data();
    if (float* ga = detail::grad_sink(a)) {
      // dA = G * B^T
      for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::int64_t j = 0; j < nn; ++j) s += static_cast<double>(g[static_cast<std::size_t>(i * nn + j)]) * bv2[static_cast<std::size_t>(p * nn + j)];
          ga[i * k + p] += static_cast<float>(s);
        }
    }
    if (float* gb = detail::grad_sink(b)) {
      // dB = A^T * G
      for (std::int64_t p = 0; p < k; ++p)
        for (std::int64_t j = 0; j < nn; ++j) {
          double s = 0.0;
          for (std::int64_t i = 0; i < m; ++i) s += static_cast<double>(av2[static_cast<std::size_t>(i * k + p)]) * g[static_cast<std::size_t>(i * nn + j)];
          gb[p * nn + j] += static_cast<float>(s);
        }
    }
  });
}

inline Tensor reshape(const Tensor& input, Shape shape) {
  if (shape_numel(shape) != input.numel()) {
    raise<ShapeError>("reshape: cannot view ", shape_str(input.shape()), " as ", shape_str(shape));
  }
  return detail::make_result("reshape", std::move(shape), input.values(), {input}, [input](std::span<const float> g) {
    if (float* gi = detail::grad_sink(input))
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
  });
}

// General axis permutation: output dim k is input dim order[k].
inline Tensor permute(const Tensor& input, std::vector<int> order) {
  const int rank = input.ndim();
  if (static_cast<int>(order.size()) != rank) raise<ShapeError>("permute: order has ", order.size(), " axes, tensor has ", rank);
  std::vector<bool> seen(static_cast<std::size_t>(rank), false);
  for (int a : order) {
    if (a < 0 || a >= rank || seen[static_cast<std::size_t>(a)]) raise<ShapeError>("permute: invalid axis order");
    seen[static_cast<std::size_t>(a)] = true;
  }
  const Shape& in_shape = input.shape();
  Shape out_shape(static_cast<std::size_t>(rank));
  std::vector<std::int64_t> in_strides(static_cast<std::size_t>(rank));
  std::int64_t s = 1;
  for (int d = rank - 1; d >= 0; --d) {
    in_strides[static_cast<std::size_t>(d)] = s;
    s *= in_shape[static_cast<std::size_t>(d)];
  }
  for (int d = 0; d < rank; ++d) out_shape[static_cast<std::size_t>(d)] = in_shape[static_cast<std::size_t>(order[static_cast<std::size_t>(d)])];

  // src[k] = flat input index feeding output element k
  const auto total = input.numel();
  std::vector<std::int64_t> src(static_cast<std::size_t>(total));
  std::vector<std::int64_t> idx(static_cast<std::size_t>(rank), 0);
  for (std::int64_t k = 0; k < total; ++k) {
    std::int64_t off = 0;
    for (int d = 0; d < rank; ++d) off += idx[static_cast<std::size_t>(d)] * in_strides[static_cast<std::size_t>(order[static_cast<std::size_t>(d)])];
    src[static_cast<std::size_t>(k)] = off;
    for (int d = rank - 1; d >= 0; --d) {
      if (++idx[static_cast<std::size_t>(d)] < out_shape[static_cast<std::size_t>(d)]) break;
      idx[static_cast<std::size_t>(d)] = 0;
    }
  }
  const auto x = input.data();
  std::vector<float> out(static_cast<std::size_t>(total));
  for (std::int64_t k = 0; k < total; ++k) out[static_cast<std::size_t>(k)] = x[static_cast<std::size_t>(src[static_cast<std::size_t>(k)])];
  return detail::make_result("permute", std::move(out_shape), std::move(out), {input}, [input, src](std::span<const float> g) {
    if (float* gi = detail::grad_sink(input))
      for (std::size_t k = 0; k < src.size(); ++k) gi[src[k]] += g[k];
  });
}

inline Tensor transpose(const Tensor& matrix) {
  detail::require_rank(matrix, 2, "transpose", "input");
  return permute(matrix, {1, 0});
}

namespace detail {

// `b` is a single value, matches `a`, or matches a trailing suffix of `a`'s
// shape, in which case it is broadcast over the leading dimensions.
inline std::int64_t broadcast_period(const Tensor& a, const Tensor& b, const char* op) {
  if (b.numel() == 1) return 1;
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  bool ok = sb.size() <= sa.size();
  for (std::size_t i = 0; ok && i < sb.size(); ++i) ok = sb[sb.size() - 1 - i] == sa[sa.size() - 1 - i];
  if (!ok) raise<ShapeError>(op, ": shape ", shape_str(sb), " cannot broadcast onto ", shape_str(sa));
  return b.numel();
}

template <typename Fwd, typename Da, typename Db>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, Fwd fwd, Da da, Db db) {
  const auto period = broadcast_period(a, b, name);
  const auto av = a.data(), bv = b.data();
  std::vector<float> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i], bv[i % static_cast<std::size_t>(period)]);
  return make_result(name, a.shape(), std::move(out), {a, b}, [=](std::span<const float> g) {
    const auto av2 = a.data(), bv2 = b.data();
    const auto per = static_cast<std::size_t>(period);
    if (float* ga = grad_sink(a))
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += da(g[i], av2[i], bv2[i % per]);
    if (float* gb = grad_sink(b)) {
      std::vector<double> acc(per, 0.0);
      for (std::size_t i = 0; i < g.size(); ++i) acc[i % per] += db(g[i], av2[i], bv2[i % per]);
      accumulate(gb, acc);
    }
  });
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      "add", a, b, [](float x, float y) { return x + y; }, [](float g, float, float) { return g; },
      [](float g, float, float) { return static_cast<double>(g); });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      "sub", a, b, [](float x, float y) { return x - y; }, [](float g, float, float) { return g; },
      [](float g, float, float) { return -static_cast<double>(g); });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      "mul", a, b, [](float x, float y) { return x * y; }, [](float g, float, float y) { return g * y; },
      [](float g, float x, float) { return static_cast<double>(g) * x; });
}

inline Tensor mul_scalar(const Tensor& input, float s) {
  const auto x = input.data();
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * s;
  return detail::make_result("mul_scalar", input.shape(), std::move(out), {input}, [input, s](std::span<const float> g) {
    if (float* gi = detail::grad_sink(input))
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * s;
  });
}

inline Tensor sum(const Tensor& input) {
  double s = 0.0;
  for (float v : input.data()) s += v;
  return detail::make_result("sum", {1}, {static_cast<float>(s)}, {input}, [input](std::span<const float> g) {
    if (float* gi = detail::grad_sink(input))
      for (std::int64_t i = 0; i < input.numel(); ++i) gi[i] += g[0];
  });
}

inline Tensor mean(const Tensor& input) {
  double s = 0.0;
  for (float v : input.data()) s += v;
  const auto n = static_cast<double>(input.numel());
  return detail::make_result("mean", {1}, {static_cast<float>(s / n)}, {input}, [input, n](std::span<const float> g) {
    if (float* gi = detail::grad_sink(input)) {
      const auto share = static_cast<float>(g[0] / n);
      for (std::int64_t i = 0; i < input.numel(); ++i) gi[i] += share;
    }
  });
}

// Sum of squared entries, accumulated in double.
inline Tensor sum_squares(const Tensor& input) {
  double s = 0.0;
  for (float v : input.data()) s += static_cast<double>(v) * v;
  return detail::make_result("sum_squares", {1}, {static_cast<float>(s)}, {input}, [input](std::span<const float> g) {
    if (float* gi = detail::grad_sink(input)) {
      const auto x = input.data();
      for (std::size_t i = 0; i < x.size(); ++i) gi[i] += 2.0f * g[0] * x[i];
    }
  });
}

// Concatenation along the leading dimension.
inline Tensor concat0(const std::vector<Tensor>& parts) {
  if (parts.empty()) raise<ShapeError>("concat0: no inputs");
  Shape shape = parts.front().shape();
  std::int64_t lead = 0;
  std::vector<float> out;
  for (const auto& p : parts) {
    if (p.ndim() != static_cast<int>(shape.size()) || !std::equal(shape.begin() + 1, shape.end(), p.shape().begin() + 1)) {
      raise<ShapeError>("concat0: shape ", shape_str(p.shape()), " incompatible with ", shape_str(shape));
    }
    lead += p.dim(0);
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  shape[0] = lead;
  return detail::make_result("concat0", std::move(shape), std::move(out), parts, [parts](std::span<const float> g) {
    std::size_t off = 0;
    for (const auto& p : parts) {
      if (float* gp = detail::grad_sink(p))
        for (std::int64_t i = 0; i < p.numel(); ++i) gp[i] += g[off + static_cast<std::size_t>(i)];
      off += static_cast<std::size_t>(p.numel());
    }
  });
}

// Sample `index` of the leading dimension, keeping rank.
inline Tensor select0(const Tensor& input, std::int64_t index) {
  if (input.ndim() < 1 || index < 0 || index >= input.dim(0)) raise<ShapeError>("select0: index ", index, " out of range");
  Shape shape = input.shape();
  shape[0] = 1;
  const auto per = input.numel() / input.dim(0);
  const auto x = input.data();
  std::vector<float> out(x.begin() + index * per, x.begin() + (index + 1) * per);
  return detail::make_result("select0", std::move(shape), std::move(out), {input}, [=](std::span<const float> g) {
    if (float* gi = detail::grad_sink(input))
      for (std::int64_t i = 0; i < per; ++i) gi[index * per + i] += g[static_cast<std::size_t>(i)];
  });
}

// Non-overlapping k x k average pooling (floor on ragged edges).
inline Tensor avg_pool2d(const Tensor& input, int k = 2) {
  detail::require_rank(input, 4, "avg_pool2d", "input");
  const auto n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::int64_t ho = h / k, wo = w / k;
  if (ho < 1 || wo < 1) raise<ShapeError>("avg_pool2d: input ", h, "x", w, " smaller than window ", k);
  const auto x = input.data();
  const double inv = 1.0 / (k * k);
  std::vector<float> out(static_cast<std::size_t>(n * c * ho * wo));
  for (std::int64_t p = 0; p < n * c; ++p)
    for (std::int64_t y = 0; y < ho; ++y)
      for (std::int64_t xx = 0; xx < wo; ++xx) {
        double s = 0.0;
        for (int dy = 0; dy < k; ++dy)
          for (int dx = 0; dx < k; ++dx) s += x[static_cast<std::size_t>((p * h + y * k + dy) * w + xx * k + dx)];
        out[static_cast<std::size_t>((p * ho + y) * wo + xx)] = static_cast<float>(s * inv);
      }
  return detail::make_result("avg_pool2d", {n, c, ho, wo}, std::move(out), {input}, [=](std::span<const float> g) {
    float* gi = detail::grad_sink(input);
    if (!gi) return;
    for (std::int64_t p = 0; p < n * c; ++p)
      for (std::int64_t y = 0; y < ho; ++y)
        for (std::int64_t xx = 0; xx < wo; ++xx) {
          const auto share = static_cast<float>(g[static_cast<std::size_t>((p * ho + y) * wo + xx)] * inv);
          for (int dy = 0; dy < k; ++dy)
            for (int dx = 0; dx < k; ++dx) gi[(p * h + y * k + dy) * w + xx * k + dx] += share;
        }
  });
}

// Rearranges N x (r*r*O) x H x W into N x O x rH x rW. Channel (dy*r + dx)*O + o
// lands at offset (dy, dx) of each r x r block of output channel o.
inline Tensor pixel_shuffle(const Tensor& input, int r) {
  detail::require_rank(input, 4, "pixel_shuffle", "input");
  if (r < 1) raise<ShapeError>("pixel_shuffle: factor must be positive");
  const auto n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (cin % (r * r) != 0) raise<ShapeError>("pixel_shuffle: channel count ", cin, " not divisible by ", r * r);
  const std::int64_t co = cin / (r * r);
  const std::int64_t ho = h * r, wo = w * r;
  std::vector<std::int64_t> src(static_cast<std::size_t>(n * co * ho * wo));
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t o = 0; o < co; ++o)
      for (std::int64_t y = 0; y < ho; ++y)
        for (std::int64_t x = 0; x < wo; ++x) {
          const std::int64_t ch = ((y % r) * r + (x % r)) * co + o;
          src[static_cast<std::size_t>(((b * co + o) * ho + y) * wo + x)] = ((b * cin + ch) * h + y / r) * w + x / r;
        }
  const auto xv = input.data();
  std::vector<float> out(src.size());
  for (std::size_t k = 0; k < src.size(); ++k) out[k] = xv[static_cast<std::size_t>(src[k])];
  return detail::make_result("pixel_shuffle", {n, co, ho, wo}, std::move(out), {input}, [input, src](std::span<const float> g) {
    if (float* gi = detail::grad_sink(input))
      for (std::size_t k = 0; k < src.size(); ++k) gi[src[k]] += g[k];
  });
}

namespace detail {

struct LerpTap {
  std::int64_t lo, hi;
  double t;
};

// Half-pixel-center source coordinates, clamped to the valid range.
inline std::vector<LerpTap> bilinear_taps(std::int64_t in, std::int64_t out) {
  std::vector<LerpTap> taps(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::int64_t i = 0; i < out; ++i) {
    double s = (static_cast<double>(i) + 0.5) * scale - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<std::int64_t>(std::floor(s));
    const auto hi = std::min(lo + 1, in - 1);
    taps[static_cast<std::size_t>(i)] = {lo, hi, s - static_cast<double>(lo)};
  }
  return taps;
}

// Resamples `planes` stacked h x w planes to ho x wo.
inline std::vector<float> bilinear_planes(std::span<const float> x, std::int64_t planes, std::int64_t h, std::int64_t w,
                                          std::int64_t ho, std::int64_t wo) {
  const auto ty = bilinear_taps(h, ho), tx = bilinear_taps(w, wo);
  std::vector<float> out(static_cast<std::size_t>(planes * ho * wo));
  for (std::int64_t p = 0; p < planes; ++p) {
    const float* src = x.data() + p * h * w;
    for (std::int64_t y = 0; y < ho; ++y) {
      const auto& a = ty[static_cast<std::size_t>(y)];
      for (std::int64_t xx = 0; xx < wo; ++xx) {
        const auto& b = tx[static_cast<std::size_t>(xx)];
        const double v00 = src[a.lo * w + b.lo], v01 = src[a.lo * w + b.hi];
        const double v10 = src[a.hi * w + b.lo], v11 = src[a.hi * w + b.hi];
        const double top = v00 + b.t * (v01 - v00);
        const double bot = v10 + b.t * (v11 - v10);
        out[static_cast<std::size_t>((p * ho + y) * wo + xx)] = static_cast<float>(top + a.t * (bot - top));
      }
    }
  }
  return out;
}

}  // namespace detail

// Bilinear resampling of NCHW input with half-pixel-center alignment.
// Differentiable with respect to the input only.
inline Tensor bilinear_resize(const Tensor& input, std::int64_t out_h, std::int64_t out_w) {
  detail::require_rank(input, 4, "bilinear_resize", "input");
  if (out_h < 1 || out_w < 1) raise<ShapeError>("bilinear_resize: target size must be positive");
  const auto n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  auto out = detail::bilinear_planes(input.data(), n * c, h, w, out_h, out_w);
  return detail::make_result("bilinear_resize", {n, c, out_h, out_w}, std::move(out), {input}, [=](std::span<const float> g) {
    float* gi = detail::grad_sink(input);
    if (!gi) return;
    const auto ty = detail::bilinear_taps(h, out_h), tx = detail::bilinear_taps(w, out_w);
    std::vector<double> acc(static_cast<std::size_t>(h * w));
    for (std::int64_t p = 0; p < n * c; ++p) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::int64_t y = 0; y < out_h; ++y) {
        const auto& a = ty[static_cast<std::size_t>(y)];
        for (std::int64_t xx = 0; xx < out_w; ++xx) {
          const auto& b = tx[static_cast<std::size_t>(xx)];
          const double gv = g[static_cast<std::size_t>((p * out_h + y) * out_w + xx)];
          acc[static_cast<std::size_t>(a.lo * w + b.lo)] += gv * (1 - a.t) * (1 - b.t);
          acc[static_cast<std::size_t>(a.lo * w + b.hi)] += gv * (1 - a.t) * b.t;
          acc[static_cast<std::size_t>(a.hi * w + b.lo)] += gv * a.t * (1 - b.t);
          acc[static_cast<std::size_t>(a.hi * w + b.hi)] += gv * a.t * b.t;
        }
      }
      detail::accumulate(gi + p * h * w, acc);
    }
  });
}

}  // namespace msgnet
