#pragma once

// Reference implementations used only by tests. Nothing here calls into the
// library's kernels; each oracle is the textbook definition in double.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "msgnet/linalg.hpp"
#include "msgnet/ops.hpp"
#include "msgnet/rng.hpp"
#include "msgnet/tensor.hpp"

namespace oracle {

using msgnet::Shape;
using msgnet::Tensor;

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = false) {
  msgnet::Rng rng(seed);
  std::vector<float> v(static_cast<std::size_t>(msgnet::shape_numel(shape)));
  for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

// Plain 4-D array view in double.
struct Array4 {
  std::int64_t d0, d1, d2, d3;
  std::vector<double> v;
  Array4(std::int64_t a, std::int64_t b, std::int64_t c, std::int64_t d)
      : d0(a), d1(b), d2(c), d3(d), v(static_cast<std::size_t>(a * b * c * d), 0.0) {}
  explicit Array4(const Tensor& t) : Array4(t.dim(0), t.dim(1), t.dim(2), t.dim(3)) {
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = t.data()[i];
  }
  double& operator()(std::int64_t a, std::int64_t b, std::int64_t c, std::int64_t d) {
    return v[static_cast<std::size_t>(((a * d1 + b) * d2 + c) * d3 + d)];
  }
  double operator()(std::int64_t a, std::int64_t b, std::int64_t c, std::int64_t d) const {
    return v[static_cast<std::size_t>(((a * d1 + b) * d2 + c) * d3 + d)];
  }
};

inline std::int64_t mirror(std::int64_t i, std::int64_t n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * (n - 1) - i;
  return i;
}

// Direct cross-correlation definition with explicit padding lookup.
inline Array4 conv2d(const Array4& x, const Array4& w, const std::vector<double>& bias, int stride, int pad,
                     bool reflect) {
  const auto ho = (x.d2 + 2 * pad - w.d2) / stride + 1;
  const auto wo = (x.d3 + 2 * pad - w.d3) / stride + 1;
  Array4 out(x.d0, w.d0, ho, wo);
  for (std::int64_t n = 0; n < x.d0; ++n)
    for (std::int64_t o = 0; o < w.d0; ++o)
      for (std::int64_t y = 0; y < ho; ++y)
        for (std::int64_t xx = 0; xx < wo; ++xx) {
          double s = bias.empty() ? 0.0 : bias[static_cast<std::size_t>(o)];
          for (std::int64_t i = 0; i < x.d1; ++i)
            for (std::int64_t ky = 0; ky < w.d2; ++ky)
              for (std::int64_t kx = 0; kx < w.d3; ++kx) {
                std::int64_t iy = y * stride + ky - pad, ix = xx * stride + kx - pad;
                if (reflect) {
                  iy = mirror(iy, x.d2);
                  ix = mirror(ix, x.d3);
                } else if (iy < 0 || ix < 0 || iy >= x.d2 || ix >= x.d3) {
                  continue;
                }
                s += w(o, i, ky, kx) * x(n, i, iy, ix);
              }
          out(n, o, y, xx) = s;
        }
  return out;
}

// Transposed convolution by explicit scatter; weight is I x O x K x K.
inline Array4 conv2d_transposed(const Array4& x, const Array4& w, int stride, int output_padding = 0) {
  const auto ho = (x.d2 - 1) * stride + w.d2 + output_padding;
  const auto wo = (x.d3 - 1) * stride + w.d3 + output_padding;
  Array4 out(x.d0, w.d1, ho, wo);
  for (std::int64_t n = 0; n < x.d0; ++n)
    for (std::int64_t i = 0; i < x.d1; ++i)
      for (std::int64_t y = 0; y < x.d2; ++y)
        for (std::int64_t xx = 0; xx < x.d3; ++xx)
          for (std::int64_t o = 0; o < w.d1; ++o)
            for (std::int64_t ky = 0; ky < w.d2; ++ky)
              for (std::int64_t kx = 0; kx < w.d3; ++kx)
                out(n, o, y * stride + ky, xx * stride + kx) += x(n, i, y, xx) * w(i, o, ky, kx);
  return out;
}

inline double max_relative_diff(const std::vector<double>& ref, std::span<const float> got) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    num = std::max(num, std::abs(ref[i] - got[i]));
    den = std::max(den, std::abs(ref[i]));
  }
  return den > 0.0 ? num / den : num;
}

// Gram by the double sum over spatial positions of outer products.
inline msgnet::linalg::Matrix gram(const Tensor& f) {
  const auto c = f.dim(-3), h = f.dim(-2), w = f.dim(-1);
  msgnet::linalg::Matrix g(c);
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x)
      for (std::int64_t i = 0; i < c; ++i)
        for (std::int64_t j = 0; j < c; ++j)
          g(i, j) += static_cast<double>(f.data()[static_cast<std::size_t>((i * h + y) * w + x)]) *
                     f.data()[static_cast<std::size_t>((j * h + y) * w + x)];
  return g;
}

// Gauss-Jordan inverse with partial pivoting.
inline msgnet::linalg::Matrix inverse(msgnet::linalg::Matrix a) {
  const auto n = a.n;
  auto inv = msgnet::linalg::Matrix::identity(n);
  for (std::int64_t col = 0; col < n; ++col) {
    std::int64_t pivot = col;
    for (std::int64_t r = col + 1; r < n; ++r)
      if (std::abs(a(r, col)) > std::abs(a(pivot, col))) pivot = r;
    if (a(pivot, col) == 0.0) throw std::runtime_error("singular matrix");
    for (std::int64_t k = 0; k < n; ++k) {
      std::swap(a(col, k), a(pivot, k));
      std::swap(inv(col, k), inv(pivot, k));
    }
    const double d = a(col, col);
    for (std::int64_t k = 0; k < n; ++k) {
      a(col, k) /= d;
      inv(col, k) /= d;
    }
    for (std::int64_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = a(r, col);
      for (std::int64_t k = 0; k < n; ++k) {
        a(r, k) -= f * a(col, k);
        inv(r, k) -= f * inv(col, k);
      }
    }
  }
  return inv;
}

// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
inline std::vector<double> symmetric_eigenvalues(msgnet::linalg::Matrix a) {
  const auto n = a.n;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
    if (off < 1e-30) break;
    for (std::int64_t p = 0; p < n; ++p)
      for (std::int64_t q = p + 1; q < n; ++q) {
        if (std::abs(a(p, q)) < 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::int64_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::int64_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
      }
  }
  std::vector<double> ev(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) ev[static_cast<std::size_t>(i)] = a(i, i);
  std::sort(ev.begin(), ev.end());
  return ev;
}

struct GradCheck {
  double max_error = 0.0;  // worst tensor's max |analytic - numeric| over its scale (see check_gradients)
  double max_numeric = 0.0;
  int refined = 0;  // coordinates whose estimate came from a reduced step
  int skipped = 0;  // coordinates sitting on a kink even at the smallest step
  int probed = 0;
};

// Finite differences of a scalar function of several tensors, compared
// against the tape gradient. At most `max_coords` coordinates per tensor are
// probed (chosen by seed) to bound cost on large inputs.
//
// ReLU makes these functions piecewise smooth. A difference quotient is only a
// derivative estimate when every evaluation shares x's ReLU sign pattern. At
// each step (h, h/3, h/10, h/30) the central difference is used if x-h and x+h
// match; otherwise, near a kink, the second-order one-sided difference
// built from x, x+d and x+2d on a side whose two points match. One-sided
// steps keep f32 roundoff from swamping the estimate at tiny h. Coordinates
// that never settle are counted in `skipped`.
//
// Errors are relative to each tensor's largest numeric gradient, floored at
// 1e-3 of the largest over all tensors. A tensor whose whole gradient sits that
// far below the rest (a norm gain followed by another normalization, say) is
// at the f32 roundoff floor and has no meaningful scale of its own.
inline GradCheck check_gradients(const std::function<Tensor(const std::vector<Tensor>&)>& fn,
                                 std::vector<Tensor> inputs, double step = 1e-3, std::int64_t max_coords = 64,
                                 std::uint64_t seed = 7) {
  msgnet::Tape tape;
  msgnet::TapeScope scope(tape);
  for (auto& t : inputs) t.set_requires_grad(true);
  const Tensor out = fn(inputs);
  msgnet::backward(out);
  std::vector<std::vector<float>> analytic;
  for (const auto& t : inputs) analytic.emplace_back(t.grad().begin(), t.grad().end());
  tape.clear();

  GradCheck result;
  msgnet::NoGradGuard no_grad;
  std::uint64_t pattern = 0;
  msgnet::relu_pattern_sink() = &pattern;
  auto eval = [&](std::uint64_t& signature) {
    pattern = 1469598103934665603ull;
    const double v = fn(inputs).item();
    signature = pattern;
    return v;
  };
  msgnet::Rng rng(seed);
  std::vector<std::pair<double, double>> per_tensor;  // (max abs error, max abs numeric)
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto data = inputs[k].mutable_data();
    std::vector<std::size_t> coords;
    if (static_cast<std::int64_t>(data.size()) <= max_coords) {
      for (std::size_t i = 0; i < data.size(); ++i) coords.push_back(i);
    } else {
      for (std::int64_t c = 0; c < max_coords; ++c) coords.push_back(static_cast<std::size_t>(rng.below(data.size())));
    }
    double num_err = 0.0, den = 0.0;
    std::uint64_t p0 = 0;
    eval(p0);
    for (std::size_t i : coords) {
      ++result.probed;
      bool settled = false;
      double numeric = 0.0;
      constexpr std::array<double, 4> divisors{1.0, 3.0, 10.0, 30.0};
      for (std::size_t l = 0; l < divisors.size() && !settled; ++l) {
        const float orig = data[i];
        auto at = [&](double offset, std::uint64_t& sig) {
          data[i] = static_cast<float>(orig + offset);
          const double v = eval(sig);
          data[i] = orig;
          return v;
        };
        const double d = step / divisors[l];
        const double dp = static_cast<double>(static_cast<float>(orig + d)) - orig;
        const double dm = orig - static_cast<double>(static_cast<float>(orig - d));
        std::uint64_t pp = 0, pm = 0;
        const double fp = at(d, pp), fm = at(-d, pm);
        if (pp == p0 && pm == p0) {
          settled = true;
          numeric = (fp - fm) / (dp + dm);
        } else {
          for (const double dir : {1.0, -1.0}) {
            if ((dir > 0 ? pp : pm) != p0) continue;
            // three-point one-sided rule on the offsets f32 can actually represent
            const double a = static_cast<double>(static_cast<float>(orig + dir * d)) - orig;
            const double b = static_cast<double>(static_cast<float>(orig + 2.0 * dir * d)) - orig;
            std::uint64_t p2 = 0;
            const double fb = at(b, p2);
            if (p2 != p0) continue;
            std::uint64_t q = 0;
            const double f0 = at(0.0, q);
            settled = true;
            numeric = -(a + b) / (a * b) * f0 + b / (a * (b - a)) * (dir > 0 ? fp : fm) - a / (b * (b - a)) * fb;
            break;
          }
        }
        if (settled && l > 0) ++result.refined;
      }
      if (!settled) {
        ++result.skipped;
        continue;
      }
      num_err = std::max(num_err, std::abs(numeric - analytic[k][i]));
      den = std::max(den, std::abs(numeric));
    }
    result.max_numeric = std::max(result.max_numeric, den);
    per_tensor.emplace_back(num_err, den);
  }
  for (const auto& [err, den] : per_tensor) {
    const double scale = std::max(den, 1e-3 * result.max_numeric);
    result.max_error = std::max(result.max_error, scale > 0.0 ? err / scale : err);
  }
  msgnet::relu_pattern_sink() = nullptr;
  return result;
}

}  // namespace oracle
