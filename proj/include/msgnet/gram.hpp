#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "msgnet/errors.hpp"
#include "msgnet/linalg.hpp"
#include "msgnet/ops.hpp"
#include "msgnet/tensor.hpp"

namespace msgnet {

// Second-order channel statistics of one featuremap.
struct GramMatrix {
  Tensor values;  // C x C
  std::int64_t channels = 0;
  std::int64_t height = 0;
  std::int64_t width = 0;
  bool normalized = false;
};

// Per-sample Gram matrices of an N x C x H x W featuremap, N x C x C.
// Normalization divides by C*H*W.
inline Tensor batched_gram(const Tensor& features, bool normalize) {
  detail::require_rank(features, 4, "gram", "features");
  const auto n = features.dim(0), c = features.dim(1), m = features.dim(2) * features.dim(3);
  const double scale = normalize ? 1.0 / static_cast<double>(c * m) : 1.0;
  const auto f = features.data();
  std::vector<float> out(static_cast<std::size_t>(n * c * c));
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t i = 0; i < c; ++i) {
      const float* fi = f.data() + (b * c + i) * m;
      for (std::int64_t j = i; j < c; ++j) {
        const float* fj = f.data() + (b * c + j) * m;
        double s = 0.0;
        for (std::int64_t k = 0; k < m; ++k) s += static_cast<double>(fi[k]) * fj[k];
        const auto v = static_cast<float>(s * scale);
        out[static_cast<std::size_t>((b * c + i) * c + j)] = v;
        out[static_cast<std::size_t>((b * c + j) * c + i)] = v;
      }
    }
  return detail::make_result("gram", {n, c, c}, std::move(out), {features}, [=](std::span<const float> g) {
    float* gf = detail::grad_sink(features);
    if (!gf) return;
    const auto fv = features.data();
    // dF = (dG + dG^T) F * scale
    std::vector<double> row(static_cast<std::size_t>(m));
    for (std::int64_t b = 0; b < n; ++b)
      for (std::int64_t i = 0; i < c; ++i) {
        std::fill(row.begin(), row.end(), 0.0);
        for (std::int64_t j = 0; j < c; ++j) {
          const double sym = static_cast<double>(g[static_cast<std::size_t>((b * c + i) * c + j)]) +
                             g[static_cast<std::size_t>((b * c + j) * c + i)];
          const float* fj = fv.data() + (b * c + j) * m;
          for (std::int64_t k = 0; k < m; ++k) row[static_cast<std::size_t>(k)] += sym * fj[k];
        }
        float* dst = gf + (b * c + i) * m;
        for (std::int64_t k = 0; k < m; ++k) dst[k] += static_cast<float>(row[static_cast<std::size_t>(k)] * scale);
      }
  });
}

namespace detail {
inline Tensor as_nchw(const Tensor& features, const char* op) {
  if (features.ndim() == 3) return reshape(features, {1, features.dim(0), features.dim(1), features.dim(2)});
  if (features.ndim() == 4 && features.dim(0) == 1) return features;
  raise<ShapeError>(op, ": expected a C x H x W featuremap, got ", shape_str(features.shape()));
}
}  // namespace detail

// G = Phi(F) Phi(F)^T for a single C x H x W (or 1 x C x H x W) featuremap.
inline GramMatrix gram(const Tensor& features, bool normalize) {
  const Tensor f = detail::as_nchw(features, "gram");
  const auto c = f.dim(1);
  GramMatrix g;
  g.values = reshape(batched_gram(f, normalize), {c, c});
  g.channels = c;
  g.height = f.dim(2);
  g.width = f.dim(3);
  g.normalized = normalize;
  return g;
}

// CoMatch layer: Y = Phi^{-1}[ Phi(F)^T W G ]^T, i.e. every spatial feature
// vector is mapped by (W G)^T. Accepts C x H x W or N x C x H x W content
// features; the target Gram is shared across the batch.
inline Tensor comatch_forward(const Tensor& content, const Tensor& target_gram, const Tensor& weight) {
  const bool single = content.ndim() == 3;
  if (!single && content.ndim() != 4) raise<ShapeError>("comatch: content features must be C x H x W or N x C x H x W");
  const auto c = single ? content.dim(0) : content.dim(1);
  if (target_gram.ndim() != 2 || target_gram.dim(0) != c || target_gram.dim(1) != c) {
    raise<ShapeError>("comatch: target Gram must be ", c, " x ", c, ", got ", shape_str(target_gram.shape()));
  }
  if (weight.ndim() != 2 || weight.dim(0) != c || weight.dim(1) != c) {
    raise<ShapeError>("comatch: weight must be ", c, " x ", c, ", got ", shape_str(weight.shape()));
  }
  const Tensor mix = transpose(matmul(weight, target_gram));
  const Tensor f = single ? reshape(content, {1, c, content.dim(1), content.dim(2)}) : content;
  Tensor out = conv2d(f, reshape(mix, {c, c, 1, 1}));
  return single ? reshape(out, content.shape()) : out;
}

inline Tensor comatch_forward(const Tensor& content, const GramMatrix& target, const Tensor& weight) {
  return comatch_forward(content, target.values, weight);
}

inline linalg::Matrix to_matrix(const Tensor& square) {
  if (square.ndim() != 2 || square.dim(0) != square.dim(1)) raise<ShapeError>("expected a square matrix, got ", shape_str(square.shape()));
  linalg::Matrix m(square.dim(0));
  for (std::size_t i = 0; i < m.a.size(); ++i) m.a[i] = square.data()[i];
  return m;
}

inline Tensor to_tensor(const linalg::Matrix& m, bool requires_grad = false) {
  std::vector<float> v(m.a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(m.a[i]);
  return Tensor({m.n, m.n}, std::move(v), requires_grad);
}

// Lower Cholesky factor of a Gram matrix; retries with 1e-8 * trace jitter.
inline linalg::Matrix cholesky(const GramMatrix& g) {
  const auto m = to_matrix(g.values);
  return linalg::cholesky(m, 1e-8 * std::abs(linalg::trace(m)));
}

// ||Y - F_c||_F^2 + alpha ||G(Y) - G_s||_F^2, with G(Y) taken in the same
// normalization mode as the supplied target.
inline Tensor eval_objective(const Tensor& y, const Tensor& content, const GramMatrix& target, float alpha) {
  if (y.shape() != content.shape()) {
    raise<ShapeError>("objective: Y ", shape_str(y.shape()), " and content ", shape_str(content.shape()), " differ");
  }
  if (alpha < 0.0f) raise<ConfigError>("objective: alpha must be nonnegative");
  const Tensor content_term = sum_squares(sub(y, content));
  const GramMatrix gy = gram(y, target.normalized);
  if (gy.channels != target.channels) raise<ShapeError>("objective: Gram channel count mismatch");
  const Tensor style_term = sum_squares(sub(gy.values, target.values));
  return add(content_term, mul_scalar(style_term, alpha));
}

// Gram matrices at each matching site, extracted from one style image.
struct StyleEmbedding {
  std::vector<GramMatrix> grams;
  std::vector<int> scales;  // encoder stage index of each Gram
  std::string style_id;
  std::int64_t style_size = 0;
};

inline double frobenius_distance(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) raise<ShapeError>("frobenius_distance: shapes ", shape_str(a.shape()), " and ", shape_str(b.shape()));
  double s = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(a.data()[static_cast<std::size_t>(i)]) - b.data()[static_cast<std::size_t>(i)];
    s += d * d;
  }
  return std::sqrt(s);
}

inline double frobenius_norm(const Tensor& a) {
  double s = 0.0;
  for (float v : a.data()) s += static_cast<double>(v) * v;
  return std::sqrt(s);
}

// ||a - b|| / max(||a||, ||b||)
inline double relative_frobenius_distance(const Tensor& a, const Tensor& b) {
  const double denom = std::max(frobenius_norm(a), frobenius_norm(b));
  return denom > 0.0 ? frobenius_distance(a, b) / denom : 0.0;
}

// Per-site weighted sum of Gram matrices. Weights must sum to one.
inline StyleEmbedding interpolate_embeddings(const std::vector<StyleEmbedding>& embeddings,
                                             const std::vector<double>& weights) {
  if (embeddings.empty()) raise<ConfigError>("interpolate: no embeddings given");
  if (embeddings.size() != weights.size()) {
    raise<ConfigError>("interpolate: ", embeddings.size(), " embeddings but ", weights.size(), " weights");
  }
  double total = 0.0;
  for (double w : weights) total += w;
  if (std::abs(total - 1.0) > 1e-6) raise<ConfigError>("interpolate: weights sum to ", total, ", expected 1");

  const auto& first = embeddings.front();
  for (const auto& e : embeddings) {
    if (e.grams.size() != first.grams.size() || e.scales != first.scales) {
      raise<ShapeError>("interpolate: embeddings have different site structure");
    }
    for (std::size_t s = 0; s < e.grams.size(); ++s) {
      if (e.grams[s].channels != first.grams[s].channels || e.grams[s].normalized != first.grams[s].normalized) {
        raise<ShapeError>("interpolate: site ", s, " Gram matrices are incompatible");
      }
    }
  }

  StyleEmbedding out;
  out.scales = first.scales;
  out.style_id = "interpolated";
  out.style_size = first.style_size;
  for (std::size_t s = 0; s < first.grams.size(); ++s) {
    const auto c = first.grams[s].channels;
    std::vector<double> acc(static_cast<std::size_t>(c * c), 0.0);
    for (std::size_t k = 0; k < embeddings.size(); ++k) {
      if (weights[k] == 0.0) continue;
      const auto v = embeddings[k].grams[s].values.data();
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += weights[k] * v[i];
    }
    std::vector<float> vals(acc.size());
    for (std::size_t i = 0; i < acc.size(); ++i) vals[i] = static_cast<float>(acc[i]);
    GramMatrix g = first.grams[s];
    g.values = Tensor({c, c}, std::move(vals));
    out.grams.push_back(std::move(g));
  }
  return out;
}

}  // namespace msgnet
