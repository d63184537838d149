#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "msgnet/errors.hpp"

// Small dense double-precision helpers for C x C statistics matrices.
namespace msgnet::linalg {

// Row-major square matrix.
struct Matrix {
  std::int64_t n = 0;
  std::vector<double> a;

  Matrix() = default;
  explicit Matrix(std::int64_t size) : n(size), a(static_cast<std::size_t>(size * size), 0.0) {}

  static Matrix identity(std::int64_t size) {
    Matrix m(size);
    for (std::int64_t i = 0; i < size; ++i) m(i, i) = 1.0;
    return m;
  }

  double& operator()(std::int64_t i, std::int64_t j) { return a[static_cast<std::size_t>(i * n + j)]; }
  double operator()(std::int64_t i, std::int64_t j) const { return a[static_cast<std::size_t>(i * n + j)]; }
};

inline Matrix multiply(const Matrix& x, const Matrix& y) {
  if (x.n != y.n) raise<ShapeError>("matrix multiply: size mismatch ", x.n, " vs ", y.n);
  Matrix r(x.n);
  for (std::int64_t i = 0; i < x.n; ++i)
    for (std::int64_t k = 0; k < x.n; ++k) {
      const double v = x(i, k);
      for (std::int64_t j = 0; j < x.n; ++j) r(i, j) += v * y(k, j);
    }
  return r;
}

inline Matrix transpose(const Matrix& x) {
  Matrix r(x.n);
  for (std::int64_t i = 0; i < x.n; ++i)
    for (std::int64_t j = 0; j < x.n; ++j) r(j, i) = x(i, j);
  return r;
}

inline double trace(const Matrix& x) {
  double t = 0.0;
  for (std::int64_t i = 0; i < x.n; ++i) t += x(i, i);
  return t;
}

inline double frobenius(const Matrix& x) {
  double s = 0.0;
  for (double v : x.a) s += v * v;
  return std::sqrt(s);
}

// Plain Cholesky-Banachiewicz; empty when a pivot is not strictly positive.
inline std::optional<Matrix> try_cholesky(const Matrix& g) {
  Matrix l(g.n);
  for (std::int64_t j = 0; j < g.n; ++j) {
    double d = g(j, j);
    for (std::int64_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > 0.0) || !std::isfinite(d)) return std::nullopt;
    const double ljj = std::sqrt(d);
    l(j, j) = ljj;
    for (std::int64_t i = j + 1; i < g.n; ++i) {
      double s = g(i, j);
      for (std::int64_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / ljj;
    }
  }
  return l;
}

// Lower factor L with L L^T = G. When G is only semidefinite the factorization
// is retried once on G + jitter * I.
inline Matrix cholesky(const Matrix& g, double jitter = 0.0) {
  if (auto l = try_cholesky(g)) return *l;
  if (jitter > 0.0) {
    Matrix shifted = g;
    for (std::int64_t i = 0; i < g.n; ++i) shifted(i, i) += jitter;
    if (auto l = try_cholesky(shifted)) return *l;
  }
  raise<NumericError>("cholesky: matrix is not positive definite (after jitter ", jitter, ")");
}

// Inverse of a lower-triangular matrix by forward substitution.
inline Matrix invert_lower(const Matrix& l) {
  Matrix inv(l.n);
  for (std::int64_t col = 0; col < l.n; ++col) {
    for (std::int64_t i = col; i < l.n; ++i) {
      double s = (i == col) ? 1.0 : 0.0;
      for (std::int64_t k = col; k < i; ++k) s -= l(i, k) * inv(k, col);
      if (l(i, i) == 0.0) raise<NumericError>("invert_lower: zero diagonal entry at ", i);
      inv(i, col) = s / l(i, i);
    }
  }
  return inv;
}

}  // namespace msgnet::linalg
