#include <gtest/gtest.h>

#include <cmath>

#include "msgnet/gram.hpp"
#include "msgnet/linalg.hpp"
#include "support/oracles.hpp"

using namespace msgnet;
using linalg::Matrix;

namespace {

double max_abs(std::span<const float> v) {
  double m = 0.0;
  for (float x : v) m = std::max(m, static_cast<double>(std::abs(x)));
  return m;
}

// Random PSD matrix B B^T + shift I.
Matrix random_spd(std::int64_t n, std::uint64_t seed, double shift) {
  Rng rng(seed);
  Matrix b(n);
  for (double& v : b.a) v = rng.uniform(-1.0, 1.0);
  Matrix g = linalg::multiply(b, linalg::transpose(b));
  for (std::int64_t i = 0; i < n; ++i) g(i, i) += shift;
  return g;
}

double relative_matrix_error(const Matrix& a, const Matrix& ref) {
  double d = 0.0, n = 0.0;
  for (std::size_t i = 0; i < a.a.size(); ++i) {
    d += std::pow(a.a[i] - ref.a[i], 2);
    n += std::pow(ref.a[i], 2);
  }
  return std::sqrt(d / n);
}

}  // namespace

TEST(Gram, ZerosAndHandFixture) {
  const GramMatrix z = gram(Tensor::zeros({3, 2, 2}), false);
  for (float v : z.values.data()) EXPECT_EQ(v, 0.0f);
  const GramMatrix g = gram(Tensor({1, 1, 2}, {1.0f, 2.0f}), false);
  EXPECT_EQ(g.values.values(), (std::vector<float>{5.0f}));
  EXPECT_EQ(gram(Tensor({1, 1, 2}, {1.0f, 2.0f}), true).values.item(), 2.5f);
  EXPECT_EQ(g.channels, 1);
  EXPECT_EQ(g.width, 2);
}

TEST(Gram, MatchesDoubleSumOracle) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Tensor f = oracle::random_tensor({5, 3, 4}, seed);
    const auto ref = oracle::gram(f);
    EXPECT_LT(oracle::max_relative_diff(ref.a, gram(f, false).values.data()), 1e-6);
  }
}

// Symmetry, PSD, permutation invariance and quadratic scaling on 20 featuremaps.
TEST(Gram, Properties) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const auto c = 1 + static_cast<std::int64_t>(rng.below(6));
    const auto h = 1 + static_cast<std::int64_t>(rng.below(4));
    const auto w = 1 + static_cast<std::int64_t>(rng.below(4));
    const Tensor f = oracle::random_tensor({c, h, w}, 1000 + seed);
    const Tensor g = gram(f, seed % 2 == 0).values;
    const auto gv = g.data();
    const double gmax = max_abs(gv);
    for (std::int64_t i = 0; i < c; ++i)
      for (std::int64_t j = 0; j < c; ++j)
        EXPECT_LE(std::abs(gv[static_cast<std::size_t>(i * c + j)] - gv[static_cast<std::size_t>(j * c + i)]), 1e-5 * gmax);

    const auto m = to_matrix(g);
    const auto ev = oracle::symmetric_eigenvalues(m);
    EXPECT_GE(ev.front(), -1e-6 * linalg::trace(m));

    // spatial permutation of all channels jointly
    std::vector<std::size_t> perm(static_cast<std::size_t>(h * w));
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    std::vector<float> pv(f.data().begin(), f.data().end());
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::size_t k = 0; k < perm.size(); ++k)
        pv[static_cast<std::size_t>(ch) * perm.size() + k] = f.data()[static_cast<std::size_t>(ch) * perm.size() + perm[k]];
    const Tensor gp = gram(Tensor(f.shape(), pv), seed % 2 == 0).values;
    for (std::size_t i = 0; i < gv.size(); ++i) EXPECT_EQ(gp.data()[i], gv[i]);

    const float s = static_cast<float>(rng.uniform(0.5, 3.0));
    const Tensor gs = gram(mul_scalar(f, s), seed % 2 == 0).values;
    double d = 0.0;
    for (std::size_t i = 0; i < gv.size(); ++i) d = std::max(d, std::abs(gs.data()[i] - static_cast<double>(s) * s * gv[i]));
    EXPECT_LE(d, 1e-5 * static_cast<double>(s) * s * gmax);
  }
}

TEST(Cholesky, Fixtures) {
  const auto eye = linalg::cholesky(Matrix::identity(3));
  EXPECT_EQ(eye.a, Matrix::identity(3).a);

  Matrix g(2);
  g.a = {4, 2, 2, 5};
  const auto l = linalg::cholesky(g);
  EXPECT_EQ(l.a, (std::vector<double>{2, 0, 1, 2}));
}

TEST(Cholesky, ReconstructsRandomPsd) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Matrix g = random_spd(5, seed, 0.0);
    GramMatrix gm;
    gm.values = to_tensor(g);
    gm.channels = 5;
    const Matrix l = cholesky(gm);
    for (std::int64_t i = 0; i < 5; ++i) {
      EXPECT_GE(l(i, i), 0.0);
      for (std::int64_t j = i + 1; j < 5; ++j) EXPECT_EQ(l(i, j), 0.0);
    }
    EXPECT_LT(relative_matrix_error(linalg::multiply(l, linalg::transpose(l)), to_matrix(gm.values)), 1e-5);
  }
}

TEST(Cholesky, RankDeficientUsesJitterAndIndefiniteFails) {
  GramMatrix rank_one;
  rank_one.values = Tensor({2, 2}, {1, 1, 1, 1});
  rank_one.channels = 2;
  const Matrix l = cholesky(rank_one);
  EXPECT_LT(relative_matrix_error(linalg::multiply(l, linalg::transpose(l)), to_matrix(rank_one.values)), 1e-5);

  GramMatrix bad;
  bad.values = Tensor({2, 2}, {1, 0, 0, -1});
  bad.channels = 2;
  EXPECT_THROW(cholesky(bad), NumericError);
}

TEST(CoMatch, InverseWeightReturnsContent) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const std::int64_t cs[3] = {3, 4, 8};
    const auto c = cs[seed % 3];
    const auto hw = seed % 2 == 0 ? 2 : 4;
    const Tensor fc = oracle::random_tensor({c, hw, hw}, 10 + seed);
    const GramMatrix gs = gram(oracle::random_tensor({c, 4, 4}, 20 + seed), true);
    const Tensor w = to_tensor(oracle::inverse(to_matrix(gs.values)));
    const Tensor y = comatch_forward(fc, gs, w);
    ASSERT_EQ(y.shape(), fc.shape());
    EXPECT_LT(oracle::max_relative_diff(std::vector<double>(fc.data().begin(), fc.data().end()), y.data()), 1e-4);
    EXPECT_LT(eval_objective(y, fc, gs, 0.0f).item(), 1e-6);
  }
}

TEST(CoMatch, CholeskyWeightMatchesStyleGram) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Tensor fc = oracle::random_tensor({4, 2, 2}, 30 + seed);
    Matrix phi(4);
    for (std::size_t i = 0; i < 16; ++i) phi.a[i] = fc.data()[i];
    const Matrix g = random_spd(4, 40 + seed, 0.1);
    const Matrix l = linalg::cholesky(g);
    const Matrix w = linalg::multiply(linalg::transpose(oracle::inverse(phi)), oracle::inverse(l));
    GramMatrix gs;
    gs.values = to_tensor(g);
    gs.channels = 4;
    const Tensor y = comatch_forward(fc, gs, to_tensor(w));
    const Matrix gy = to_matrix(gram(y, false).values);
    EXPECT_LT(relative_matrix_error(gy, g), 1e-3) << "seed " << seed;
  }
}

TEST(CoMatch, ZeroWeightAndShapeErrors) {
  const Tensor fc = oracle::random_tensor({3, 2, 2}, 1);
  const GramMatrix gs = gram(oracle::random_tensor({3, 3, 3}, 2), true);
  const Tensor zero = comatch_forward(fc, gs, Tensor::zeros({3, 3}));
  for (float v : zero.data()) EXPECT_EQ(v, 0.0f);
  EXPECT_THROW(comatch_forward(fc, gs, Tensor::zeros({4, 4})), ShapeError);
  EXPECT_THROW(comatch_forward(oracle::random_tensor({4, 2, 2}, 3), gs, Tensor::zeros({3, 3})), ShapeError);
}

TEST(CoMatch, BatchedMatchesPerSample) {
  const Tensor f = oracle::random_tensor({2, 3, 2, 3}, 5);
  const Tensor g = gram(oracle::random_tensor({3, 4, 4}, 6), true).values;
  const Tensor w = oracle::random_tensor({3, 3}, 7);
  const Tensor y = comatch_forward(f, g, w);
  for (std::int64_t n = 0; n < 2; ++n) {
    const Tensor yn = comatch_forward(select0(f, n), g, w);
    const auto base = static_cast<std::size_t>(n * 18);
    for (std::size_t i = 0; i < 18; ++i) EXPECT_EQ(y.data()[base + i], yn.data()[i]);
  }
}

class GramGradient : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(GramGradient, GramAndCoMatch) {
  const std::uint64_t s = GetParam() * 17 + 3;
  const auto r = oracle::check_gradients(
      [&](const std::vector<Tensor>& in) { return sum(mul(gram(in[0], true).values, oracle::random_tensor({3, 3}, s))); },
      {oracle::random_tensor({3, 3, 2}, s + 1)});
  EXPECT_LT(r.max_error, 1e-2);
  const auto rc = oracle::check_gradients(
      [&](const std::vector<Tensor>& in) { return sum(mul(comatch_forward(in[0], in[1], in[2]), oracle::random_tensor({3, 2, 4}, s + 2))); },
      {oracle::random_tensor({3, 2, 4}, s + 3), oracle::random_tensor({3, 3}, s + 4), oracle::random_tensor({3, 3}, s + 5)});
  EXPECT_LT(rc.max_error, 1e-2);
}

INSTANTIATE_TEST_SUITE_P(Seeds, GramGradient, ::testing::Range<std::uint64_t>(0, 10));

TEST(Objective, FixturesAndOracle) {
  const Tensor f = oracle::random_tensor({3, 2, 2}, 50);
  EXPECT_EQ(eval_objective(f, f, gram(f, true), 2.0f).item(), 0.0f);

  const Tensor y = oracle::random_tensor({3, 2, 2}, 51);
  double content = 0.0;
  for (std::size_t i = 0; i < 12; ++i) content += std::pow(static_cast<double>(y.data()[i]) - f.data()[i], 2);
  EXPECT_NEAR(eval_objective(y, f, gram(f, true), 0.0f).item(), content, 1e-5 * content);

  const GramMatrix gs = gram(oracle::random_tensor({3, 3, 3}, 52), false);
  const auto gy = oracle::gram(y);
  double style = 0.0;
  for (std::size_t i = 0; i < 9; ++i) style += std::pow(gy.a[i] - gs.values.data()[i], 2);
  const double expected = content + 0.7 * style;
  EXPECT_NEAR(eval_objective(y, f, gs, 0.7f).item(), expected, 1e-5 * expected);
}

namespace {
StyleEmbedding embedding_of(const std::vector<Tensor>& grams) {
  StyleEmbedding e;
  for (std::size_t i = 0; i < grams.size(); ++i) {
    GramMatrix g;
    g.values = grams[i];
    g.channels = grams[i].dim(0);
    g.normalized = true;
    e.grams.push_back(g);
    e.scales.push_back(static_cast<int>(i) + 1);
  }
  return e;
}
}  // namespace

TEST(Interpolate, EndpointsAndConvexity) {
  const auto a = embedding_of({gram(oracle::random_tensor({4, 3, 3}, 60), true).values});
  const auto b = embedding_of({gram(oracle::random_tensor({4, 3, 3}, 61), true).values});
  EXPECT_EQ(interpolate_embeddings({a, b}, {1.0, 0.0}).grams[0].values.values(), a.grams[0].values.values());
  EXPECT_EQ(interpolate_embeddings({a, b}, {0.0, 1.0}).grams[0].values.values(), b.grams[0].values.values());
  EXPECT_EQ(interpolate_embeddings({a, a}, {0.5, 0.5}).grams[0].values.values(), a.grams[0].values.values());
  for (double t : {0.1, 0.3, 0.5, 0.9}) {
    const auto m = to_matrix(interpolate_embeddings({a, b}, {1.0 - t, t}).grams[0].values);
    EXPECT_GE(oracle::symmetric_eigenvalues(m).front(), -1e-6 * linalg::trace(m));
  }
}

TEST(Interpolate, Errors) {
  const auto a = embedding_of({gram(oracle::random_tensor({4, 3, 3}, 60), true).values});
  const auto c = embedding_of({gram(oracle::random_tensor({3, 3, 3}, 62), true).values});
  EXPECT_THROW(interpolate_embeddings({a, a}, {0.5, 0.6}), ConfigError);
  EXPECT_THROW(interpolate_embeddings({a, c}, {0.5, 0.5}), ShapeError);
  EXPECT_THROW(interpolate_embeddings({a}, {0.5, 0.5}), ConfigError);
}

TEST(Oracles, JacobiEigenvalues) {
  Matrix m(2);
  m.a = {2, 1, 1, 2};
  const auto ev = oracle::symmetric_eigenvalues(m);
  EXPECT_NEAR(ev[0], 1.0, 1e-12);
  EXPECT_NEAR(ev[1], 3.0, 1e-12);
}
