#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "meshrt/errors.hpp"
#include "meshrt/rng.hpp"
#include "meshrt/tensor.hpp"

using namespace meshrt;

namespace {

// Reference product with the same k-ascending summation order.
template <class T>
Tensor<T> naive_matmul(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> c({a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      T s = 0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

// Largest singular values by power iteration on XᵀX with deflation.
std::vector<double> power_singular_values(const Tensor<double>& x, int count) {
  Tensor<double> g = matmul_tn(x, x);
  const std::size_t n = g.rows();
  std::vector<double> out;
  Rng rng(123, 9);
  for (int c = 0; c < count; ++c) {
    std::vector<double> v(n);
    for (auto& e : v) e = rng.normal();
    double lambda = 0.0;
    for (int it = 0; it < 20000; ++it) {
      std::vector<double> w(n, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) w[i] += g(i, j) * v[j];
      double norm = 0.0;
      for (double e : w) norm += e * e;
      norm = std::sqrt(norm);
      for (auto& e : w) e /= norm;
      const double prev = lambda;
      lambda = norm;
      v = w;
      if (it > 50 && std::abs(lambda - prev) <= 1e-15 * lambda) break;
    }
    out.push_back(std::sqrt(lambda));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) g(i, j) -= lambda * v[i] * v[j];
  }
  return out;
}

}  // namespace

TEST(Tensor, ConstructionAndAccess) {
  auto m = Tensor<double>::matrix({{1, 2, 3}, {4, 5, 6}});
  EXPECT_EQ(m.rows(), 2u);
  EXPECT_EQ(m.cols(), 3u);
  EXPECT_EQ(m(1, 2), 6.0);
  EXPECT_EQ(Tensor<float>({2, 2}).data()[3], 0.0f);
  EXPECT_THROW(Tensor<double>({2, 2}, std::vector<double>(3)), ShapeError);
}

TEST(Tensor, MatmulMatchesNaiveBitwise) {
  Rng rng(1);
  for (auto [n, k, m] : {std::tuple{1, 1, 1}, {3, 7, 5}, {17, 64, 130}, {64, 33, 257}, {5, 200, 9}}) {
    const auto a = randn<double>(rng, {std::size_t(n), std::size_t(k)});
    const auto b = randn<double>(rng, {std::size_t(k), std::size_t(m)});
    EXPECT_EQ(matmul(a, b), naive_matmul(a, b)) << n << "x" << k << "x" << m;
    const auto af = a.cast<float>(), bf = b.cast<float>();
    EXPECT_EQ(matmul(af, bf), naive_matmul(af, bf));
    EXPECT_EQ(matmul_tn(transpose(a), b), naive_matmul(a, b));
    EXPECT_EQ(matmul_nt(a, transpose(b)), naive_matmul(a, b));
  }
}

TEST(Tensor, MatmulShapeMismatch) {
  EXPECT_THROW(matmul(Tensor<double>({2, 3}), Tensor<double>({2, 3})), ShapeError);
  EXPECT_THROW(add(Tensor<double>({2, 3}), Tensor<double>({3, 2})), ShapeError);
}

TEST(Tensor, SoftmaxRowsSumToOneAndResistOverflow) {
  auto x = Tensor<double>::matrix({{1000, 1001, 1002}, {-5, 0, 5}, {0, 0, 0}});
  const auto s = softmax_rows(x);
  for (std::size_t r = 0; r < 3; ++r) {
    double sum = 0;
    for (std::size_t c = 0; c < 3; ++c) sum += s(r, c);
    EXPECT_NEAR(sum, 1.0, 1e-15);
  }
  EXPECT_NEAR(s(2, 0), 1.0 / 3.0, 1e-16);
  EXPECT_NEAR(s(0, 2) / s(0, 1), std::exp(1.0), 1e-12);
}

TEST(Tensor, CheckFiniteNamesTheSite) {
  auto x = Tensor<double>::vector({1.0, NAN});
  try {
    check_finite(x, "probe");
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("probe"), std::string::npos);
  }
}

TEST(Tensor, JacobiEigenvaluesOfKnownMatrices) {
  const auto ev = symmetric_eigenvalues(Tensor<double>::matrix({{2, 1}, {1, 2}}));
  ASSERT_EQ(ev.size(), 2u);
  EXPECT_NEAR(ev[0], 3.0, 1e-12);
  EXPECT_NEAR(ev[1], 1.0, 1e-12);

  // Q·diag·Qᵀ recovers the chosen spectrum.
  Rng rng(4);
  const auto q = random_orthogonal(rng, 6);
  Tensor<double> d({6, 6});
  const double vals[] = {9, 7, 4, 2, 1, 0.5};
  for (int i = 0; i < 6; ++i) d(i, i) = vals[i];
  const auto a = matmul(matmul(q, d), transpose(q));
  const auto got = symmetric_eigenvalues(a);
  for (int i = 0; i < 6; ++i) EXPECT_NEAR(got[i], vals[i], 1e-10);
}

TEST(Tensor, SingularValuesMatchPowerIteration) {
  Rng rng(5);
  const auto x = randn<double>(rng, {256, 128});
  const auto sv = singular_values(x, 5);
  const auto ref = power_singular_values(x, 5);
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(sv[i] / ref[i], 1.0, 1e-6) << i;
}

TEST(Tensor, SingularValuesOfRankOne) {
  Tensor<double> x({4, 3});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j) x(i, j) = double(i + 1) * double(j + 2);
  const auto sv = singular_values(x, 3);
  EXPECT_GT(sv[0], 1.0);
  EXPECT_LT(sv[1] / sv[0], 1e-7);
}

TEST(Rng, ReproducibleAndSplitIndependent) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a(), b());
  Rng c = Rng(42).split(1), d = Rng(42).split(2);
  int equal = 0;
  for (int i = 0; i < 100; ++i) equal += c() == d();
  EXPECT_EQ(equal, 0);
}

TEST(Rng, NormalMoments) {
  Rng rng(7);
  double s = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(Rng, BelowStaysInRange) {
  Rng rng(3);
  std::vector<int> hist(7, 0);
  for (int i = 0; i < 7000; ++i) ++hist[rng.below(7)];
  for (int h : hist) EXPECT_GT(h, 800);
}

TEST(Rng, RandomOrthogonalIsOrthogonal) {
  Rng rng(8);
  const auto q = random_orthogonal(rng, 9);
  const auto i = matmul_tn(q, q);
  for (std::size_t r = 0; r < 9; ++r)
    for (std::size_t c = 0; c < 9; ++c) EXPECT_NEAR(i(r, c), r == c ? 1.0 : 0.0, 1e-13);
}
