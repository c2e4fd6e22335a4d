#include <gtest/gtest.h>

#include <cmath>

#include "armkit/activation.hpp"
#include "armkit/rng.hpp"
#include "armkit/tensor.hpp"

using namespace armkit;

namespace {

Tensor random_matrix(RngStream& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  Tensor t({r, c});
  for (auto& v : t.data()) v = static_cast<float>(scale * normal(rng));
  return t;
}

}  // namespace

TEST(Tensor, RejectsZeroDimensionsAndBadData) {
  EXPECT_THROW(Tensor({0, 3}), ShapeError);
  EXPECT_THROW(Tensor(Shape{}), ShapeError);
  EXPECT_THROW(Tensor({2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
}

TEST(Tensor, MatmulMatchesTripleLoop) {
  RngStream rng(11);
  for (int t = 0; t < 50; ++t) {
    const std::size_t m = 1 + rng.next_u64() % 9, k = 1 + rng.next_u64() % 9, n = 1 + rng.next_u64() % 9;
    const Tensor a = random_matrix(rng, m, k), b = random_matrix(rng, k, n);
    const Tensor c = matmul(a, b);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double ref = 0.0;
        for (std::size_t p = 0; p < k; ++p) ref += static_cast<double>(a(i, p)) * b(p, j);
        EXPECT_NEAR(c(i, j), ref, 1e-5 * (1.0 + std::abs(ref)));
      }
    }
  }
}

TEST(Tensor, MatmulInnerDimensionMismatchThrows) {
  EXPECT_THROW(matmul(Tensor({2, 3}), Tensor({2, 3})), ShapeError);
}

TEST(Tensor, TransposeTwiceIsIdentity) {
  RngStream rng(3);
  const Tensor a = random_matrix(rng, 4, 7);
  EXPECT_EQ(transpose(transpose(a)), a);
  EXPECT_EQ(transpose(a)(5, 2), a(2, 5));
}

TEST(Tensor, SoftmaxRowsAreDistributions) {
  RngStream rng(5);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 1 + rng.next_u64() % 12;
    const bool causal = t % 2 == 0;
    const Tensor logits = random_matrix(rng, n, n, 1.0 + static_cast<double>(t % 20));
    const Tensor p = softmax_rows(logits, causal);
    for (std::size_t i = 0; i < n; ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        ASSERT_GE(p(i, j), 0.0f);
        if (causal && j > i) {
          ASSERT_EQ(p(i, j), 0.0f);
        }
        sum += p(i, j);
      }
      ASSERT_NEAR(sum, 1.0, 1e-5);
    }
  }
}

TEST(Tensor, SoftmaxIsShiftInvariant) {
  const Tensor a = Tensor::matrix(1, 3, {1.0f, 2.0f, 3.0f});
  const Tensor b = Tensor::matrix(1, 3, {101.0f, 102.0f, 103.0f});
  const Tensor pa = softmax_rows(a, false), pb = softmax_rows(b, false);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(pa(0, j), pb(0, j), 1e-6);
}

TEST(Tensor, SoftmaxRejectsNonFinite) {
  const Tensor a = Tensor::matrix(1, 2, {1.0f, std::nanf("")});
  EXPECT_THROW(softmax_rows(a, false), ValueError);
}

TEST(Tensor, RmsnormIsScaleInvariantWithoutEps) {
  RngStream rng(9);
  for (int t = 0; t < 100; ++t) {
    const std::size_t d = 2 + rng.next_u64() % 30;
    Tensor64 x({d}), g({d}), xs({d});
    const double s = 0.01 + 100.0 * rng.next_unit();
    for (std::size_t i = 0; i < d; ++i) {
      x[i] = normal(rng);
      g[i] = 0.5 + rng.next_unit();
      xs[i] = s * x[i];
    }
    const Tensor64 a = rmsnorm(x, g, 0.0), b = rmsnorm(xs, g, 0.0);
    for (std::size_t i = 0; i < d; ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
    // unit gamma gives unit RMS
    Tensor64 one({d}, 1.0);
    const Tensor64 y = rmsnorm(x, one, 0.0);
    double ss = 0.0;
    for (auto v : y.data()) ss += v * v;
    EXPECT_NEAR(ss / static_cast<double>(d), 1.0, 1e-12);
  }
}

TEST(Tensor, RmsnormZeroInputWithZeroEpsIsZero) {
  Tensor x({4}, 0.0f), g({4}, 1.0f);
  const Tensor y = rmsnorm(x, g, 0.0f);
  for (auto v : y.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Tensor, RmsnormGammaLengthMismatchThrows) {
  EXPECT_THROW(rmsnorm(Tensor({4}, 1.0f), Tensor({3}, 1.0f), 0.0f), ShapeError);
}

TEST(Activation, DerivativesMatchFiniteDifferences) {
  for (Activation phi : {Activation::silu, Activation::gelu}) {
    for (double x = -4.0; x <= 4.0; x += 0.25) {
      const double h = 1e-5;
      const double d1 = (activate(x + h, phi) - activate(x - h, phi)) / (2 * h);
      const double d2 = (activate_d1(x + h, phi) - activate_d1(x - h, phi)) / (2 * h);
      EXPECT_NEAR(activate_d1(x, phi), d1, 1e-8);
      EXPECT_NEAR(activate_d2(x, phi), d2, 1e-8);
    }
  }
}

TEST(Activation, KnownValues) {
  EXPECT_DOUBLE_EQ(activate(0.0, Activation::silu), 0.0);
  EXPECT_DOUBLE_EQ(activate(0.0, Activation::gelu), 0.0);
  EXPECT_NEAR(activate(1.0, Activation::silu), 1.0 / (1.0 + std::exp(-1.0)), 1e-15);
  EXPECT_NEAR(activate(1.0, Activation::gelu), 0.8411919906082768, 1e-12);
}
