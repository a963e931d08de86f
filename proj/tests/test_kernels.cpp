#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "rlrelay/kernels.hpp"
#include "rlrelay/rng.hpp"

using namespace rlrelay;
namespace k = rlrelay::kernels;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

double rel_gap(double a, double b) {
  return std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b)));
}

class KernelEquivalence : public ::testing::Test {
 protected:
  void SetUp() override {
    if (k::avx2_table() == nullptr || !k::cpu_supports(k::Variant::avx2)) {
      GTEST_SKIP() << "AVX2 variant unavailable on this host";
    }
  }
  const k::KernelTable& s = k::scalar_table();
  const k::KernelTable& v = *k::avx2_table();
  // Odd sizes exercise the scalar tails.
  const std::vector<std::size_t> sizes{0, 1, 3, 4, 7, 8, 9, 31, 64, 129, 1000};
};

}  // namespace

TEST_F(KernelEquivalence, Dot) {
  Rng rng(1);
  for (std::size_t n : sizes) {
    const auto a = random_vec(rng, n), b = random_vec(rng, n);
    EXPECT_LT(rel_gap(s.dot(a.data(), b.data(), n), v.dot(a.data(), b.data(), n)), 1e-13) << n;
  }
}

TEST_F(KernelEquivalence, Axpy) {
  Rng rng(2);
  for (std::size_t n : sizes) {
    const auto x = random_vec(rng, n);
    auto y1 = random_vec(rng, n);
    auto y2 = y1;
    s.axpy(0.37, x.data(), y1.data(), n);
    v.axpy(0.37, x.data(), y2.data(), n);
    for (std::size_t i = 0; i < n; ++i) EXPECT_LT(rel_gap(y1[i], y2[i]), 1e-15);
  }
}

TEST_F(KernelEquivalence, Gemv) {
  Rng rng(3);
  for (std::size_t rows : {1u, 3u, 4u, 11u, 128u}) {
    for (std::size_t cols : {1u, 5u, 8u, 50u, 256u}) {
      const auto w = random_vec(rng, rows * cols), b = random_vec(rng, rows),
                 x = random_vec(rng, cols);
      std::vector<double> y1(rows), y2(rows);
      s.gemv(w.data(), b.data(), x.data(), y1.data(), rows, cols);
      v.gemv(w.data(), b.data(), x.data(), y2.data(), rows, cols);
      for (std::size_t r = 0; r < rows; ++r) EXPECT_LT(rel_gap(y1[r], y2[r]), 1e-13);
    }
  }
}

TEST_F(KernelEquivalence, Lerp) {
  Rng rng(4);
  for (std::size_t n : sizes) {
    const auto x = random_vec(rng, n);
    auto y1 = random_vec(rng, n);
    auto y2 = y1;
    s.lerp(0.005, x.data(), y1.data(), n);
    v.lerp(0.005, x.data(), y2.data(), n);
    for (std::size_t i = 0; i < n; ++i) EXPECT_LT(rel_gap(y1[i], y2[i]), 1e-15);
  }
}

TEST_F(KernelEquivalence, Adam) {
  Rng rng(5);
  for (std::size_t n : sizes) {
    auto p1 = random_vec(rng, n), m1 = random_vec(rng, n, -0.1, 0.1),
         v1 = random_vec(rng, n, 0.0, 0.01);
    auto p2 = p1, m2 = m1, v2 = v1;
    for (int step = 1; step <= 5; ++step) {
      const auto g = random_vec(rng, n);
      const double ss = 1e-3 / (1 - std::pow(0.9, step));
      const double ib = 1 / (1 - std::pow(0.999, step));
      s.adam(p1.data(), g.data(), m1.data(), v1.data(), n, 0.9, 0.999, ss, ib, 1e-8);
      v.adam(p2.data(), g.data(), m2.data(), v2.data(), n, 0.9, 0.999, ss, ib, 1e-8);
    }
    for (std::size_t i = 0; i < n; ++i) {
      EXPECT_LT(rel_gap(p1[i], p2[i]), 1e-14);
      EXPECT_LT(rel_gap(m1[i], m2[i]), 1e-14);
      EXPECT_LT(rel_gap(v1[i], v2[i]), 1e-14);
    }
  }
}

TEST_F(KernelEquivalence, ReluIncludingNan) {
  Rng rng(6);
  for (std::size_t n : sizes) {
    auto x1 = random_vec(rng, n);
    if (n > 2) x1[n / 2] = std::nan("");
    auto x2 = x1;
    s.relu(x1.data(), n);
    v.relu(x2.data(), n);
    for (std::size_t i = 0; i < n; ++i) {
      if (std::isnan(x1[i])) EXPECT_TRUE(std::isnan(x2[i]));
      else EXPECT_EQ(x1[i], x2[i]);
    }
  }
}

TEST(Kernels, ScalarReferenceValues) {
  const auto& s = k::scalar_table();
  const double a[] = {1, 2, 3}, b[] = {4, 5, 6};
  EXPECT_EQ(s.dot(a, b, 3), 32.0);
  const double w[] = {1, 0, 0, 1, 1, 1}, bias[] = {0.5, -1};
  double y[2];
  s.gemv(w, bias, a, y, 2, 3);
  EXPECT_EQ(y[0], 1.5);
  EXPECT_EQ(y[1], 5.0);
  double t[] = {0.0};
  const double one[] = {1.0};
  s.lerp(0.005, one, t, 1);
  EXPECT_EQ(t[0], 0.005);
}

TEST(Kernels, SelectionFallsBackSafely) {
  EXPECT_TRUE(k::select(k::Variant::scalar));
  EXPECT_EQ(k::active().variant, k::Variant::scalar);
  if (k::cpu_supports(k::Variant::avx2)) {
    EXPECT_TRUE(k::select(k::Variant::avx2));
    EXPECT_EQ(k::active().variant, k::Variant::avx2);
  }
  EXPECT_EQ(k::name(k::Variant::avx2), "avx2");
}
