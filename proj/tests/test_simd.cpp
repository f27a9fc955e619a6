#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "lenctl/simd/kernels.hpp"

using namespace lenctl::simd;

namespace {

template <typename Real>
void naive_gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, Real alpha,
                const std::vector<Real>& a, std::size_t lda, const std::vector<Real>& b,
                std::size_t ldb, Real beta, std::vector<Real>& c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      long double acc = 0;
      for (std::size_t p = 0; p < k; ++p) {
        const Real av = ta == Trans::kNo ? a[i * lda + p] : a[p * lda + i];
        const Real bv = tb == Trans::kNo ? b[p * ldb + j] : b[j * ldb + p];
        acc += static_cast<long double>(av) * bv;
      }
      const long double prev = beta == 0 ? 0 : static_cast<long double>(beta) * c[i * ldc + j];
      c[i * ldc + j] = static_cast<Real>(alpha * acc + prev);
    }
}

template <typename Real>
std::vector<Real> random_vec(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<Real> v(n);
  for (auto& x : v) x = static_cast<Real>(u(rng));
  return v;
}

template <typename Real>
void check_gemm(Isa isa, double tol) {
  const auto& K = kernels_for<Real>(isa);
  std::mt19937_64 rng(42);
  const std::size_t dims[] = {1, 2, 3, 4, 5, 7, 8, 9, 15, 16, 17, 33};
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t m = dims[rng() % 12], n = dims[rng() % 12], k = dims[rng() % 12];
    const Trans ta = rng() % 2 ? Trans::kYes : Trans::kNo;
    const Trans tb = rng() % 2 ? Trans::kYes : Trans::kNo;
    const std::size_t pad = rng() % 3;
    const std::size_t lda = (ta == Trans::kNo ? k : m) + pad;
    const std::size_t ldb = (tb == Trans::kNo ? n : k) + pad;
    const std::size_t ldc = n + pad;
    auto a = random_vec<Real>(rng, (ta == Trans::kNo ? m : k) * lda);
    auto b = random_vec<Real>(rng, (tb == Trans::kNo ? k : n) * ldb);
    const Real beta = trial % 3 == 0 ? Real(0) : Real(0.5);
    auto c = random_vec<Real>(rng, m * ldc);
    if (beta == 0) std::fill(c.begin(), c.end(), std::numeric_limits<Real>::quiet_NaN());
    auto expect = c;
    naive_gemm<Real>(ta, tb, m, n, k, Real(1.25), a, lda, b, ldb, beta, expect, ldc);
    K.gemm(ta, tb, m, n, k, Real(1.25), a.data(), lda, b.data(), ldb, beta, c.data(), ldc);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j)
        ASSERT_NEAR(c[i * ldc + j], expect[i * ldc + j], tol * (1 + std::abs(expect[i * ldc + j])))
            << isa_name(isa) << " m=" << m << " n=" << n << " k=" << k;
  }
}

template <typename Real>
void check_vec(Isa isa, double tol) {
  const auto& K = kernels_for<Real>(isa);
  std::mt19937_64 rng(7);
  for (std::size_t n : {0u, 1u, 3u, 4u, 7u, 8u, 15u, 16u, 17u, 100u}) {
    auto x = random_vec<Real>(rng, n), y = random_vec<Real>(rng, n);
    long double d = 0;
    for (std::size_t i = 0; i < n; ++i) d += static_cast<long double>(x[i]) * y[i];
    EXPECT_NEAR(K.dot(x.data(), y.data(), n), static_cast<double>(d), tol * (1 + n));
    auto y2 = y;
    K.axpy(n, Real(-0.75), x.data(), y2.data());
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(y2[i], y[i] - 0.75 * x[i], tol);
  }
}

}  // namespace

TEST(ScalarKernels, MatchNaive) {
  check_gemm<double>(Isa::kScalar, 1e-13);
  check_gemm<float>(Isa::kScalar, 1e-5);
  check_vec<double>(Isa::kScalar, 1e-13);
  check_vec<float>(Isa::kScalar, 1e-5);
}

TEST(Avx2Kernels, MatchNaive) {
  if (!isa_supported(Isa::kAvx2)) GTEST_SKIP() << "CPU lacks AVX2/FMA";
  check_gemm<double>(Isa::kAvx2, 1e-13);
  check_gemm<float>(Isa::kAvx2, 1e-5);
  check_vec<double>(Isa::kAvx2, 1e-13);
  check_vec<float>(Isa::kAvx2, 1e-5);
}

TEST(Avx2Kernels, AgreeWithScalar) {
  if (!isa_supported(Isa::kAvx2)) GTEST_SKIP() << "CPU lacks AVX2/FMA";
  std::mt19937_64 rng(3);
  const std::size_t m = 37, n = 29, k = 64;
  auto a = random_vec<double>(rng, m * k), b = random_vec<double>(rng, k * n);
  std::vector<double> c1(m * n), c2(m * n);
  kernels_for<double>(Isa::kScalar).gemm(Trans::kNo, Trans::kNo, m, n, k, 1, a.data(), k, b.data(), n, 0, c1.data(), n);
  kernels_for<double>(Isa::kAvx2).gemm(Trans::kNo, Trans::kNo, m, n, k, 1, a.data(), k, b.data(), n, 0, c2.data(), n);
  for (std::size_t i = 0; i < c1.size(); ++i) EXPECT_NEAR(c1[i], c2[i], 1e-12);
}

TEST(Dispatch, ScopedIsaRestores) {
  const Isa before = active_isa();
  {
    ScopedIsa s(Isa::kScalar);
    EXPECT_EQ(active_isa(), Isa::kScalar);
  }
  EXPECT_EQ(active_isa(), before);
  if (!isa_supported(Isa::kAvx2)) {
    EXPECT_THROW(set_active_isa(Isa::kAvx2), std::runtime_error);
  }
}
