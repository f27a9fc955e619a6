// AVX2 + FMA kernels. This translation unit is compiled with -mavx2 -mfma and
// must only be entered after a runtime feature check. It deliberately avoids
// standard-library templates so no AVX2-compiled inline instantiation can be
// picked up by the linker for scalar callers.

#if !defined(__AVX2__) || !defined(__FMA__)
#error "kernels_avx2.cpp must be compiled with -mavx2 -mfma"
#endif

#include <immintrin.h>

#include "kernels_impl.hpp"

namespace lenctl::simd::avx2 {

namespace {

struct F32 {
  using T = float;
  using V = __m256;
  static constexpr std::size_t kLanes = 8;
  static V zero() { return _mm256_setzero_ps(); }
  static V set1(T x) { return _mm256_set1_ps(x); }
  static V load(const T* p) { return _mm256_loadu_ps(p); }
  static void store(T* p, V v) { _mm256_storeu_ps(p, v); }
  static V fmadd(V a, V b, V c) { return _mm256_fmadd_ps(a, b, c); }
  static V mul(V a, V b) { return _mm256_mul_ps(a, b); }
  static T hsum(V v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    __m128 shuf = _mm_movehdup_ps(lo);
    __m128 sums = _mm_add_ps(lo, shuf);
    shuf = _mm_movehl_ps(shuf, sums);
    sums = _mm_add_ss(sums, shuf);
    return _mm_cvtss_f32(sums);
  }
};

struct F64 {
  using T = double;
  using V = __m256d;
  static constexpr std::size_t kLanes = 4;
  static V zero() { return _mm256_setzero_pd(); }
  static V set1(T x) { return _mm256_set1_pd(x); }
  static V load(const T* p) { return _mm256_loadu_pd(p); }
  static void store(T* p, V v) { _mm256_storeu_pd(p, v); }
  static V fmadd(V a, V b, V c) { return _mm256_fmadd_pd(a, b, c); }
  static V mul(V a, V b) { return _mm256_mul_pd(a, b); }
  static T hsum(V v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d hi64 = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, hi64));
  }
};

template <class VT>
inline void write_back(typename VT::T* c, typename VT::V acc, typename VT::T alpha,
                       typename VT::T beta) {
  using T = typename VT::T;
  auto out = VT::mul(VT::set1(alpha), acc);
  if (beta != T(0)) out = VT::fmadd(VT::set1(beta), VT::load(c), out);
  VT::store(c, out);
}

// MR rows x (2 * lanes) columns of C, accumulated over k.
template <class VT, int MR>
inline void block_2v(std::size_t k, typename VT::T alpha, const typename VT::T* a,
                     std::size_t a_row, std::size_t a_col, const typename VT::T* b, std::size_t ldb,
                     typename VT::T beta, typename VT::T* c, std::size_t ldc) {
  using V = typename VT::V;
  constexpr std::size_t L = VT::kLanes;
  V acc0[MR];
  V acc1[MR];
  for (int r = 0; r < MR; ++r) {
    acc0[r] = VT::zero();
    acc1[r] = VT::zero();
  }
  for (std::size_t p = 0; p < k; ++p) {
    const V b0 = VT::load(b + p * ldb);
    const V b1 = VT::load(b + p * ldb + L);
    for (int r = 0; r < MR; ++r) {
      const V av = VT::set1(a[static_cast<std::size_t>(r) * a_row + p * a_col]);
      acc0[r] = VT::fmadd(av, b0, acc0[r]);
      acc1[r] = VT::fmadd(av, b1, acc1[r]);
    }
  }
  for (int r = 0; r < MR; ++r) {
    write_back<VT>(c + static_cast<std::size_t>(r) * ldc, acc0[r], alpha, beta);
    write_back<VT>(c + static_cast<std::size_t>(r) * ldc + L, acc1[r], alpha, beta);
  }
}

template <class VT, int MR>
inline void block_1v(std::size_t k, typename VT::T alpha, const typename VT::T* a,
                     std::size_t a_row, std::size_t a_col, const typename VT::T* b, std::size_t ldb,
                     typename VT::T beta, typename VT::T* c, std::size_t ldc) {
  using V = typename VT::V;
  V acc[MR];
  for (int r = 0; r < MR; ++r) acc[r] = VT::zero();
  for (std::size_t p = 0; p < k; ++p) {
    const V b0 = VT::load(b + p * ldb);
    for (int r = 0; r < MR; ++r) {
      acc[r] = VT::fmadd(VT::set1(a[static_cast<std::size_t>(r) * a_row + p * a_col]), b0, acc[r]);
    }
  }
  for (int r = 0; r < MR; ++r) write_back<VT>(c + static_cast<std::size_t>(r) * ldc, acc[r], alpha, beta);
}

template <class VT, int MR>
inline void block_scalar_col(std::size_t k, typename VT::T alpha, const typename VT::T* a,
                             std::size_t a_row, std::size_t a_col, const typename VT::T* b,
                             std::size_t ldb, typename VT::T beta, typename VT::T* c,
                             std::size_t ldc) {
  using T = typename VT::T;
  T acc[MR];
  for (int r = 0; r < MR; ++r) acc[r] = 0;
  for (std::size_t p = 0; p < k; ++p) {
    const T bv = b[p * ldb];
    for (int r = 0; r < MR; ++r) acc[r] += a[static_cast<std::size_t>(r) * a_row + p * a_col] * bv;
  }
  for (int r = 0; r < MR; ++r) {
    T& out = c[static_cast<std::size_t>(r) * ldc];
    out = beta == T(0) ? alpha * acc[r] : alpha * acc[r] + beta * out;
  }
}

template <class VT, int MR>
inline void row_panel(std::size_t n, std::size_t k, typename VT::T alpha, const typename VT::T* a,
                      std::size_t a_row, std::size_t a_col, const typename VT::T* b,
                      std::size_t ldb, typename VT::T beta, typename VT::T* c, std::size_t ldc) {
  constexpr std::size_t L = VT::kLanes;
  std::size_t j = 0;
  for (; j + 2 * L <= n; j += 2 * L) {
    block_2v<VT, MR>(k, alpha, a, a_row, a_col, b + j, ldb, beta, c + j, ldc);
  }
  for (; j + L <= n; j += L) {
    block_1v<VT, MR>(k, alpha, a, a_row, a_col, b + j, ldb, beta, c + j, ldc);
  }
  for (; j < n; ++j) {
    block_scalar_col<VT, MR>(k, alpha, a, a_row, a_col, b + j, ldb, beta, c + j, ldc);
  }
}

template <class VT>
void gemm_impl(std::size_t m, std::size_t n, std::size_t k, typename VT::T alpha,
               const typename VT::T* a, std::size_t a_row, std::size_t a_col,
               const typename VT::T* b, std::size_t ldb, typename VT::T beta, typename VT::T* c,
               std::size_t ldc) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    row_panel<VT, 4>(n, k, alpha, a + i * a_row, a_row, a_col, b, ldb, beta, c + i * ldc, ldc);
  }
  switch (m - i) {
    case 3: row_panel<VT, 3>(n, k, alpha, a + i * a_row, a_row, a_col, b, ldb, beta, c + i * ldc, ldc); break;
    case 2: row_panel<VT, 2>(n, k, alpha, a + i * a_row, a_row, a_col, b, ldb, beta, c + i * ldc, ldc); break;
    case 1: row_panel<VT, 1>(n, k, alpha, a + i * a_row, a_row, a_col, b, ldb, beta, c + i * ldc, ldc); break;
    default: break;
  }
}

template <class VT>
typename VT::T dot_impl(const typename VT::T* x, const typename VT::T* y, std::size_t n) {
  using T = typename VT::T;
  constexpr std::size_t L = VT::kLanes;
  auto acc0 = VT::zero();
  auto acc1 = VT::zero();
  std::size_t i = 0;
  for (; i + 2 * L <= n; i += 2 * L) {
    acc0 = VT::fmadd(VT::load(x + i), VT::load(y + i), acc0);
    acc1 = VT::fmadd(VT::load(x + i + L), VT::load(y + i + L), acc1);
  }
  for (; i + L <= n; i += L) acc0 = VT::fmadd(VT::load(x + i), VT::load(y + i), acc0);
  T acc = VT::hsum(acc0) + VT::hsum(acc1);
  for (; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

template <class VT>
void axpy_impl(std::size_t n, typename VT::T alpha, const typename VT::T* x, typename VT::T* y) {
  constexpr std::size_t L = VT::kLanes;
  const auto av = VT::set1(alpha);
  std::size_t i = 0;
  for (; i + L <= n; i += L) VT::store(y + i, VT::fmadd(av, VT::load(x + i), VT::load(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace

void gemm_strided_a(std::size_t m, std::size_t n, std::size_t k, float alpha, const float* a,
                    std::size_t a_row, std::size_t a_col, const float* b, std::size_t ldb,
                    float beta, float* c, std::size_t ldc) {
  gemm_impl<F32>(m, n, k, alpha, a, a_row, a_col, b, ldb, beta, c, ldc);
}

void gemm_strided_a(std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a,
                    std::size_t a_row, std::size_t a_col, const double* b, std::size_t ldb,
                    double beta, double* c, std::size_t ldc) {
  gemm_impl<F64>(m, n, k, alpha, a, a_row, a_col, b, ldb, beta, c, ldc);
}

float dot(const float* x, const float* y, std::size_t n) { return dot_impl<F32>(x, y, n); }
double dot(const double* x, const double* y, std::size_t n) { return dot_impl<F64>(x, y, n); }
void axpy(std::size_t n, float alpha, const float* x, float* y) { axpy_impl<F32>(n, alpha, x, y); }
void axpy(std::size_t n, double alpha, const double* x, double* y) {
  axpy_impl<F64>(n, alpha, x, y);
}

}  // namespace lenctl::simd::avx2
