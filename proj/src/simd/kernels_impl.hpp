#pragma once

#include <cstddef>

#include "lenctl/simd/kernels.hpp"

namespace lenctl::simd {

namespace scalar {

template <typename Real>
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, Real alpha,
          const Real* a, std::size_t lda, const Real* b, std::size_t ldb, Real beta, Real* c,
          std::size_t ldc);
template <typename Real>
Real dot(const Real* x, const Real* y, std::size_t n);
template <typename Real>
void axpy(std::size_t n, Real alpha, const Real* x, Real* y);

}  // namespace scalar

#if defined(LENCTL_HAVE_AVX2)
namespace avx2 {

// C = alpha * A' * B + beta * C where A'(i, p) = a[i * a_row + p * a_col] and
// B is k x n row-major with leading dimension ldb.
void gemm_strided_a(std::size_t m, std::size_t n, std::size_t k, float alpha, const float* a,
                    std::size_t a_row, std::size_t a_col, const float* b, std::size_t ldb,
                    float beta, float* c, std::size_t ldc);
void gemm_strided_a(std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a,
                    std::size_t a_row, std::size_t a_col, const double* b, std::size_t ldb,
                    double beta, double* c, std::size_t ldc);

float dot(const float* x, const float* y, std::size_t n);
double dot(const double* x, const double* y, std::size_t n);
void axpy(std::size_t n, float alpha, const float* x, float* y);
void axpy(std::size_t n, double alpha, const double* x, double* y);

}  // namespace avx2
#endif

}  // namespace lenctl::simd
