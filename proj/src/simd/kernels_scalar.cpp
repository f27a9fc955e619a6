#include "kernels_impl.hpp"

namespace lenctl::simd::scalar {

template <typename Real>
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, Real alpha,
          const Real* a, std::size_t lda, const Real* b, std::size_t ldb, Real beta, Real* c,
          std::size_t ldc) {
  const bool at = ta == Trans::kYes;
  const bool bt = tb == Trans::kYes;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      Real acc = 0;
      for (std::size_t p = 0; p < k; ++p) {
        const Real av = at ? a[p * lda + i] : a[i * lda + p];
        const Real bv = bt ? b[j * ldb + p] : b[p * ldb + j];
        acc += av * bv;
      }
      Real& out = c[i * ldc + j];
      out = beta == Real(0) ? alpha * acc : alpha * acc + beta * out;
    }
  }
}

template <typename Real>
Real dot(const Real* x, const Real* y, std::size_t n) {
  Real acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

template <typename Real>
void axpy(std::size_t n, Real alpha, const Real* x, Real* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template void gemm<float>(Trans, Trans, std::size_t, std::size_t, std::size_t, float, const float*,
                          std::size_t, const float*, std::size_t, float, float*, std::size_t);
template void gemm<double>(Trans, Trans, std::size_t, std::size_t, std::size_t, double,
                           const double*, std::size_t, const double*, std::size_t, double, double*,
                           std::size_t);
template float dot<float>(const float*, const float*, std::size_t);
template double dot<double>(const double*, const double*, std::size_t);
template void axpy<float>(std::size_t, float, const float*, float*);
template void axpy<double>(std::size_t, double, const double*, double*);

}  // namespace lenctl::simd::scalar
