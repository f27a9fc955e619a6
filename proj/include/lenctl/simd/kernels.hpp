#pragma once

// Dense arithmetic kernels with runtime ISA selection.
//
// Every kernel has a scalar reference implementation. On x86-64 an AVX2+FMA
// variant is compiled into its own translation unit and selected at startup
// when the CPU reports both features. LENCTL_ISA=scalar|avx2 in the
// environment overrides the choice; set_active_isa() does the same in code.
//
// Matrices are row-major. gemm computes
//   C = alpha * op(A) * op(B) + beta * C
// with op(A) of shape m x k and op(B) of shape k x n. When beta == 0, C is
// not read.

#include <cstddef>
#include <string_view>

namespace lenctl::simd {

enum class Isa { kScalar, kAvx2 };

std::string_view isa_name(Isa isa);
bool isa_supported(Isa isa);
Isa best_isa();
Isa active_isa();
void set_active_isa(Isa isa);

class ScopedIsa {
 public:
  explicit ScopedIsa(Isa isa) : previous_(active_isa()) { set_active_isa(isa); }
  ~ScopedIsa() { set_active_isa(previous_); }
  ScopedIsa(const ScopedIsa&) = delete;
  ScopedIsa& operator=(const ScopedIsa&) = delete;

 private:
  Isa previous_;
};

enum class Trans { kNo, kYes };

template <typename Real>
struct KernelTable {
  void (*gemm)(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, Real alpha,
               const Real* a, std::size_t lda, const Real* b, std::size_t ldb, Real beta, Real* c,
               std::size_t ldc);
  Real (*dot)(const Real* x, const Real* y, std::size_t n);
  // y += alpha * x
  void (*axpy)(std::size_t n, Real alpha, const Real* x, Real* y);
};

template <typename Real>
const KernelTable<Real>& kernels_for(Isa isa);

template <typename Real>
const KernelTable<Real>& kernels() {
  return kernels_for<Real>(active_isa());
}

template <typename Real>
inline void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, Real alpha,
                 const Real* a, std::size_t lda, const Real* b, std::size_t ldb, Real beta, Real* c,
                 std::size_t ldc) {
  kernels<Real>().gemm(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

template <typename Real>
inline Real dot(const Real* x, const Real* y, std::size_t n) {
  return kernels<Real>().dot(x, y, n);
}

template <typename Real>
inline void axpy(std::size_t n, Real alpha, const Real* x, Real* y) {
  kernels<Real>().axpy(n, alpha, x, y);
}

}  // namespace lenctl::simd
