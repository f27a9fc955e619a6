#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <vector>

#include "kernels_impl.hpp"

namespace lenctl::simd {

namespace {

Isa initial_isa() {
  if (const char* env = std::getenv("LENCTL_ISA")) {
    const std::string name(env);
    if (name == "scalar") return Isa::kScalar;
    if (name == "avx2" && isa_supported(Isa::kAvx2)) return Isa::kAvx2;
  }
  return best_isa();
}

std::atomic<int>& active_slot() {
  static std::atomic<int> slot{static_cast<int>(initial_isa())};
  return slot;
}

#if defined(LENCTL_HAVE_AVX2)

// op(B) must be k x n row-major for the AVX2 kernel; transposed B is packed.
template <typename Real>
void avx2_gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, Real alpha,
               const Real* a, std::size_t lda, const Real* b, std::size_t ldb, Real beta, Real* c,
               std::size_t ldc) {
  if (m == 0 || n == 0) return;
  const std::size_t a_row = ta == Trans::kYes ? 1 : lda;
  const std::size_t a_col = ta == Trans::kYes ? lda : 1;
  if (tb == Trans::kNo) {
    avx2::gemm_strided_a(m, n, k, alpha, a, a_row, a_col, b, ldb, beta, c, ldc);
    return;
  }
  thread_local std::vector<Real> packed;
  packed.resize(k * n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t p = 0; p < k; ++p) packed[p * n + j] = b[j * ldb + p];
  }
  avx2::gemm_strided_a(m, n, k, alpha, a, a_row, a_col, packed.data(), n, beta, c, ldc);
}

template <typename Real>
Real avx2_dot(const Real* x, const Real* y, std::size_t n) {
  return avx2::dot(x, y, n);
}

template <typename Real>
void avx2_axpy(std::size_t n, Real alpha, const Real* x, Real* y) {
  avx2::axpy(n, alpha, x, y);
}

#endif

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::kScalar: return "scalar";
    case Isa::kAvx2: return "avx2";
  }
  return "scalar";
}

bool isa_supported(Isa isa) {
  switch (isa) {
    case Isa::kScalar: return true;
    case Isa::kAvx2:
#if defined(LENCTL_HAVE_AVX2)
      __builtin_cpu_init();
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

Isa best_isa() { return isa_supported(Isa::kAvx2) ? Isa::kAvx2 : Isa::kScalar; }

Isa active_isa() { return static_cast<Isa>(active_slot().load(std::memory_order_relaxed)); }

void set_active_isa(Isa isa) {
  if (!isa_supported(isa)) {
    throw std::runtime_error("ISA " + std::string(isa_name(isa)) + " is not supported on this CPU");
  }
  active_slot().store(static_cast<int>(isa), std::memory_order_relaxed);
}

template <typename Real>
const KernelTable<Real>& kernels_for(Isa isa) {
  static const KernelTable<Real> scalar_table{&scalar::gemm<Real>, &scalar::dot<Real>,
                                              &scalar::axpy<Real>};
#if defined(LENCTL_HAVE_AVX2)
  static const KernelTable<Real> avx2_table{&avx2_gemm<Real>, &avx2_dot<Real>, &avx2_axpy<Real>};
  static const bool avx2_ok = isa_supported(Isa::kAvx2);
  if (isa == Isa::kAvx2 && avx2_ok) return avx2_table;
#endif
  if (isa != Isa::kScalar) {
    throw std::runtime_error("ISA " + std::string(isa_name(isa)) + " is not supported on this CPU");
  }
  return scalar_table;
}

template const KernelTable<float>& kernels_for<float>(Isa);
template const KernelTable<double>& kernels_for<double>(Isa);

}  // namespace lenctl::simd
