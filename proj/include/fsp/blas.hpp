#pragma once

#include <cstdlib>
#include <mutex>

#include <cblas.h>

namespace fsp {

// The sandbox CPU masks CPUID vendor info, which makes OpenBLAS fall back to
// its generic SSE3 kernel (~5x slower). The host does implement AVX-512, so
// pick the skylake-x kernels unless the user overrides. OpenBLAS reads
// OPENBLAS_CORETYPE in its library constructor, so this must run earlier:
// priority 101 + static linking puts it first in the binary's init order.
namespace blas_detail {
__attribute__((constructor(101))) inline void coretype_env_init() {
  setenv("OPENBLAS_CORETYPE", "SKYLAKEX", /*overwrite=*/0);
}
}  // namespace blas_detail

inline void ensure_blas_runtime() {
  static std::once_flag once;
  std::call_once(once, [] {
    const char* t = std::getenv("FSP_THREADS");
    int n = 1;
    if (t != nullptr) {
      n = std::atoi(t);
      if (n < 1) n = 1;
    }
    openblas_set_num_threads(n);
  });
}

inline void set_blas_threads(int n) {
  ensure_blas_runtime();
  openblas_set_num_threads(n < 1 ? 1 : n);
}

// Row-major C = alpha * op(A) * op(B) + beta * C.
inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
                 const float* a, int lda, const float* b, int ldb, float beta,
                 float* c, int ldc) {
  ensure_blas_runtime();
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b,
              ldb, beta, c, ldc);
}

inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
                 const double* a, int lda, const double* b, int ldb,
                 double beta, double* c, int ldc) {
  ensure_blas_runtime();
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b,
              ldb, beta, c, ldc);
}

}  // namespace fsp
