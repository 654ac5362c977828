#pragma once

#ifdef LIPSYNC_USE_BLAS
#include <cblas.h>
#endif

#include <cstdint>

namespace lipsync {

// Row-major C[M,N] = alpha * op(A) * op(B) + beta * C.
// BLAS-backed for float/double when available; the fallback is a plain
// blocked loop that keeps everything buildable without OpenBLAS.

#ifdef LIPSYNC_USE_BLAS

inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, int lda,
                 const float* b, int ldb, float beta, float* c, int ldc) {
    cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans, m, n, k,
                alpha, a, lda, b, ldb, beta, c, ldc);
}

inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a, int lda,
                 const double* b, int ldb, double beta, double* c, int ldc) {
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans, m, n, k,
                alpha, a, lda, b, ldb, beta, c, ldc);
}

#else

template <class T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a, int lda, const T* b, int ldb,
          T beta, T* c, int ldc) {
    auto at = [&](int i, int j) { return trans_a ? a[static_cast<int64_t>(j) * lda + i] : a[static_cast<int64_t>(i) * lda + j]; };
    auto bt = [&](int i, int j) { return trans_b ? b[static_cast<int64_t>(j) * ldb + i] : b[static_cast<int64_t>(i) * ldb + j]; };
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            T acc = T(0);
            for (int p = 0; p < k; ++p) acc += at(i, p) * bt(p, j);
            c[static_cast<int64_t>(i) * ldc + j] = alpha * acc + beta * c[static_cast<int64_t>(i) * ldc + j];
        }
    }
}

#endif

}  // namespace lipsync
