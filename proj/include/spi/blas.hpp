#pragma once

namespace spi::detail {

// Row-major GEMM: C = alpha * op(A) * op(B) + beta * C.
// op(A) is m x k, op(B) is k x n, C is m x n.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, int lda,
          const float* b, int ldb, float beta, float* c, int ldc);
void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a, int lda,
          const double* b, int ldb, double beta, double* c, int ldc);

// y = alpha * op(A) * x + beta * y, row-major A (m x n before transposition).
void gemv(bool trans, int m, int n, double alpha, const double* a, int lda, const double* x,
          double beta, double* y);

// Cap BLAS internal threading (used when jobs parallelize at a higher level).
void set_blas_threads(int n);

}  // namespace spi::detail
