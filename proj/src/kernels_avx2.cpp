// Compiled with -mavx2 -mfma; only reached after a CPUID check.

#include "pclap/kernels.hpp"

#if defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>

#include <algorithm>
#include <vector>

namespace pclap::kernels {
namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d sh = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4)
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

// C[M x N] += A B where A(i, q) = A[i * rs + q * cs] and B is row-major
// K x N. Register tiles of 4 rows by 8 columns; q runs in ascending order
// everywhere, so results do not depend on the tiling.
void gemm_tile(std::size_t M, std::size_t N, std::size_t K, const double* A, std::size_t rs, std::size_t cs,
               const double* B, double* C) {
  std::size_t i = 0;
  for (; i + 4 <= M; i += 4) {
    const double* a0 = A + i * rs;
    const double* a1 = a0 + rs;
    const double* a2 = a1 + rs;
    const double* a3 = a2 + rs;
    std::size_t j = 0;
    for (; j + 8 <= N; j += 8) {
      __m256d c00 = _mm256_setzero_pd(), c01 = _mm256_setzero_pd();
      __m256d c10 = _mm256_setzero_pd(), c11 = _mm256_setzero_pd();
      __m256d c20 = _mm256_setzero_pd(), c21 = _mm256_setzero_pd();
      __m256d c30 = _mm256_setzero_pd(), c31 = _mm256_setzero_pd();
      for (std::size_t q = 0; q < K; ++q) {
        const __m256d b0 = _mm256_loadu_pd(B + q * N + j);
        const __m256d b1 = _mm256_loadu_pd(B + q * N + j + 4);
        __m256d a = _mm256_broadcast_sd(a0 + q * cs);
        c00 = _mm256_fmadd_pd(a, b0, c00);
        c01 = _mm256_fmadd_pd(a, b1, c01);
        a = _mm256_broadcast_sd(a1 + q * cs);
        c10 = _mm256_fmadd_pd(a, b0, c10);
        c11 = _mm256_fmadd_pd(a, b1, c11);
        a = _mm256_broadcast_sd(a2 + q * cs);
        c20 = _mm256_fmadd_pd(a, b0, c20);
        c21 = _mm256_fmadd_pd(a, b1, c21);
        a = _mm256_broadcast_sd(a3 + q * cs);
        c30 = _mm256_fmadd_pd(a, b0, c30);
        c31 = _mm256_fmadd_pd(a, b1, c31);
      }
      double* c = C + i * N + j;
      _mm256_storeu_pd(c, _mm256_add_pd(_mm256_loadu_pd(c), c00));
      _mm256_storeu_pd(c + 4, _mm256_add_pd(_mm256_loadu_pd(c + 4), c01));
      c += N;
      _mm256_storeu_pd(c, _mm256_add_pd(_mm256_loadu_pd(c), c10));
      _mm256_storeu_pd(c + 4, _mm256_add_pd(_mm256_loadu_pd(c + 4), c11));
      c += N;
      _mm256_storeu_pd(c, _mm256_add_pd(_mm256_loadu_pd(c), c20));
      _mm256_storeu_pd(c + 4, _mm256_add_pd(_mm256_loadu_pd(c + 4), c21));
      c += N;
      _mm256_storeu_pd(c, _mm256_add_pd(_mm256_loadu_pd(c), c30));
      _mm256_storeu_pd(c + 4, _mm256_add_pd(_mm256_loadu_pd(c + 4), c31));
    }
    for (; j + 4 <= N; j += 4) {
      __m256d c0 = _mm256_setzero_pd(), c1 = _mm256_setzero_pd();
      __m256d c2 = _mm256_setzero_pd(), c3 = _mm256_setzero_pd();
      for (std::size_t q = 0; q < K; ++q) {
        const __m256d b = _mm256_loadu_pd(B + q * N + j);
        c0 = _mm256_fmadd_pd(_mm256_broadcast_sd(a0 + q * cs), b, c0);
        c1 = _mm256_fmadd_pd(_mm256_broadcast_sd(a1 + q * cs), b, c1);
        c2 = _mm256_fmadd_pd(_mm256_broadcast_sd(a2 + q * cs), b, c2);
        c3 = _mm256_fmadd_pd(_mm256_broadcast_sd(a3 + q * cs), b, c3);
      }
      double* c = C + i * N + j;
      _mm256_storeu_pd(c, _mm256_add_pd(_mm256_loadu_pd(c), c0));
      _mm256_storeu_pd(c + N, _mm256_add_pd(_mm256_loadu_pd(c + N), c1));
      _mm256_storeu_pd(c + 2 * N, _mm256_add_pd(_mm256_loadu_pd(c + 2 * N), c2));
      _mm256_storeu_pd(c + 3 * N, _mm256_add_pd(_mm256_loadu_pd(c + 3 * N), c3));
    }
    for (; j < N; ++j)
      for (std::size_t r = 0; r < 4; ++r) {
        double s = 0.0;
        for (std::size_t q = 0; q < K; ++q) s += A[(i + r) * rs + q * cs] * B[q * N + j];
        C[(i + r) * N + j] += s;
      }
  }
  for (; i < M; ++i) {
    const double* a0 = A + i * rs;
    std::size_t j = 0;
    for (; j + 4 <= N; j += 4) {
      __m256d c0 = _mm256_setzero_pd();
      for (std::size_t q = 0; q < K; ++q)
        c0 = _mm256_fmadd_pd(_mm256_broadcast_sd(a0 + q * cs), _mm256_loadu_pd(B + q * N + j), c0);
      double* c = C + i * N + j;
      _mm256_storeu_pd(c, _mm256_add_pd(_mm256_loadu_pd(c), c0));
    }
    for (; j < N; ++j) {
      double s = 0.0;
      for (std::size_t q = 0; q < K; ++q) s += a0[q * cs] * B[q * N + j];
      C[i * N + j] += s;
    }
  }
}

// K is split into panels so the slice of B being reused stays in cache.
void gemm_strided(std::size_t M, std::size_t N, std::size_t K, const double* A, std::size_t rs, std::size_t cs,
                  const double* B, double* C) {
  constexpr std::size_t kPanel = 128;
  for (std::size_t q0 = 0; q0 < K; q0 += kPanel)
    gemm_tile(M, N, std::min(kPanel, K - q0), A + q0 * cs, rs, cs, B + q0 * N, C);
}

void gemm_nn_avx2(std::size_t m, std::size_t k, std::size_t n, const double* A, const double* B,
                  double* C) {
  if (n == 1) {
    for (std::size_t i = 0; i < m; ++i) C[i] += dot_avx2(A + i * k, B, k);
    return;
  }
  gemm_strided(m, n, k, A, k, 1, B, C);
}

void gemm_tn_avx2(std::size_t m, std::size_t k, std::size_t n, const double* A, const double* B,
                  double* C) {
  if (n == 1) {
    for (std::size_t i = 0; i < m; ++i) axpy_avx2(B[i], A + i * k, C, k);
    return;
  }
  gemm_strided(k, n, m, A, 1, k, B, C);
}

void gemm_nt_avx2(std::size_t m, std::size_t n, std::size_t k, const double* A, const double* B,
                  double* C) {
  // Transpose B (k x n) once so the row-major kernel applies.
  std::vector<double> Bt(n * k);
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t q = 0; q < n; ++q) Bt[q * k + p] = B[p * n + q];
  gemm_strided(m, k, n, A, n, 1, Bt.data(), C);
}

void spmv_csr_avx2(std::size_t rows, const std::size_t* row_ptr, const std::size_t* col,
                   const double* val, const double* x, double* y) {
  for (std::size_t i = 0; i < rows; ++i) {
    const std::size_t begin = row_ptr[i];
    const std::size_t end = row_ptr[i + 1];
    __m256d acc = _mm256_setzero_pd();
    std::size_t q = begin;
    for (; q + 4 <= end; q += 4) {
      const __m256d xv = _mm256_set_pd(x[col[q + 3]], x[col[q + 2]], x[col[q + 1]], x[col[q]]);
      acc = _mm256_fmadd_pd(_mm256_loadu_pd(val + q), xv, acc);
    }
    double s = hsum(acc);
    for (; q < end; ++q) s += val[q] * x[col[q]];
    y[i] = s;
  }
}

}  // namespace

const KernelTable* avx2_table() {
  static const KernelTable table{Backend::Avx2, "avx2",       dot_avx2,     axpy_avx2,
                                 gemm_nn_avx2,  gemm_tn_avx2, gemm_nt_avx2, spmv_csr_avx2};
  return cpu_has_avx2() ? &table : nullptr;
}

}  // namespace pclap::kernels

#else

namespace pclap::kernels {
const KernelTable* avx2_table() { return nullptr; }
}  // namespace pclap::kernels

#endif
