// Compiled with -mavx2 -mfma. Only reached after a runtime CPU check.
#include <immintrin.h>

#include <algorithm>

#include "dlrgrid/kernels.hpp"

namespace dlrgrid::kernels {
namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d sh = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

// Accumulates sum_p a[p * a_stride] * b[p * b_stride + j] into c[j] for a
// block of columns, keeping the C block in registers across the p loop.
inline void accumulate_rows(std::size_t n, std::size_t k, const double* a, std::size_t a_stride,
                            const double* b, std::size_t b_stride, double* c) {
  std::size_t j = 0;
  for (; j + 16 <= n; j += 16) {
    __m256d c0 = _mm256_loadu_pd(c + j);
    __m256d c1 = _mm256_loadu_pd(c + j + 4);
    __m256d c2 = _mm256_loadu_pd(c + j + 8);
    __m256d c3 = _mm256_loadu_pd(c + j + 12);
    for (std::size_t p = 0; p < k; ++p) {
      const __m256d av = _mm256_broadcast_sd(a + p * a_stride);
      const double* bp = b + p * b_stride + j;
      c0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(bp), c0);
      c1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(bp + 4), c1);
      c2 = _mm256_fmadd_pd(av, _mm256_loadu_pd(bp + 8), c2);
      c3 = _mm256_fmadd_pd(av, _mm256_loadu_pd(bp + 12), c3);
    }
    _mm256_storeu_pd(c + j, c0);
    _mm256_storeu_pd(c + j + 4, c1);
    _mm256_storeu_pd(c + j + 8, c2);
    _mm256_storeu_pd(c + j + 12, c3);
  }
  for (; j + 4 <= n; j += 4) {
    __m256d c0 = _mm256_loadu_pd(c + j);
    for (std::size_t p = 0; p < k; ++p) {
      c0 = _mm256_fmadd_pd(_mm256_broadcast_sd(a + p * a_stride),
                           _mm256_loadu_pd(b + p * b_stride + j), c0);
    }
    _mm256_storeu_pd(c + j, c0);
  }
  for (; j < n; ++j) {
    double s = c[j];
    for (std::size_t p = 0; p < k; ++p) s += a[p * a_stride] * b[p * b_stride + j];
    c[j] = s;
  }
}

double dot(std::size_t n, const double* x, const double* y) {
  __m256d s0 = _mm256_setzero_pd();
  __m256d s1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    s0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), s0);
    s1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), s1);
  }
  for (; i + 4 <= n; i += 4) {
    s0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), s0);
  }
  double s = hsum(_mm256_add_pd(s0, s1));
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) accumulate_rows(n, k, a + i * k, 1, b, n, c + i * n);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + k * n, 0.0);
  // Row p of C collects column p of A against every row of B.
  for (std::size_t p = 0; p < k; ++p) accumulate_rows(n, m, a + p, k, b, n, c + p * n);
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = dot(n, ai, b + p * n);
      if (accumulate)
        c[i * k + p] += s;
      else
        c[i * k + p] = s;
    }
  }
}

void axpy(std::size_t n, double alpha, const double* x, double* y) {
  const __m256d av = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void hadamard_acc(std::size_t n, const double* a, const double* b, double* y) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i),
                                            _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += a[i] * b[i];
}

void hadamard(std::size_t n, const double* a, const double* b, double* y) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  }
  for (; i < n; ++i) y[i] = a[i] * b[i];
}

}  // namespace

const KernelTable& avx2_kernels() {
  static constexpr KernelTable table{gemm_nn, gemm_tn, gemm_nt, axpy, dot, hadamard_acc, hadamard};
  return table;
}

}  // namespace dlrgrid::kernels
