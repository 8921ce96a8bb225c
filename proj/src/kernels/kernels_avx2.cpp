#if defined(ODEKIT_HAVE_AVX2)

#include <immintrin.h>

#include <algorithm>

#include "odekit/kernels/kernels_impl.hpp"

// Bit-exactness contract: every lane does mul/add/max in the same order as
// the scalar reference, and FMA is never used (one extra rounding would
// diverge from the scalar path). Tails fall back to the scalar expressions.

namespace odekit::kern::detail {

void add_avx2(double* dst, const double* a, const double* b, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(dst + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  }
  for (; i < n; ++i) dst[i] = a[i] + b[i];
}

void sub_avx2(double* dst, const double* a, const double* b, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(dst + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  }
  for (; i < n; ++i) dst[i] = a[i] - b[i];
}

void mul_avx2(double* dst, const double* a, const double* b, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(dst + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  }
  for (; i < n; ++i) dst[i] = a[i] * b[i];
}

void maximum_avx2(double* dst, const double* a, const double* b, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    // _mm256_max_pd(a, b) evaluates (a > b) ? a : b, which is exactly the
    // scalar reference expression, signed zeros and NaN ordering included.
    _mm256_storeu_pd(dst + i, _mm256_max_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  }
  for (; i < n; ++i) dst[i] = (a[i] > b[i]) ? a[i] : b[i];
}

void scale_avx2(double* dst, const double* x, double s, size_t n) {
  const __m256d sv = _mm256_set1_pd(s);
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(dst + i, _mm256_mul_pd(sv, _mm256_loadu_pd(x + i)));
  }
  for (; i < n; ++i) dst[i] = s * x[i];
}

void axpy_avx2(double* y, double a, const double* x, size_t n) {
  const __m256d av = _mm256_set1_pd(a);
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d prod = _mm256_mul_pd(av, _mm256_loadu_pd(x + i));
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), prod));
  }
  for (; i < n; ++i) y[i] = y[i] + a * x[i];
}

void relu_avx2(double* dst, const double* x, size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(dst + i, _mm256_max_pd(_mm256_loadu_pd(x + i), zero));
  }
  for (; i < n; ++i) dst[i] = (x[i] > 0.0) ? x[i] : 0.0;
}

void matmul_avx2(double* c, const double* a, const double* b, int r, int k, int cc) {
  std::fill(c, c + static_cast<size_t>(r) * cc, 0.0);
  for (int i = 0; i < r; ++i) {
    const double* arow = a + static_cast<size_t>(i) * k;
    double* crow = c + static_cast<size_t>(i) * cc;
    for (int kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      const __m256d avv = _mm256_set1_pd(av);
      const double* brow = b + static_cast<size_t>(kk) * cc;
      int j = 0;
      for (; j + 4 <= cc; j += 4) {
        __m256d prod = _mm256_mul_pd(avv, _mm256_loadu_pd(brow + j));
        _mm256_storeu_pd(crow + j, _mm256_add_pd(_mm256_loadu_pd(crow + j), prod));
      }
      for (; j < cc; ++j) crow[j] = crow[j] + av * brow[j];
    }
  }
}

}  // namespace odekit::kern::detail

#endif  // ODEKIT_HAVE_AVX2
