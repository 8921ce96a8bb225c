#include "odekit/kernels/kernels_impl.hpp"

#include <algorithm>

namespace odekit::kern::detail {

void add_scalar(double* dst, const double* a, const double* b, size_t n) {
  for (size_t i = 0; i < n; ++i) dst[i] = a[i] + b[i];
}

void sub_scalar(double* dst, const double* a, const double* b, size_t n) {
  for (size_t i = 0; i < n; ++i) dst[i] = a[i] - b[i];
}

void mul_scalar(double* dst, const double* a, const double* b, size_t n) {
  for (size_t i = 0; i < n; ++i) dst[i] = a[i] * b[i];
}

void maximum_scalar(double* dst, const double* a, const double* b, size_t n) {
  // max(a, b) with the b-wins-on-equal ordering of _mm256_max_pd(a, b);
  // both operands equal means either answer is the same bits except for
  // signed zeros, so mirror the intrinsic exactly: (a > b) ? a : b.
  for (size_t i = 0; i < n; ++i) dst[i] = (a[i] > b[i]) ? a[i] : b[i];
}

void scale_scalar(double* dst, const double* x, double s, size_t n) {
  for (size_t i = 0; i < n; ++i) dst[i] = s * x[i];
}

void axpy_scalar(double* y, double a, const double* x, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] = y[i] + a * x[i];
}

void relu_scalar(double* dst, const double* x, size_t n) {
  for (size_t i = 0; i < n; ++i) dst[i] = (x[i] > 0.0) ? x[i] : 0.0;
}

// i-k-j order: each c[i][j] accumulates over k sequentially. The AVX2 variant
// vectorizes j while keeping the exact same per-element operation sequence.
void matmul_scalar(double* c, const double* a, const double* b, int r, int k, int cc) {
  std::fill(c, c + static_cast<size_t>(r) * cc, 0.0);
  for (int i = 0; i < r; ++i) {
    const double* arow = a + static_cast<size_t>(i) * k;
    double* crow = c + static_cast<size_t>(i) * cc;
    for (int kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      const double* brow = b + static_cast<size_t>(kk) * cc;
      for (int j = 0; j < cc; ++j) crow[j] = crow[j] + av * brow[j];
    }
  }
}

}  // namespace odekit::kern::detail
