#pragma once

#include <cstddef>

// Internal: per-backend kernel entry points. Scalar versions are the
// reference; AVX2 versions must be bit-identical to them (enforced by the
// equivalence suite). Only present on x86-64 builds with AVX2 enabled for
// the one translation unit that implements them.

namespace odekit::kern::detail {

void add_scalar(double* dst, const double* a, const double* b, size_t n);
void sub_scalar(double* dst, const double* a, const double* b, size_t n);
void mul_scalar(double* dst, const double* a, const double* b, size_t n);
void maximum_scalar(double* dst, const double* a, const double* b, size_t n);
void scale_scalar(double* dst, const double* x, double s, size_t n);
void axpy_scalar(double* y, double a, const double* x, size_t n);
void relu_scalar(double* dst, const double* x, size_t n);
void matmul_scalar(double* c, const double* a, const double* b, int r, int k, int cc);

#if defined(ODEKIT_HAVE_AVX2)
void add_avx2(double* dst, const double* a, const double* b, size_t n);
void sub_avx2(double* dst, const double* a, const double* b, size_t n);
void mul_avx2(double* dst, const double* a, const double* b, size_t n);
void maximum_avx2(double* dst, const double* a, const double* b, size_t n);
void scale_avx2(double* dst, const double* x, double s, size_t n);
void axpy_avx2(double* y, double a, const double* x, size_t n);
void relu_avx2(double* dst, const double* x, size_t n);
void matmul_avx2(double* c, const double* a, const double* b, int r, int k, int cc);
#endif

}  // namespace odekit::kern::detail
