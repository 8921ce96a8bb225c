#pragma once

#include <cstddef>

// Dense double-precision kernels behind everything numeric in the project.
//
// There are two classes of routine:
//
//  * Dispatched map-style kernels (add/sub/mul/maximum/scale/axpy/relu and
//    matmul). These have a scalar reference implementation and an AVX2
//    variant selected at runtime. Both variants perform the same IEEE
//    operations on each element in the same order (no FMA, no reassociation),
//    so their outputs are bit-identical; the equivalence suite asserts this.
//
//  * Reductions (sum/dot/l2norm) and transcendentals (sigmoid/tanh/softplus).
//    These run one fixed sequential implementation on every backend because
//    gradient determinism requires a single accumulation order, and libm
//    calls have no profitable lane-exact vectorization.

namespace odekit::kern {

enum class Backend { scalar, avx2 };

bool avx2_supported();
Backend active_backend();
// Overrides dispatch (tests use this). Requesting avx2 on a machine without
// it falls back to scalar.
void set_backend(Backend b);

// dst[i] = a[i] + b[i]
void add(double* dst, const double* a, const double* b, size_t n);
// dst[i] = a[i] - b[i]
void sub(double* dst, const double* a, const double* b, size_t n);
// dst[i] = a[i] * b[i]
void mul(double* dst, const double* a, const double* b, size_t n);
// dst[i] = max(a[i], b[i])
void maximum(double* dst, const double* a, const double* b, size_t n);
// dst[i] = s * x[i]
void scale(double* dst, const double* x, double s, size_t n);
// y[i] += a * x[i]   (mul then add, two roundings, both backends)
void axpy(double* y, double a, const double* x, size_t n);
// dst[i] = max(x[i], 0)
void relu(double* dst, const double* x, size_t n);

// c = a (r x k) * b (k x cc), row-major, c overwritten.
// Accumulation runs in k order per output element on both backends.
void matmul(double* c, const double* a, const double* b, int r, int k, int cc);

// Fixed sequential order; identical on every backend.
double sum(const double* x, size_t n);
double dot(const double* a, const double* b, size_t n);
double l2norm(const double* x, size_t n);

void transpose(double* dst, const double* src, int rows, int cols);

void sigmoid(double* dst, const double* x, size_t n);
void tanh(double* dst, const double* x, size_t n);
void softplus(double* dst, const double* x, size_t n);

double sigmoid1(double x);
double softplus1(double x);

}  // namespace odekit::kern
