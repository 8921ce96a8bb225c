#include "odekit/kernels/kernels.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <cstring>

#include "odekit/kernels/kernels_impl.hpp"

namespace odekit::kern {

namespace {

Backend detect_backend() {
#if defined(ODEKIT_HAVE_AVX2)
  if (const char* env = std::getenv("ODEKIT_SIMD")) {
    if (std::strcmp(env, "scalar") == 0) return Backend::scalar;
    if (std::strcmp(env, "avx2") == 0 && __builtin_cpu_supports("avx2")) return Backend::avx2;
  }
  if (__builtin_cpu_supports("avx2")) return Backend::avx2;
#endif
  return Backend::scalar;
}

std::atomic<Backend> g_backend{detect_backend()};

}  // namespace

bool avx2_supported() {
#if defined(ODEKIT_HAVE_AVX2)
  return __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}

Backend active_backend() { return g_backend.load(std::memory_order_relaxed); }

void set_backend(Backend b) {
  if (b == Backend::avx2 && !avx2_supported()) b = Backend::scalar;
  g_backend.store(b, std::memory_order_relaxed);
}

#if defined(ODEKIT_HAVE_AVX2)
#define ODEKIT_DISPATCH(fn, ...)                       \
  if (active_backend() == Backend::avx2) {             \
    detail::fn##_avx2(__VA_ARGS__);                    \
  } else {                                             \
    detail::fn##_scalar(__VA_ARGS__);                  \
  }
#else
#define ODEKIT_DISPATCH(fn, ...) detail::fn##_scalar(__VA_ARGS__);
#endif

void add(double* dst, const double* a, const double* b, size_t n) { ODEKIT_DISPATCH(add, dst, a, b, n) }
void sub(double* dst, const double* a, const double* b, size_t n) { ODEKIT_DISPATCH(sub, dst, a, b, n) }
void mul(double* dst, const double* a, const double* b, size_t n) { ODEKIT_DISPATCH(mul, dst, a, b, n) }
void maximum(double* dst, const double* a, const double* b, size_t n) { ODEKIT_DISPATCH(maximum, dst, a, b, n) }
void scale(double* dst, const double* x, double s, size_t n) { ODEKIT_DISPATCH(scale, dst, x, s, n) }
void axpy(double* y, double a, const double* x, size_t n) { ODEKIT_DISPATCH(axpy, y, a, x, n) }
void relu(double* dst, const double* x, size_t n) { ODEKIT_DISPATCH(relu, dst, x, n) }

void matmul(double* c, const double* a, const double* b, int r, int k, int cc) {
  ODEKIT_DISPATCH(matmul, c, a, b, r, k, cc)
}

#undef ODEKIT_DISPATCH

double sum(const double* x, size_t n) {
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) acc += x[i];
  return acc;
}

double dot(const double* a, const double* b, size_t n) {
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

double l2norm(const double* x, size_t n) {
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) acc += x[i] * x[i];
  return std::sqrt(acc);
}

void transpose(double* dst, const double* src, int rows, int cols) {
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j)
      dst[static_cast<size_t>(j) * rows + i] = src[static_cast<size_t>(i) * cols + j];
}

double sigmoid1(double x) {
  double s;
  if (x >= 0.0) {
    s = 1.0 / (1.0 + std::exp(-x));
  } else {
    const double e = std::exp(x);
    s = e / (1.0 + e);
  }
  // The mathematical codomain is the open interval; keep it open where
  // rounding would otherwise saturate to an endpoint.
  if (s >= 1.0) return std::nextafter(1.0, 0.0);
  if (s <= 0.0) return std::nextafter(0.0, 1.0);
  return s;
}

double softplus1(double x) {
  // log(1 + e^x), stable on both tails; strictly positive like the
  // mathematical function even where exp underflows.
  const double s = (x > 0.0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  return s > 0.0 ? s : std::nextafter(0.0, 1.0);
}

void sigmoid(double* dst, const double* x, size_t n) {
  for (size_t i = 0; i < n; ++i) dst[i] = sigmoid1(x[i]);
}

void tanh(double* dst, const double* x, size_t n) {
  for (size_t i = 0; i < n; ++i) dst[i] = std::tanh(x[i]);
}

void softplus(double* dst, const double* x, size_t n) {
  for (size_t i = 0; i < n; ++i) dst[i] = softplus1(x[i]);
}

}  // namespace odekit::kern
