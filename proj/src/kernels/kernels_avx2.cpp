// SPDX-License-Identifier: Apache-2.0
//
// AVX2 backend. Deliberately mul+add rather than FMA, with the same
// accumulation order as the scalar reference, so results match it bit for
// bit. This file is compiled with -mavx2 and must stay runtime-gated.

#include "dmoerm/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#include <immintrin.h>

namespace dmoerm::kernels {
namespace {

void gemm_avx2(int m, int k, int n, const double* a, const double* b,
               double* c) {
  const int n4 = n - (n % 4);
  for (int i = 0; i < m; ++i) {
    double* crow = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n4; j += 4) _mm256_storeu_pd(crow + j, _mm256_setzero_pd());
    for (int j = n4; j < n; ++j) crow[j] = 0.0;
    const double* arow = a + static_cast<std::size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const double ap = arow[p];
      const __m256d av = _mm256_set1_pd(ap);
      const double* brow = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n4; j += 4) {
        __m256d acc = _mm256_loadu_pd(crow + j);
        acc = _mm256_add_pd(acc, _mm256_mul_pd(av, _mm256_loadu_pd(brow + j)));
        _mm256_storeu_pd(crow + j, acc);
      }
      for (int j = n4; j < n; ++j) crow[j] += ap * brow[j];
    }
  }
}

void add_avx2(std::size_t n, const double* x, const double* y, double* out) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i,
                     _mm256_add_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) out[i] = x[i] + y[i];
}

void sub_avx2(std::size_t n, const double* x, const double* y, double* out) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i,
                     _mm256_sub_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) out[i] = x[i] - y[i];
}

void mul_avx2(std::size_t n, const double* x, const double* y, double* out) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i,
                     _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) out[i] = x[i] * y[i];
}

void scale_avx2(std::size_t n, double a, const double* x, double* out) {
  const __m256d av = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(av, _mm256_loadu_pd(x + i)));
  for (; i < n; ++i) out[i] = a * x[i];
}

void axpy_avx2(std::size_t n, double a, const double* x, double* y) {
  const __m256d av = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d acc = _mm256_loadu_pd(y + i);
    acc = _mm256_add_pd(acc, _mm256_mul_pd(av, _mm256_loadu_pd(x + i)));
    _mm256_storeu_pd(y + i, acc);
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

}  // namespace

const Ops* avx2_ops_impl() {
  if (!__builtin_cpu_supports("avx2")) return nullptr;
  static const Ops ops{gemm_avx2, add_avx2, sub_avx2,
                       mul_avx2,  scale_avx2, axpy_avx2};
  return &ops;
}

}  // namespace dmoerm::kernels

#else

namespace dmoerm::kernels {
const Ops* avx2_ops_impl() { return nullptr; }
}  // namespace dmoerm::kernels

#endif
