// SPDX-License-Identifier: Apache-2.0
//
// Dense double-precision kernels with runtime backend selection.
//
// Every backend computes each output element with the same operation order
// as the scalar reference: gemm accumulates along k in order, no FMA, no
// reassociation. That makes all backends bit-identical, which the tests
// assert with exact equality, and it keeps artifact determinism independent
// of the machine the run landed on.

#pragma once

#include <cstddef>

namespace dmoerm::kernels {

enum class Backend { kScalar, kAvx2 };

struct Ops {
  // c (m x n) = a (m x k) * b (k x n), all row-major. c is overwritten.
  void (*gemm)(int m, int k, int n, const double* a, const double* b,
               double* c);
  void (*add)(std::size_t n, const double* x, const double* y, double* out);
  void (*sub)(std::size_t n, const double* x, const double* y, double* out);
  void (*mul)(std::size_t n, const double* x, const double* y, double* out);
  void (*scale)(std::size_t n, double a, const double* x, double* out);
  // y += a * x
  void (*axpy)(std::size_t n, double a, const double* x, double* y);
};

const Ops& scalar_ops();

// Null when the binary or the host CPU lacks AVX2.
const Ops* avx2_ops();

// Backend picked at first use: AVX2 when available, else scalar.
// DMOERM_KERNELS=scalar|avx2 overrides (asking for an unavailable backend
// falls back to scalar).
const Ops& active();
Backend active_backend();
const char* backend_name(Backend b);

}  // namespace dmoerm::kernels
