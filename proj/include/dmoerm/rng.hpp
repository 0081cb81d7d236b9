// SPDX-License-Identifier: Apache-2.0
//
// Deterministic randomness. The engine is mt19937_64, whose raw output is
// pinned by the standard; the distributions are hand-rolled because the
// standard library ones are implementation-defined and we promise
// bit-identical artifacts across toolchains.

#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace dmoerm {

// splitmix64 finalizer. Good avalanche, cheap, stable.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Derives an independent stream id from a root seed plus context words
// (sample ids, pair indices, phase tags, ...). Order-sensitive.
inline std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t s = 0x243f6a8885a308d3ULL;
  for (std::uint64_t p : parts) s = mix64(s ^ p);
  return s;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform on (0, 1): rejects exact zero so log() is safe.
  double uniform_pos() {
    double u = uniform();
    while (u == 0.0) u = uniform();
    return u;
  }

  // Box-Muller, cosine branch. Two engine draws per variate.
  double normal() {
    double u1 = uniform_pos();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Standard Gumbel. Argmax of gold + tau*gumbel gives logistic pairwise
  // choice probabilities, which is exactly the annotator model we want.
  double gumbel() { return -std::log(-std::log(uniform_pos())); }

  // Unbiased integer in [0, n) by rejection.
  std::size_t index(std::size_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x = gen_();
    while (x >= limit) x = gen_();
    return static_cast<std::size_t>(x % n);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

  // Beta(2,2) as the median of three uniforms (2nd order statistic of 3).
  double beta22() {
    double a = uniform(), b = uniform(), c = uniform();
    double lo = std::min(a, std::min(b, c));
    double hi = std::max(a, std::max(b, c));
    return a + b + c - lo - hi;
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace dmoerm
