// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace dmoerm {

class Rng;

// Dense row-major matrix of doubles. Column vectors are r x 1.
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, 0.0) {}
  Mat(int r, int c, std::vector<double> data);

  static Mat zeros(int r, int c) { return Mat(r, c); }
  static Mat full(int r, int c, double v);
  static Mat column(std::span<const double> xs);
  static Mat scalar(double v) { return Mat(1, 1, {v}); }

  double& at(int i, int j) { return a[static_cast<std::size_t>(i) * cols + j]; }
  double at(int i, int j) const { return a[static_cast<std::size_t>(i) * cols + j]; }
  double* data() { return a.data(); }
  const double* data() const { return a.data(); }
  std::size_t size() const { return a.size(); }
  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
  std::string shape_str() const;
  double item() const;  // 1x1 only, else ShapeError
};

Mat matmul(const Mat& a, const Mat& b);
Mat transpose(const Mat& m);
Mat add(const Mat& x, const Mat& y);
Mat sub(const Mat& x, const Mat& y);
Mat hadamard(const Mat& x, const Mat& y);
Mat scale(const Mat& x, double k);
void add_inplace(Mat& x, const Mat& y);
// x += k * y
void axpy_inplace(Mat& x, double k, const Mat& y);
double sum(const Mat& m);
double max_abs(const Mat& m);

void fill_normal(Mat& m, Rng& rng, double stddev);

// FNV-1a over the raw bytes of each matrix, in order. Used by freeze and
// determinism checks.
std::uint64_t bytes_checksum(std::span<const Mat* const> mats);
std::uint64_t bytes_checksum(const Mat& m);

}  // namespace dmoerm
