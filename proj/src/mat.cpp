// SPDX-License-Identifier: Apache-2.0

#include "dmoerm/mat.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "dmoerm/errors.hpp"
#include "dmoerm/kernels.hpp"
#include "dmoerm/rng.hpp"

namespace dmoerm {

namespace {

void require_same_shape(const Mat& x, const Mat& y, const char* op) {
  if (!x.same_shape(y)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + x.shape_str() +
                     " vs " + y.shape_str());
  }
}

}  // namespace

Mat::Mat(int r, int c, std::vector<double> data) : rows(r), cols(c), a(std::move(data)) {
  if (a.size() != static_cast<std::size_t>(r) * c) {
    throw ShapeError("Mat: data length " + std::to_string(a.size()) +
                     " does not fill " + std::to_string(r) + "x" + std::to_string(c));
  }
}

Mat Mat::full(int r, int c, double v) {
  Mat m(r, c);
  for (double& x : m.a) x = v;
  return m;
}

Mat Mat::column(std::span<const double> xs) {
  Mat m(static_cast<int>(xs.size()), 1);
  std::memcpy(m.a.data(), xs.data(), xs.size() * sizeof(double));
  return m;
}

std::string Mat::shape_str() const {
  std::ostringstream os;
  os << "(" << rows << "x" << cols << ")";
  return os.str();
}

double Mat::item() const {
  if (rows != 1 || cols != 1)
    throw ShapeError("item: expected (1x1), got " + shape_str());
  return a[0];
}

Mat matmul(const Mat& a, const Mat& b) {
  if (a.cols != b.rows) {
    throw ShapeError("matmul: inner dimensions disagree, " + a.shape_str() +
                     " * " + b.shape_str());
  }
  Mat c(a.rows, b.cols);
  kernels::active().gemm(a.rows, a.cols, b.cols, a.data(), b.data(), c.data());
  return c;
}

Mat transpose(const Mat& m) {
  Mat t(m.cols, m.rows);
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j) t.at(j, i) = m.at(i, j);
  return t;
}

Mat add(const Mat& x, const Mat& y) {
  require_same_shape(x, y, "add");
  Mat out(x.rows, x.cols);
  kernels::active().add(x.size(), x.data(), y.data(), out.data());
  return out;
}

Mat sub(const Mat& x, const Mat& y) {
  require_same_shape(x, y, "sub");
  Mat out(x.rows, x.cols);
  kernels::active().sub(x.size(), x.data(), y.data(), out.data());
  return out;
}

Mat hadamard(const Mat& x, const Mat& y) {
  require_same_shape(x, y, "hadamard");
  Mat out(x.rows, x.cols);
  kernels::active().mul(x.size(), x.data(), y.data(), out.data());
  return out;
}

Mat scale(const Mat& x, double k) {
  Mat out(x.rows, x.cols);
  kernels::active().scale(x.size(), k, x.data(), out.data());
  return out;
}

void add_inplace(Mat& x, const Mat& y) {
  require_same_shape(x, y, "add_inplace");
  kernels::active().add(x.size(), x.data(), y.data(), x.data());
}

void axpy_inplace(Mat& x, double k, const Mat& y) {
  require_same_shape(x, y, "axpy_inplace");
  kernels::active().axpy(x.size(), k, y.data(), x.data());
}

double sum(const Mat& m) {
  double s = 0.0;
  for (double v : m.a) s += v;
  return s;
}

double max_abs(const Mat& m) {
  double s = 0.0;
  for (double v : m.a) s = std::max(s, std::fabs(v));
  return s;
}

void fill_normal(Mat& m, Rng& rng, double stddev) {
  for (double& v : m.a) v = stddev * rng.normal();
}

std::uint64_t bytes_checksum(std::span<const Mat* const> mats) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* p, std::size_t n) {
    const unsigned char* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const Mat* m : mats) {
    feed(&m->rows, sizeof(m->rows));
    feed(&m->cols, sizeof(m->cols));
    feed(m->a.data(), m->a.size() * sizeof(double));
  }
  return h;
}

std::uint64_t bytes_checksum(const Mat& m) {
  const Mat* p = &m;
  return bytes_checksum(std::span<const Mat* const>(&p, 1));
}

}  // namespace dmoerm
