// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <string>

#include "dmoerm/errors.hpp"
#include "dmoerm/mat.hpp"
#include "dmoerm/rng.hpp"

using namespace dmoerm;

TEST_CASE("matmul hand values") {
  Mat a(2, 2, {1, 2, 3, 4});
  Mat b(2, 1, {5, 6});
  Mat c = matmul(a, b);
  REQUIRE(c.rows == 2);
  REQUIRE(c.cols == 1);
  CHECK(c.at(0, 0) == 17.0);
  CHECK(c.at(1, 0) == 39.0);

  Mat i2(2, 2, {1, 0, 0, 1});
  Mat d = matmul(i2, a);
  CHECK(d.at(0, 0) == 1.0);
  CHECK(d.at(1, 1) == 4.0);
}

TEST_CASE("matmul shape error names both shapes") {
  Mat a(2, 3);
  Mat b(2, 2);
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    CHECK(msg.find("(2x3)") != std::string::npos);
    CHECK(msg.find("(2x2)") != std::string::npos);
  }
}

TEST_CASE("elementwise ops and transpose") {
  Mat x(2, 2, {1, 2, 3, 4});
  Mat y(2, 2, {10, 20, 30, 40});
  CHECK(add(x, y).at(1, 1) == 44.0);
  CHECK(sub(y, x).at(0, 0) == 9.0);
  CHECK(hadamard(x, y).at(0, 1) == 40.0);
  CHECK(scale(x, -2.0).at(1, 0) == -6.0);
  Mat t = transpose(Mat(2, 3, {1, 2, 3, 4, 5, 6}));
  REQUIRE(t.rows == 3);
  REQUIRE(t.cols == 2);
  CHECK(t.at(0, 1) == 4.0);
  CHECK(t.at(2, 0) == 3.0);

  Mat acc(2, 2, {1, 1, 1, 1});
  add_inplace(acc, x);
  CHECK(acc.at(0, 0) == 2.0);
  axpy_inplace(acc, 0.5, y);
  CHECK(acc.at(0, 0) == 7.0);

  CHECK(sum(x) == 10.0);
  CHECK(max_abs(scale(x, -1.0)) == 4.0);

  CHECK_THROWS_AS(add(Mat(2, 2), Mat(3, 2)), ShapeError);
  CHECK_THROWS_AS(Mat(2, 2, {1.0, 2.0}), ShapeError);
}

TEST_CASE("column, scalar and item") {
  double xs[3] = {0.5, 1.5, 2.5};
  Mat c = Mat::column(std::span<const double>(xs, 3));
  REQUIRE(c.rows == 3);
  REQUIRE(c.cols == 1);
  CHECK(c.at(2, 0) == 2.5);
  CHECK(Mat::scalar(3.25).item() == 3.25);
  CHECK_THROWS_AS(c.item(), ShapeError);
}

TEST_CASE("bytes_checksum separates equal from perturbed") {
  Rng rng(9);
  Mat m(4, 5);
  fill_normal(m, rng, 1.0);
  Mat copy = m;
  CHECK(bytes_checksum(m) == bytes_checksum(copy));
  copy.at(3, 4) = std::nextafter(copy.at(3, 4), 1e308);
  CHECK(bytes_checksum(m) != bytes_checksum(copy));

  const Mat* both[2] = {&m, &copy};
  const Mat* same[2] = {&m, &m};
  CHECK(bytes_checksum(std::span<const Mat* const>(both, 2)) !=
        bytes_checksum(std::span<const Mat* const>(same, 2)));
}
