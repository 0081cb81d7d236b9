// SPDX-License-Identifier: Apache-2.0
//
// Minimal define-by-run reverse-mode autodiff over Mat, plus Adam.
// Values are computed eagerly as the graph is built; backward() walks the
// tape in reverse insertion order and accumulates gradients.

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "dmoerm/mat.hpp"

namespace dmoerm {

class Rng;
class Tape;

// Lightweight handle into a Tape. Valid as long as the tape lives.
struct Tensor {
  Tape* tape = nullptr;
  int id = -1;
  int rows = 0;
  int cols = 0;
  bool defined() const { return tape != nullptr && id >= 0; }
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor leaf(const Mat& value, bool requires_grad);
  Tensor matmul(Tensor a, Tensor b);
  Tensor add(Tensor a, Tensor b);
  Tensor sub(Tensor a, Tensor b);
  Tensor scale(Tensor a, double k);
  Tensor sigmoid(Tensor a);
  Tensor log_sigmoid(Tensor a);
  // Elementwise x>0 ? x : slope*x with a learnable scalar slope (1x1).
  Tensor prelu(Tensor x, Tensor slope);
  // Inverted dropout: kept entries scaled by 1/(1-p). p<=0 is the identity.
  Tensor dropout(Tensor x, double p, Rng& rng);
  // Stacks column vectors into one tall column.
  Tensor concat_rows(std::span<const Tensor> parts);

  const Mat& value(Tensor t) const;
  // Runs reverse accumulation from a scalar root. Clears prior gradients.
  void backward(Tensor root);
  // Gradient of the last backward() root w.r.t. t (zeros if unreachable).
  const Mat& grad(Tensor t) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  enum class Kind : std::uint8_t {
    kLeaf, kMatMul, kAdd, kSub, kScale, kSigmoid, kLogSigmoid,
    kPRelu, kDropout, kConcatRows,
  };

  struct Node {
    Kind kind;
    int p0 = -1;
    int p1 = -1;
    double k = 0.0;          // scale factor
    std::vector<int> parts;  // concat parents
    Mat mask;                // dropout keep/scale mask
    bool needs_grad = false;
  };

  Tensor wrap(int id) const;
  int push(Node n, Mat value);
  void check_same_tape(Tensor t, const char* op) const;
  Mat& grad_slot(int id);

  std::vector<Node> nodes_;
  std::vector<Mat> values_;
  mutable std::vector<Mat> grads_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Moment buffers are keyed by parameter order,
// which must stay stable across steps.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(AdamConfig cfg) : cfg_(cfg) {}

  void step(std::span<Mat* const> params, std::span<const Mat* const> grads);
  std::int64_t t() const { return t_; }
  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }

 private:
  AdamConfig cfg_;
  std::vector<Mat> m_, v_;
  std::int64_t t_ = 0;
};

// Central-difference gradient check. f evaluates the loss at the given
// parameters and, when the out pointer is non-null, fills analytic
// gradients (same order and shapes as params). Returns the worst relative
// error |analytic - fd| / (|analytic| + |fd| + 1e-12) over all entries.
double grad_check(
    const std::function<double(const std::vector<Mat>&, std::vector<Mat>*)>& f,
    const std::vector<Mat>& params, double h = 1e-5);

}  // namespace dmoerm
