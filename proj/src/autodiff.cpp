// SPDX-License-Identifier: Apache-2.0

#include "dmoerm/autodiff.hpp"

#include <cmath>
#include <string>

#include "dmoerm/errors.hpp"
#include "dmoerm/rng.hpp"

namespace dmoerm {

namespace {

double sigmoid_stable(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(sigmoid(x)) = -softplus(-x), safe at both tails.
double log_sigmoid_stable(double x) {
  if (x >= 0.0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

}  // namespace

Tensor Tape::wrap(int id) const {
  return Tensor{const_cast<Tape*>(this), id, values_[id].rows, values_[id].cols};
}

int Tape::push(Node n, Mat value) {
  nodes_.push_back(std::move(n));
  values_.push_back(std::move(value));
  return static_cast<int>(nodes_.size()) - 1;
}

void Tape::check_same_tape(Tensor t, const char* op) const {
  if (t.tape != this || t.id < 0 || t.id >= static_cast<int>(nodes_.size()))
    throw StateError(std::string(op) + ": tensor does not belong to this tape");
}

Tensor Tape::leaf(const Mat& value, bool requires_grad) {
  Node n{Kind::kLeaf};
  n.needs_grad = requires_grad;
  return wrap(push(std::move(n), value));
}

Tensor Tape::matmul(Tensor a, Tensor b) {
  check_same_tape(a, "matmul");
  check_same_tape(b, "matmul");
  Mat c = dmoerm::matmul(values_[a.id], values_[b.id]);
  Node n{Kind::kMatMul, a.id, b.id};
  n.needs_grad = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
  return wrap(push(std::move(n), std::move(c)));
}

Tensor Tape::add(Tensor a, Tensor b) {
  check_same_tape(a, "add");
  check_same_tape(b, "add");
  Mat c = dmoerm::add(values_[a.id], values_[b.id]);
  Node n{Kind::kAdd, a.id, b.id};
  n.needs_grad = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
  return wrap(push(std::move(n), std::move(c)));
}

Tensor Tape::sub(Tensor a, Tensor b) {
  check_same_tape(a, "sub");
  check_same_tape(b, "sub");
  Mat c = dmoerm::sub(values_[a.id], values_[b.id]);
  Node n{Kind::kSub, a.id, b.id};
  n.needs_grad = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
  return wrap(push(std::move(n), std::move(c)));
}

Tensor Tape::scale(Tensor a, double k) {
  check_same_tape(a, "scale");
  Mat c = dmoerm::scale(values_[a.id], k);
  Node n{Kind::kScale, a.id};
  n.k = k;
  n.needs_grad = nodes_[a.id].needs_grad;
  return wrap(push(std::move(n), std::move(c)));
}

Tensor Tape::sigmoid(Tensor a) {
  check_same_tape(a, "sigmoid");
  Mat c(values_[a.id].rows, values_[a.id].cols);
  for (std::size_t i = 0; i < c.size(); ++i)
    c.a[i] = sigmoid_stable(values_[a.id].a[i]);
  Node n{Kind::kSigmoid, a.id};
  n.needs_grad = nodes_[a.id].needs_grad;
  return wrap(push(std::move(n), std::move(c)));
}

Tensor Tape::log_sigmoid(Tensor a) {
  check_same_tape(a, "log_sigmoid");
  Mat c(values_[a.id].rows, values_[a.id].cols);
  for (std::size_t i = 0; i < c.size(); ++i)
    c.a[i] = log_sigmoid_stable(values_[a.id].a[i]);
  Node n{Kind::kLogSigmoid, a.id};
  n.needs_grad = nodes_[a.id].needs_grad;
  return wrap(push(std::move(n), std::move(c)));
}

Tensor Tape::prelu(Tensor x, Tensor slope) {
  check_same_tape(x, "prelu");
  check_same_tape(slope, "prelu");
  if (slope.rows != 1 || slope.cols != 1)
    throw ShapeError("prelu: slope must be (1x1), got " +
                     values_[slope.id].shape_str());
  const double s = values_[slope.id].a[0];
  Mat c(values_[x.id].rows, values_[x.id].cols);
  for (std::size_t i = 0; i < c.size(); ++i) {
    double v = values_[x.id].a[i];
    c.a[i] = v > 0.0 ? v : s * v;
  }
  Node n{Kind::kPRelu, x.id, slope.id};
  n.needs_grad = nodes_[x.id].needs_grad || nodes_[slope.id].needs_grad;
  return wrap(push(std::move(n), std::move(c)));
}

Tensor Tape::dropout(Tensor x, double p, Rng& rng) {
  check_same_tape(x, "dropout");
  if (p <= 0.0) return x;
  if (p >= 1.0) throw ConfigError("dropout: rate must be < 1, got " + std::to_string(p));
  const double keep_scale = 1.0 / (1.0 - p);
  Mat mask(values_[x.id].rows, values_[x.id].cols);
  for (std::size_t i = 0; i < mask.size(); ++i)
    mask.a[i] = rng.uniform() < p ? 0.0 : keep_scale;
  Mat c = hadamard(values_[x.id], mask);
  Node n{Kind::kDropout, x.id};
  n.mask = std::move(mask);
  n.needs_grad = nodes_[x.id].needs_grad;
  return wrap(push(std::move(n), std::move(c)));
}

Tensor Tape::concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ConfigError("concat_rows: empty part list");
  int total = 0;
  bool needs = false;
  for (Tensor t : parts) {
    check_same_tape(t, "concat_rows");
    if (t.cols != 1)
      throw ShapeError("concat_rows: parts must be column vectors, got " +
                       values_[t.id].shape_str());
    total += t.rows;
    needs = needs || nodes_[t.id].needs_grad;
  }
  Mat c(total, 1);
  int row = 0;
  Node n{Kind::kConcatRows};
  for (Tensor t : parts) {
    for (int i = 0; i < t.rows; ++i) c.at(row++, 0) = values_[t.id].at(i, 0);
    n.parts.push_back(t.id);
  }
  n.needs_grad = needs;
  return wrap(push(std::move(n), std::move(c)));
}

const Mat& Tape::value(Tensor t) const {
  check_same_tape(t, "value");
  return values_[t.id];
}

Mat& Tape::grad_slot(int id) {
  if (grads_[id].size() == 0)
    grads_[id] = Mat::zeros(values_[id].rows, values_[id].cols);
  return grads_[id];
}

void Tape::backward(Tensor root) {
  check_same_tape(root, "backward");
  if (root.rows != 1 || root.cols != 1)
    throw StateError("backward: root must be scalar (1x1), got " +
                     values_[root.id].shape_str());
  grads_.clear();
  grads_.resize(nodes_.size());
  grad_slot(root.id).a[0] = 1.0;

  for (int id = root.id; id >= 0; --id) {
    const Node& n = nodes_[id];
    if (!n.needs_grad || grads_[id].size() == 0) continue;
    const Mat& g = grads_[id];
    switch (n.kind) {
      case Kind::kLeaf:
        break;
      case Kind::kMatMul: {
        if (nodes_[n.p0].needs_grad)
          add_inplace(grad_slot(n.p0), dmoerm::matmul(g, transpose(values_[n.p1])));
        if (nodes_[n.p1].needs_grad)
          add_inplace(grad_slot(n.p1), dmoerm::matmul(transpose(values_[n.p0]), g));
        break;
      }
      case Kind::kAdd: {
        if (nodes_[n.p0].needs_grad) add_inplace(grad_slot(n.p0), g);
        if (nodes_[n.p1].needs_grad) add_inplace(grad_slot(n.p1), g);
        break;
      }
      case Kind::kSub: {
        if (nodes_[n.p0].needs_grad) add_inplace(grad_slot(n.p0), g);
        if (nodes_[n.p1].needs_grad) axpy_inplace(grad_slot(n.p1), -1.0, g);
        break;
      }
      case Kind::kScale: {
        if (nodes_[n.p0].needs_grad) axpy_inplace(grad_slot(n.p0), n.k, g);
        break;
      }
      case Kind::kSigmoid: {
        if (nodes_[n.p0].needs_grad) {
          Mat& dst = grad_slot(n.p0);
          const Mat& s = values_[id];
          for (std::size_t i = 0; i < dst.size(); ++i)
            dst.a[i] += g.a[i] * s.a[i] * (1.0 - s.a[i]);
        }
        break;
      }
      case Kind::kLogSigmoid: {
        if (nodes_[n.p0].needs_grad) {
          Mat& dst = grad_slot(n.p0);
          const Mat& x = values_[n.p0];
          for (std::size_t i = 0; i < dst.size(); ++i)
            dst.a[i] += g.a[i] * sigmoid_stable(-x.a[i]);
        }
        break;
      }
      case Kind::kPRelu: {
        const Mat& x = values_[n.p0];
        const double s = values_[n.p1].a[0];
        if (nodes_[n.p0].needs_grad) {
          Mat& dst = grad_slot(n.p0);
          for (std::size_t i = 0; i < dst.size(); ++i)
            dst.a[i] += g.a[i] * (x.a[i] > 0.0 ? 1.0 : s);
        }
        if (nodes_[n.p1].needs_grad) {
          double ds = 0.0;
          for (std::size_t i = 0; i < x.size(); ++i)
            if (x.a[i] <= 0.0) ds += g.a[i] * x.a[i];
          grad_slot(n.p1).a[0] += ds;
        }
        break;
      }
      case Kind::kDropout: {
        if (nodes_[n.p0].needs_grad) {
          Mat& dst = grad_slot(n.p0);
          for (std::size_t i = 0; i < dst.size(); ++i)
            dst.a[i] += g.a[i] * n.mask.a[i];
        }
        break;
      }
      case Kind::kConcatRows: {
        int row = 0;
        for (int pid : n.parts) {
          const int r = values_[pid].rows;
          if (nodes_[pid].needs_grad) {
            Mat& dst = grad_slot(pid);
            for (int i = 0; i < r; ++i) dst.at(i, 0) += g.at(row + i, 0);
          }
          row += r;
        }
        break;
      }
    }
  }
}

const Mat& Tape::grad(Tensor t) const {
  check_same_tape(t, "grad");
  if (grads_.size() != nodes_.size())
    throw StateError("grad: backward() has not run on this tape");
  if (grads_[t.id].size() == 0)
    grads_[t.id] = Mat::zeros(t.rows, t.cols);
  return grads_[t.id];
}

void AdamOptimizer::step(std::span<Mat* const> params,
                         std::span<const Mat* const> grads) {
  if (params.size() != grads.size())
    throw ShapeError("adam: " + std::to_string(params.size()) + " params vs " +
                     std::to_string(grads.size()) + " grads");
  if (t_ == 0) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const Mat* p : params) {
      m_.push_back(Mat::zeros(p->rows, p->cols));
      v_.push_back(Mat::zeros(p->rows, p->cols));
    }
  } else if (params.size() != m_.size()) {
    throw ShapeError("adam: parameter count changed from " +
                     std::to_string(m_.size()) + " to " +
                     std::to_string(params.size()));
  }
  t_ += 1;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Mat& p = *params[i];
    const Mat& g = *grads[i];
    if (!p.same_shape(g) || !p.same_shape(m_[i]))
      throw ShapeError("adam: param " + std::to_string(i) + " shape " +
                       p.shape_str() + " vs grad " + g.shape_str() +
                       " vs state " + m_[i].shape_str());
    for (std::size_t j = 0; j < p.size(); ++j) {
      m_[i].a[j] = cfg_.beta1 * m_[i].a[j] + (1.0 - cfg_.beta1) * g.a[j];
      v_[i].a[j] = cfg_.beta2 * v_[i].a[j] + (1.0 - cfg_.beta2) * g.a[j] * g.a[j];
      const double mhat = m_[i].a[j] / bc1;
      const double vhat = v_[i].a[j] / bc2;
      p.a[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

double grad_check(
    const std::function<double(const std::vector<Mat>&, std::vector<Mat>*)>& f,
    const std::vector<Mat>& params, double h) {
  std::vector<Mat> analytic;
  f(params, &analytic);
  if (analytic.size() != params.size())
    throw ShapeError("grad_check: fn returned " + std::to_string(analytic.size()) +
                     " grads for " + std::to_string(params.size()) + " params");
  double worst = 0.0;
  std::vector<Mat> probe = params;
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (std::size_t j = 0; j < params[i].size(); ++j) {
      const double orig = probe[i].a[j];
      probe[i].a[j] = orig + h;
      const double up = f(probe, nullptr);
      probe[i].a[j] = orig - h;
      const double dn = f(probe, nullptr);
      probe[i].a[j] = orig;
      const double fd = (up - dn) / (2.0 * h);
      const double an = analytic[i].a[j];
      const double rel = std::fabs(an - fd) / (std::fabs(an) + std::fabs(fd) + 1e-12);
      if (rel > worst) worst = rel;
    }
  }
  return worst;
}

}  // namespace dmoerm
