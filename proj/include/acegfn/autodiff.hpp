#pragma once

// Matrix-level reverse-mode differentiation over a small primitive set:
// affine maps, (leaky) ReLU, masked log-softmax, gathers, segment sums,
// elementwise arithmetic, squares, softplus and log. Values are Eigen
// matrices; a scalar is a 1x1 matrix.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "acegfn/core/errors.hpp"
#include "acegfn/core/log_math.hpp"

namespace acegfn::ad {

using Matrix = Eigen::MatrixXd;
using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Var {
  int id = -1;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, int)>;

  // Parameter leaf: `values` is a row-major rows x cols slice; after
  // backward() its gradient is added into `grad_sink` (same layout).
  Var leaf(std::span<const double> values, int rows, int cols, std::span<double> grad_sink) {
    Node n;
    n.value = Eigen::Map<const RowMajorMatrix>(values.data(), rows, cols);
    n.op = "leaf";
    n.sink = grad_sink;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  Var scalar_leaf(const double& value, double& grad_sink) {
    return leaf(std::span<const double>(&value, 1), 1, 1, std::span<double>(&grad_sink, 1));
  }

  Var constant(Matrix value) {
    Node n;
    n.value = std::move(value);
    n.op = "constant";
    n.constant = true;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  Var constant_scalar(double v) { return constant(Matrix::Constant(1, 1, v)); }

  Var push(Matrix value, const char* op, Backward backward) {
    if (!value.allFinite()) {
      throw NumericalFailure(op, std::string("non-finite value produced by primitive '") + op + "'");
    }
    Node n;
    n.value = std::move(value);
    n.op = op;
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  double scalar(Var v) const { return nodes_[v.id].value(0, 0); }
  std::size_t size() const { return nodes_.size(); }

  // Gradient accumulator of node `id`, zero-initialised on first touch.
  Matrix& grad(int id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }
  bool is_constant(int id) const { return nodes_[id].constant; }
  bool has_grad(int id) const { return nodes_[id].grad.size() != 0; }
  const Matrix& grad_of(Var v) const { return nodes_[v.id].grad; }

  void backward(Var root) {
    if (nodes_[root.id].value.size() != 1) throw Error("backward() needs a scalar root");
    grad(root.id)(0, 0) = 1.0;
    for (int i = root.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.grad.size() == 0) continue;
      if (!n.grad.allFinite()) {
        throw NumericalFailure(n.op, std::string("non-finite gradient at primitive '") + n.op + "'");
      }
      if (n.backward) {
        n.backward(*this, i);
      } else if (!n.sink.empty()) {
        Eigen::Map<RowMajorMatrix> sink(n.sink.data(), n.value.rows(), n.value.cols());
        sink += n.grad;
      }
    }
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    const char* op = "";
    std::span<double> sink;
    bool constant = false;
  };
  std::vector<Node> nodes_;
};

// y = x W^T + 1 b^T, with x: N x in, W: out x in, b: 1 x out.
inline Var affine(Tape& t, Var x, Var w, Var b) {
  Matrix y = t.value(x) * t.value(w).transpose();
  y.rowwise() += t.value(b).row(0);
  return t.push(std::move(y), "affine", [x, w, b](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    tp.grad(w.id).noalias() += g.transpose() * tp.value(x);
    tp.grad(b.id).row(0) += g.colwise().sum();
    if (!tp.is_constant(x.id)) tp.grad(x.id).noalias() += g * tp.value(w);
  });
}

inline Var leaky_relu(Tape& t, Var x, double slope) {
  const Matrix& xv = t.value(x);
  Matrix y = xv.unaryExpr([slope](double v) { return v > 0.0 ? v : slope * v; });
  return t.push(std::move(y), slope == 0.0 ? "relu" : "leaky_relu", [x, slope](Tape& tp, int self) {
    const Matrix& xv = tp.value(x);
    const Matrix d = xv.unaryExpr([slope](double v) { return v > 0.0 ? 1.0 : slope; });
    tp.grad(x.id) += tp.grad(self).cwiseProduct(d);
  });
}

// Row-wise log-softmax where mask[r * cols + c] == 0 marks a disallowed
// entry. Disallowed outputs carry kMaskedLogit - lse and receive no gradient.
inline Var masked_log_softmax(Tape& t, Var x, std::span<const std::uint8_t> mask) {
  const Matrix& xv = t.value(x);
  const Eigen::Index rows = xv.rows(), cols = xv.cols();
  Matrix y(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    double hi = kNegInf;
    for (Eigen::Index c = 0; c < cols; ++c)
      if (mask[r * cols + c]) hi = std::max(hi, xv(r, c));
    if (hi == kNegInf) throw EmptyActionSet("masked_log_softmax: row with no allowed action");
    double acc = 0.0;
    for (Eigen::Index c = 0; c < cols; ++c)
      if (mask[r * cols + c]) acc += std::exp(xv(r, c) - hi);
    const double lse = hi + std::log(acc);
    for (Eigen::Index c = 0; c < cols; ++c)
      y(r, c) = mask[r * cols + c] ? xv(r, c) - lse : kMaskedLogit - lse;
  }
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  return t.push(std::move(y), "masked_log_softmax", [x, m = std::move(m)](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    const Matrix& yv = tp.value(Var{self});
    Matrix& gx = tp.grad(x.id);
    const Eigen::Index cols = yv.cols();
    for (Eigen::Index r = 0; r < yv.rows(); ++r) {
      double gsum = 0.0;
      for (Eigen::Index c = 0; c < cols; ++c)
        if (m[r * cols + c]) gsum += g(r, c);
      for (Eigen::Index c = 0; c < cols; ++c)
        if (m[r * cols + c]) gx(r, c) += g(r, c) - std::exp(yv(r, c)) * gsum;
    }
  });
}

// out[r] = x(r, index[r]); N x 1.
inline Var pick(Tape& t, Var x, std::span<const int> index) {
  const Matrix& xv = t.value(x);
  Matrix y(xv.rows(), 1);
  for (Eigen::Index r = 0; r < xv.rows(); ++r) y(r, 0) = xv(r, index[r]);
  std::vector<int> idx(index.begin(), index.end());
  return t.push(std::move(y), "pick", [x, idx = std::move(idx)](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    Matrix& gx = tp.grad(x.id);
    for (Eigen::Index r = 0; r < g.rows(); ++r) gx(r, idx[r]) += g(r, 0);
  });
}

// out.row(r) = x.row(rows[r]).
inline Var gather_rows(Tape& t, Var x, std::span<const int> rows) {
  const Matrix& xv = t.value(x);
  Matrix y(static_cast<Eigen::Index>(rows.size()), xv.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) y.row(r) = xv.row(rows[r]);
  std::vector<int> idx(rows.begin(), rows.end());
  return t.push(std::move(y), "gather_rows", [x, idx = std::move(idx)](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    Matrix& gx = tp.grad(x.id);
    for (std::size_t r = 0; r < idx.size(); ++r) gx.row(idx[r]) += g.row(r);
  });
}

// Sums the rows of an N x 1 column into `segments` buckets.
inline Var segment_sum(Tape& t, Var x, std::span<const int> segment, int segments) {
  const Matrix& xv = t.value(x);
  Matrix y = Matrix::Zero(segments, 1);
  for (Eigen::Index r = 0; r < xv.rows(); ++r) y(segment[r], 0) += xv(r, 0);
  std::vector<int> seg(segment.begin(), segment.end());
  return t.push(std::move(y), "segment_sum", [x, seg = std::move(seg)](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    Matrix& gx = tp.grad(x.id);
    for (std::size_t r = 0; r < seg.size(); ++r) gx(r, 0) += g(seg[r], 0);
  });
}

inline Var row_sum(Tape& t, Var x) {
  Matrix y = t.value(x).rowwise().sum();
  return t.push(std::move(y), "row_sum", [x](Tape& tp, int self) {
    Matrix& gx = tp.grad(x.id);
    gx.colwise() += tp.grad(self).col(0);
  });
}

// a + b; b may be 1x1 (broadcast) or the same shape as a.
inline Var add(Tape& t, Var a, Var b) {
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  const bool bcast = bv.size() == 1 && av.size() != 1;
  Matrix y = bcast ? Matrix(av.array() + bv(0, 0)) : Matrix(av + bv);
  return t.push(std::move(y), "add", [a, b, bcast](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    tp.grad(a.id) += g;
    if (bcast) tp.grad(b.id)(0, 0) += g.sum();
    else tp.grad(b.id) += g;
  });
}

inline Var sub(Tape& t, Var a, Var b) {
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  const bool bcast = bv.size() == 1 && av.size() != 1;
  Matrix y = bcast ? Matrix(av.array() - bv(0, 0)) : Matrix(av - bv);
  return t.push(std::move(y), "sub", [a, b, bcast](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    tp.grad(a.id) += g;
    if (bcast) tp.grad(b.id)(0, 0) -= g.sum();
    else tp.grad(b.id) -= g;
  });
}

inline Var add_const(Tape& t, Var a, const Matrix& c) {
  Matrix y = t.value(a) + c;
  return t.push(std::move(y), "add_const", [a](Tape& tp, int self) { tp.grad(a.id) += tp.grad(self); });
}

inline Var scale(Tape& t, Var a, double c) {
  Matrix y = t.value(a) * c;
  return t.push(std::move(y), "scale", [a, c](Tape& tp, int self) { tp.grad(a.id) += c * tp.grad(self); });
}

inline Var mul_const(Tape& t, Var a, const Matrix& c) {
  Matrix y = t.value(a).cwiseProduct(c);
  return t.push(std::move(y), "mul_const", [a, c](Tape& tp, int self) {
    tp.grad(a.id) += tp.grad(self).cwiseProduct(c);
  });
}

inline Var square(Tape& t, Var a) {
  Matrix y = t.value(a).array().square();
  return t.push(std::move(y), "square", [a](Tape& tp, int self) {
    tp.grad(a.id) += 2.0 * tp.grad(self).cwiseProduct(tp.value(a));
  });
}

inline Var softplus(Tape& t, Var a) {
  Matrix y = t.value(a).unaryExpr([](double q) { return acegfn::softplus(q); });
  return t.push(std::move(y), "softplus", [a](Tape& tp, int self) {
    const Matrix s = tp.value(a).unaryExpr([](double q) { return acegfn::sigmoid(q); });
    tp.grad(a.id) += tp.grad(self).cwiseProduct(s);
  });
}

inline Var log(Tape& t, Var a) {
  Matrix y = t.value(a).array().log();
  return t.push(std::move(y), "log", [a](Tape& tp, int self) {
    tp.grad(a.id) += tp.grad(self).cwiseQuotient(tp.value(a));
  });
}

// Row-wise select: flags[r] ? a.row(r) : b.row(r).
inline Var where(Tape& t, std::span<const std::uint8_t> flags, Var a, Var b) {
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  Matrix y = bv;
  for (Eigen::Index r = 0; r < y.rows(); ++r)
    if (flags[r]) y.row(r) = av.row(r);
  std::vector<std::uint8_t> f(flags.begin(), flags.end());
  return t.push(std::move(y), "where", [a, b, f = std::move(f)](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    Matrix& ga = tp.grad(a.id);
    Matrix& gb = tp.grad(b.id);
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      if (f[r]) ga.row(r) += g.row(r);
      else gb.row(r) += g.row(r);
    }
  });
}

inline Var sum(Tape& t, Var a) {
  Matrix y = Matrix::Constant(1, 1, t.value(a).sum());
  return t.push(std::move(y), "sum", [a](Tape& tp, int self) {
    tp.grad(a.id).array() += tp.grad(self)(0, 0);
  });
}

inline Var mean(Tape& t, Var a) {
  const double n = static_cast<double>(t.value(a).size());
  return scale(t, sum(t, a), 1.0 / n);
}

// Weighted sum of an N x 1 column with constant weights.
inline Var dot_const(Tape& t, Var a, const Matrix& weights) { return sum(t, mul_const(t, a, weights)); }

struct LossAndGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

// Evaluates `loss_fn(tape, params_leaf_values, grad_sink)` and returns the
// loss together with the exact reverse-mode gradient w.r.t. `params`.
// The callable builds its graph from `tape` and returns a scalar Var.
template <class F>
LossAndGrad loss_and_grad(F&& loss_fn, std::span<const double> params) {
  LossAndGrad out;
  out.grad.assign(params.size(), 0.0);
  Tape tape;
  Var root = loss_fn(tape, params, std::span<double>(out.grad));
  out.loss = tape.scalar(root);
  tape.backward(root);
  return out;
}

}  // namespace acegfn::ad
