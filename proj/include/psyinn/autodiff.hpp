#pragma once

// Tape-based reverse-mode automatic differentiation over dense row-major
// matrices of doubles.
//
// Every value is a rank-2 tensor (scalars are 1x1, vectors are 1xk rows or
// kx1 columns). Binary elementwise ops broadcast an operand that is a scalar,
// a single row, or a single column; nothing more general is supported.
//
// A Tape records nodes in creation order, so parents always precede children
// and backward() is a single reverse sweep. Tapes are single-threaded; use one
// tape per thread.

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "psyinn/error.hpp"

namespace psyinn::ad {

class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0);
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor(1, 1, v); }
  static Tensor row(std::vector<double> v);
  static Tensor column(std::vector<double> v);
  static Tensor identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  std::vector<std::size_t> shape() const { return {rows_, cols_}; }
  bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Value of a 1x1 tensor.
  double item() const;

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& vec() const { return data_; }

  bool all_finite() const;
  std::string shape_str() const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives and
// has not been reset.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}

  Tape* tape() const { return tape_; }
  std::size_t index() const { return index_; }
  const Tensor& value() const;
  bool requires_grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t index_ = 0;
};

// Gradients produced by one backward pass, indexed by node. Nodes that did not
// take part in the loss report a zero tensor of their own shape.
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(std::vector<Tensor> grads) : grads_(std::move(grads)) {}
  const Tensor& operator[](const Var& v) const { return grads_.at(v.index()); }
  std::size_t size() const { return grads_.size(); }

 private:
  std::vector<Tensor> grads_;
};

class Tape {
 public:
  using BackwardFn = std::function<void(const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf that participates in differentiation.
  Var variable(Tensor value);
  // Leaf excluded from differentiation.
  Var constant(Tensor value);

  // Records an op result. `backward` is kept only when some parent requires a
  // gradient.
  Var record(Tensor value, bool requires_grad, BackwardFn backward);

  Gradients backward(const Var& loss);

  // Allows another backward pass over the recorded graph.
  void clear_gradients();
  // Drops every node. Outstanding Var handles become invalid.
  void reset();

  std::size_t size() const { return nodes_.size(); }
  const Tensor& value(std::size_t i) const { return nodes_[i].value; }
  bool requires_grad(std::size_t i) const { return nodes_[i].requires_grad; }

  // Adds `g` into the pending gradient of node i (used by op backward fns).
  void accumulate(std::size_t i, const Tensor& g);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::deque<Node> nodes_;
  bool backward_done_ = false;
};

// ---- primitive ops --------------------------------------------------------

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var matmul(const Var& a, const Var& b);
// axis 0 stacks rows, axis 1 stacks columns.
Var concat(const std::vector<Var>& parts, int axis);
// Half-open block [r0, r1) x [c0, c1).
Var slice(const Var& a, std::size_t r0, std::size_t r1, std::size_t c0, std::size_t c1);
Var sum(const Var& a);
// Column sums (1 x cols) for axis 0, row sums (rows x 1) for axis 1.
Var sum(const Var& a, int axis);
Var mean(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var pow_const(const Var& a, double p);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var relu(const Var& a);
Var softplus(const Var& a);
Var clamp(const Var& a, double lo, double hi);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var neg(const Var& a);
// Same value, cut from the graph.
Var detach(const Var& a);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }
inline Var operator*(const Var& a, double s) { return scale(a, s); }
inline Var operator+(const Var& a, double s) { return add_scalar(a, s); }
inline Var operator-(const Var& a) { return neg(a); }

// d output / d input for a scalar output. `input` must be a differentiable
// node of the same tape. Consumes the tape's backward pass.
Tensor input_gradient(const Var& output, const Var& input);

}  // namespace psyinn::ad
