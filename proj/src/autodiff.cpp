#include "psyinn/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <utility>

namespace psyinn::ad {

// ---- Tensor ---------------------------------------------------------------

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_str());
  }
}

Tensor Tensor::row(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor(1, n, std::move(v));
}

Tensor Tensor::column(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor(n, 1, std::move(v));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t(n, n);
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str());
  return data_[0];
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << '[' << rows_ << 'x' << cols_ << ']';
  return os.str();
}

// ---- Var / Tape -----------------------------------------------------------

const Tensor& Var::value() const {
  if (tape_ == nullptr) throw Error("use of an unbound Var");
  return tape_->value(index_);
}

bool Var::requires_grad() const { return tape_ != nullptr && tape_->requires_grad(index_); }

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, true, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, bool requires_grad, BackwardFn backward) {
  Node n{std::move(value), {}, requires_grad, {}};
  if (requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(std::size_t i, const Tensor& g) {
  Node& n = nodes_[i];
  if (!n.requires_grad) return;
  if (n.grad.empty()) {
    n.grad = g;
    return;
  }
  auto dst = n.grad.data();
  auto src = g.data();
  for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
}

Gradients Tape::backward(const Var& loss) {
  if (loss.tape() != this) throw Error("backward: loss belongs to a different tape");
  if (backward_done_) throw Error("backward: tape already differentiated; call clear_gradients() first");
  const Tensor& lv = loss.value();
  if (lv.size() != 1) throw ShapeError("backward: loss must be scalar, got " + lv.shape_str());
  backward_done_ = true;

  accumulate(loss.index(), Tensor::scalar(1.0));
  for (std::size_t i = loss.index() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    n.backward(n.grad);
  }

  std::vector<Tensor> out;
  out.reserve(nodes_.size());
  for (Node& n : nodes_) {
    if (n.grad.empty()) {
      out.emplace_back(n.value.rows(), n.value.cols(), 0.0);
    } else {
      out.push_back(std::move(n.grad));
      n.grad = Tensor();
    }
  }
  return Gradients(std::move(out));
}

void Tape::clear_gradients() {
  for (Node& n : nodes_) n.grad = Tensor();
  backward_done_ = false;
}

void Tape::reset() {
  nodes_.clear();
  backward_done_ = false;
}

// ---- helpers --------------------------------------------------------------

namespace {

Tape* common_tape(const Var& a, const Var& b, const char* op) {
  if (a.tape() == nullptr || a.tape() != b.tape()) {
    throw Error(std::string(op) + ": operands are not on the same tape");
  }
  return a.tape();
}

Var finish(Tape* tape, const char* op, Tensor value, bool rg, Tape::BackwardFn fn) {
  if (!value.all_finite()) throw NumericError(std::string(op) + " produced a non-finite value");
  return tape->record(std::move(value), rg, std::move(fn));
}

std::size_t bdim(std::size_t x, std::size_t y, const char* op, const Tensor& a, const Tensor& b) {
  if (x == y) return x;
  if (x == 1) return y;
  if (y == 1) return x;
  throw ShapeError(std::string(op) + ": cannot broadcast " + a.shape_str() + " with " + b.shape_str());
}

inline double bat(const Tensor& t, std::size_t r, std::size_t c) {
  return t(t.rows() == 1 ? 0 : r, t.cols() == 1 ? 0 : c);
}

// Sums g over the dimensions along which `like` was broadcast.
Tensor reduce_to(const Tensor& g, std::size_t rows, std::size_t cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  Tensor out(rows, cols);
  for (std::size_t r = 0; r < g.rows(); ++r) {
    for (std::size_t c = 0; c < g.cols(); ++c) {
      out(rows == 1 ? 0 : r, cols == 1 ? 0 : c) += g(r, c);
    }
  }
  return out;
}

// Elementwise binary op with broadcasting. `dfa`/`dfb` give the local partial
// derivatives at (x, y).
template <class F, class DA, class DB>
Var binary(const Var& a, const Var& b, const char* op, F f, DA dfa, DB dfb) {
  Tape* tape = common_tape(a, b, op);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t rows = bdim(av.rows(), bv.rows(), op, av, bv);
  const std::size_t cols = bdim(av.cols(), bv.cols(), op, av, bv);
  Tensor out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out(r, c) = f(bat(av, r, c), bat(bv, r, c));

  const std::size_t ia = a.index(), ib = b.index();
  const bool rg = a.requires_grad() || b.requires_grad();
  return finish(tape, op, std::move(out), rg, [tape, ia, ib, rows, cols, dfa, dfb](const Tensor& g) {
    const Tensor& x = tape->value(ia);
    const Tensor& y = tape->value(ib);
    if (tape->requires_grad(ia)) {
      Tensor ga(rows, cols);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) ga(r, c) = g(r, c) * dfa(bat(x, r, c), bat(y, r, c));
      tape->accumulate(ia, reduce_to(ga, x.rows(), x.cols()));
    }
    if (tape->requires_grad(ib)) {
      Tensor gb(rows, cols);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) gb(r, c) = g(r, c) * dfb(bat(x, r, c), bat(y, r, c));
      tape->accumulate(ib, reduce_to(gb, y.rows(), y.cols()));
    }
  });
}

// Elementwise unary op; `df(x, y)` is the derivative given input x and output y.
template <class F, class DF>
Var unary(const Var& a, const char* op, F f, DF df) {
  Tape* tape = a.tape();
  if (tape == nullptr) throw Error(std::string(op) + ": unbound operand");
  const Tensor& av = a.value();
  Tensor out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  const std::size_t ia = a.index();
  const std::size_t io = tape->size();
  return finish(tape, op, std::move(out), a.requires_grad(), [tape, ia, io, df](const Tensor& g) {
    const Tensor& x = tape->value(ia);
    const Tensor& y = tape->value(io);
    Tensor ga(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] = g[i] * df(x[i], y[i]);
    tape->accumulate(ia, ga);
  });
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

// ---- ops ------------------------------------------------------------------

Var add(const Var& a, const Var& b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Var sub(const Var& a, const Var& b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Var mul(const Var& a, const Var& b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Var div(const Var& a, const Var& b) {
  for (double v : b.value().data()) {
    if (v == 0.0) throw DomainError("div: division by zero");
  }
  return binary(
      a, b, "div", [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Var matmul(const Var& a, const Var& b) {
  Tape* tape = common_tape(a, b, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw ShapeError("matmul: inner dimensions differ " + av.shape_str() + " x " + bv.shape_str());
  }
  const std::size_t n = av.rows(), k = av.cols(), m = bv.cols();
  Tensor out(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av(i, p);
      if (aip == 0.0) continue;
      for (std::size_t j = 0; j < m; ++j) out(i, j) += aip * bv(p, j);
    }
  }
  const std::size_t ia = a.index(), ib = b.index();
  const bool rg = a.requires_grad() || b.requires_grad();
  return finish(tape, "matmul", std::move(out), rg, [tape, ia, ib, n, k, m](const Tensor& g) {
    const Tensor& x = tape->value(ia);
    const Tensor& y = tape->value(ib);
    if (tape->requires_grad(ia)) {
      Tensor ga(n, k);  // g * y^T
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < m; ++j) s += g(i, j) * y(p, j);
          ga(i, p) = s;
        }
      tape->accumulate(ia, ga);
    }
    if (tape->requires_grad(ib)) {
      Tensor gb(k, m);  // x^T * g
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double xip = x(i, p);
          if (xip == 0.0) continue;
          for (std::size_t j = 0; j < m; ++j) gb(p, j) += xip * g(i, j);
        }
      tape->accumulate(ib, gb);
    }
  });
}

Var concat(const std::vector<Var>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  if (axis != 0 && axis != 1) throw ShapeError("concat: axis must be 0 or 1");
  Tape* tape = parts.front().tape();
  std::size_t rows = 0, cols = 0;
  bool rg = false;
  for (const Var& p : parts) {
    if (p.tape() != tape) throw Error("concat: operands are not on the same tape");
    const Tensor& v = p.value();
    rg = rg || p.requires_grad();
    if (axis == 0) {
      if (cols == 0 && rows == 0) cols = v.cols();
      if (v.cols() != cols) throw ShapeError("concat: column mismatch " + v.shape_str());
      rows += v.rows();
    } else {
      if (cols == 0 && rows == 0) rows = v.rows();
      if (v.rows() != rows) throw ShapeError("concat: row mismatch " + v.shape_str());
      cols += v.cols();
    }
  }
  Tensor out(rows, cols);
  std::vector<std::size_t> idx;
  std::vector<std::size_t> offset;
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    idx.push_back(p.index());
    offset.push_back(off);
    for (std::size_t r = 0; r < v.rows(); ++r)
      for (std::size_t c = 0; c < v.cols(); ++c) {
        if (axis == 0)
          out(off + r, c) = v(r, c);
        else
          out(r, off + c) = v(r, c);
      }
    off += axis == 0 ? v.rows() : v.cols();
  }
  return finish(tape, "concat", std::move(out), rg,
                [tape, idx = std::move(idx), offset = std::move(offset), axis](const Tensor& g) {
                  for (std::size_t k = 0; k < idx.size(); ++k) {
                    if (!tape->requires_grad(idx[k])) continue;
                    const Tensor& v = tape->value(idx[k]);
                    Tensor gp(v.rows(), v.cols());
                    for (std::size_t r = 0; r < v.rows(); ++r)
                      for (std::size_t c = 0; c < v.cols(); ++c)
                        gp(r, c) = axis == 0 ? g(offset[k] + r, c) : g(r, offset[k] + c);
                    tape->accumulate(idx[k], gp);
                  }
                });
}

Var slice(const Var& a, std::size_t r0, std::size_t r1, std::size_t c0, std::size_t c1) {
  const Tensor& av = a.value();
  if (r0 > r1 || c0 > c1 || r1 > av.rows() || c1 > av.cols()) {
    throw ShapeError("slice: block out of range for " + av.shape_str());
  }
  Tensor out(r1 - r0, c1 - c0);
  for (std::size_t r = r0; r < r1; ++r)
    for (std::size_t c = c0; c < c1; ++c) out(r - r0, c - c0) = av(r, c);
  Tape* tape = a.tape();
  const std::size_t ia = a.index();
  return finish(tape, "slice", std::move(out), a.requires_grad(), [tape, ia, r0, r1, c0, c1](const Tensor& g) {
    const Tensor& x = tape->value(ia);
    Tensor ga(x.rows(), x.cols());
    for (std::size_t r = r0; r < r1; ++r)
      for (std::size_t c = c0; c < c1; ++c) ga(r, c) = g(r - r0, c - c0);
    tape->accumulate(ia, ga);
  });
}

Var sum(const Var& a) {
  const Tensor& av = a.value();
  double s = 0.0;
  for (double v : av.data()) s += v;
  Tape* tape = a.tape();
  const std::size_t ia = a.index();
  return finish(tape, "sum", Tensor::scalar(s), a.requires_grad(), [tape, ia](const Tensor& g) {
    const Tensor& x = tape->value(ia);
    tape->accumulate(ia, Tensor(x.rows(), x.cols(), g.item()));
  });
}

Var sum(const Var& a, int axis) {
  if (axis != 0 && axis != 1) throw ShapeError("sum: axis must be 0 or 1");
  const Tensor& av = a.value();
  Tensor out = axis == 0 ? Tensor(1, av.cols()) : Tensor(av.rows(), 1);
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t c = 0; c < av.cols(); ++c) {
      if (axis == 0)
        out(0, c) += av(r, c);
      else
        out(r, 0) += av(r, c);
    }
  Tape* tape = a.tape();
  const std::size_t ia = a.index();
  return finish(tape, "sum", std::move(out), a.requires_grad(), [tape, ia](const Tensor& g) {
    const Tensor& x = tape->value(ia);
    Tensor ga(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r)
      for (std::size_t c = 0; c < x.cols(); ++c) ga(r, c) = bat(g, r, c);
    tape->accumulate(ia, ga);
  });
}

Var mean(const Var& a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var exp(const Var& a) {
  return unary(
      a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(const Var& a) {
  for (double v : a.value().data()) {
    if (!(v > 0.0)) throw DomainError("log: argument must be positive");
  }
  return unary(
      a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var pow_const(const Var& a, double p) {
  if (p != std::floor(p)) {
    for (double v : a.value().data()) {
      if (v < 0.0) throw DomainError("pow_const: negative base with non-integer exponent");
    }
  }
  return unary(
      a, "pow_const", [p](double x) { return std::pow(x, p); },
      [p](double x, double) { return p == 0.0 ? 0.0 : p * std::pow(x, p - 1.0); });
}

Var sigmoid(const Var& a) {
  return unary(a, "sigmoid", stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Var tanh(const Var& a) {
  return unary(
      a, "tanh", [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var relu(const Var& a) {
  return unary(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var softplus(const Var& a) {
  return unary(
      a, "softplus", [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
      [](double x, double) { return stable_sigmoid(x); });
}

Var clamp(const Var& a, double lo, double hi) {
  if (lo > hi) throw DomainError("clamp: lo > hi");
  return unary(
      a, "clamp", [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Var scale(const Var& a, double s) {
  return unary(
      a, "scale", [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(const Var& a, double s) {
  return unary(
      a, "add_scalar", [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var detach(const Var& a) {
  if (a.tape() == nullptr) throw Error("detach: unbound operand");
  return a.tape()->constant(a.value());
}

Tensor input_gradient(const Var& output, const Var& input) {
  Tape* tape = output.tape();
  if (tape == nullptr || input.tape() != tape || input.index() >= tape->size()) {
    throw Error("input_gradient: input is not on the output's tape");
  }
  if (!input.requires_grad()) throw Error("input_gradient: input is not marked differentiable");
  Gradients g = tape->backward(output);
  return g[input];
}

}  // namespace psyinn::ad
