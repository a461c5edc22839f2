#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "hacd/error.hpp"
#include "hacd/sparse.hpp"

namespace hacd {

/// Dense row-major matrix of doubles. Vectors are 1 x c or r x 1 and
/// scalars are 1 x 1.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> data) : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows * cols) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) + " != " + std::to_string(rows) + "x" +
                       std::to_string(cols));
    }
  }

  static Tensor scalar(double v) { return Tensor(1, 1, v); }
  static Tensor column(std::vector<double> v) {
    auto n = v.size();
    return Tensor(n, 1, std::move(v));
  }
  static Tensor row(std::vector<double> v) {
    auto n = v.size();
    return Tensor(1, n, std::move(v));
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::array<std::size_t, 2> shape() const noexcept { return {rows_, cols_}; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t k) { return data_[k]; }
  double operator[](std::size_t k) const { return data_[k]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::span<double> row_span(std::size_t r) { return std::span<double>(data_).subspan(r * cols_, cols_); }
  std::span<const double> row_span(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols_, cols_);
  }

  double item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_string());
    return data_[0];
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  std::string shape_string() const { return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]"; }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

struct NamedTensor {
  std::string name;
  Tensor value;
};

namespace detail {

// Kernel thread count, capped by HACD_THREADS (default 1). Work is split by
// output rows, so results do not depend on the thread count.
inline std::size_t kernel_threads() {
  static const std::size_t n = [] {
    const char* env = std::getenv("HACD_THREADS");
    if (!env) return std::size_t{1};
    long v = std::strtol(env, nullptr, 10);
    return v < 1 ? std::size_t{1} : static_cast<std::size_t>(v);
  }();
  return n;
}

template <class F>
void parallel_rows(std::size_t rows, std::size_t work_per_row, F&& body) {
  std::size_t threads = std::min(kernel_threads(), rows);
  if (threads <= 1 || rows * work_per_row < (1u << 16)) {
    body(std::size_t{0}, rows);
    return;
  }
  std::vector<std::thread> pool;
  std::size_t chunk = (rows + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    std::size_t lo = t * chunk, hi = std::min(rows, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&body, lo, hi] { body(lo, hi); });
  }
  for (auto& th : pool) th.join();
}

}  // namespace detail

namespace ad {

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

/// CSR index structure without values; used for per-row segments of edge
/// lists (neighbor lists, sparse attention patterns).
struct RowPattern {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> row_ptr{0};
  std::vector<std::size_t> col_idx;

  std::size_t nnz() const noexcept { return col_idx.size(); }

  // Row of each stored entry.
  std::vector<std::size_t> entry_rows() const {
    std::vector<std::size_t> r(nnz());
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t k = row_ptr[i]; k < row_ptr[i + 1]; ++k) r[k] = i;
    return r;
  }
};

/// Append-only record of a computation for reverse-mode differentiation.
///
/// Nodes are stored in creation order, which is a topological order. A
/// backward pass visits each node once in reverse and accumulates gradients
/// additively at fan-out. Only nodes reachable from a trainable parameter
/// carry gradients.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& out, const Tensor& grad_out)>;

  explicit Tape(bool check_finite = true) : check_finite_(check_finite) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor t) { return push("constant", std::move(t), {}, false, nullptr); }

  Var parameter(Tensor t, std::string name = {}) {
    Var v = push("parameter", std::move(t), {}, true, nullptr);
    nodes_[v.id].trainable = true;
    nodes_[v.id].name = std::move(name);
    return v;
  }

  // Records an op output. The backward closure receives the op's output and
  // d(loss)/d(output), and adds its contributions to the inputs' buffers.
  Var record(std::string op, Tensor value, std::vector<std::size_t> inputs, BackwardFn fn) {
    bool needs = false;
    for (auto i : inputs) needs = needs || nodes_[i].requires_grad;
    if (check_finite_ && !value.all_finite()) throw NumericError("non-finite output from op '" + op + "'");
    return push(std::move(op), std::move(value), std::move(inputs), needs, needs ? std::move(fn) : nullptr);
  }

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const std::string& op_name(Var v) const { return nodes_.at(v.id).op; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Gradient of the last backward pass; zero-filled when the node received none.
  Tensor grad(Var v) const {
    const auto& n = nodes_.at(v.id);
    if (n.grad.size() == 0) return Tensor(n.value.rows(), n.value.cols(), 0.0);
    return n.grad;
  }

  void accumulate(std::size_t id, const Tensor& g) {
    auto& n = nodes_[id];
    if (!n.requires_grad) return;
    Tensor& buf = grad_buffer(id);
    for (std::size_t k = 0; k < g.size(); ++k) buf[k] += g[k];
  }

  Tensor& grad_buffer(std::size_t id) {
    auto& n = nodes_[id];
    if (n.grad.size() == 0) n.grad = Tensor(n.value.rows(), n.value.cols(), 0.0);
    return n.grad;
  }

  void backward(Var loss) {
    if (backward_done_) throw Error("backward called twice on the same tape without reset_gradients()");
    const auto& lv = value(loss);
    if (lv.size() != 1) throw ShapeError("backward needs a scalar loss, got " + lv.shape_string());
    backward_done_ = true;
    grad_buffer(loss.id)[0] = 1.0;
    for (std::size_t k = loss.id + 1; k-- > 0;) {
      auto& n = nodes_[k];
      if (!n.backward || n.grad.size() == 0) continue;
      n.backward(*this, n.value, n.grad);
      if (check_finite_) {
        for (auto i : n.inputs) {
          if (nodes_[i].grad.size() != 0 && !nodes_[i].grad.all_finite()) {
            throw NumericError("non-finite gradient produced by op '" + n.op + "'");
          }
        }
      }
    }
  }

  void reset_gradients() {
    for (auto& n : nodes_) n.grad = Tensor();
    backward_done_ = false;
  }

  // Trainable leaves in creation order.
  std::vector<Var> parameters() {
    std::vector<Var> out;
    for (std::size_t k = 0; k < nodes_.size(); ++k)
      if (nodes_[k].trainable) out.push_back({this, k});
    return out;
  }

 private:
  struct Node {
    std::string op;
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    bool trainable = false;
    std::string name;
  };

  Var push(std::string op, Tensor value, std::vector<std::size_t> inputs, bool requires_grad, BackwardFn fn) {
    Node n;
    n.op = std::move(op);
    n.value = std::move(value);
    n.inputs = std::move(inputs);
    n.requires_grad = requires_grad;
    n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  bool check_finite_;
  bool backward_done_ = false;
};

inline const Tensor& Var::value() const { return tape->value(*this); }

namespace detail {

inline Tape& same_tape(Var a, Var b, const char* op) {
  if (a.tape != b.tape || a.tape == nullptr) throw Error(std::string(op) + ": operands live on different tapes");
  return *a.tape;
}

[[noreturn]] inline void shape_fail(const char* op, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape_string() + " and " + b.shape_string());
}

// Broadcast extent of one dimension: equal, or one side is 1.
inline std::size_t bdim(std::size_t x, std::size_t y, bool& ok) {
  if (x == y) return x;
  if (x == 1) return y;
  if (y == 1) return x;
  ok = false;
  return 0;
}

template <class Fwd, class DA, class DB>
Var broadcast_binary(const char* op, Var a, Var b, Fwd fwd, DA da, DB db) {
  Tape& t = same_tape(a, b, op);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  bool ok = true;
  std::size_t R = bdim(A.rows(), B.rows(), ok), C = bdim(A.cols(), B.cols(), ok);
  if (!ok) shape_fail(op, A, B);
  Tensor out(R, C);
  auto ia = [&](std::size_t r, std::size_t c) { return (A.rows() == 1 ? 0 : r) * A.cols() + (A.cols() == 1 ? 0 : c); };
  auto ib = [&](std::size_t r, std::size_t c) { return (B.rows() == 1 ? 0 : r) * B.cols() + (B.cols() == 1 ? 0 : c); };
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c) out(r, c) = fwd(A[ia(r, c)], B[ib(r, c)]);
  return t.record(op, std::move(out), {a.id, b.id}, [a, b, R, C, da, db](Tape& tp, const Tensor&, const Tensor& g) {
    const Tensor& A = tp.value(a);
    const Tensor& B = tp.value(b);
    auto ia = [&](std::size_t r, std::size_t c) { return (A.rows() == 1 ? 0 : r) * A.cols() + (A.cols() == 1 ? 0 : c); };
    auto ib = [&](std::size_t r, std::size_t c) { return (B.rows() == 1 ? 0 : r) * B.cols() + (B.cols() == 1 ? 0 : c); };
    if (tp.requires_grad(a)) {
      Tensor& ga = tp.grad_buffer(a.id);
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) ga[ia(r, c)] += g(r, c) * da(A[ia(r, c)], B[ib(r, c)]);
    }
    if (tp.requires_grad(b)) {
      Tensor& gb = tp.grad_buffer(b.id);
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) gb[ib(r, c)] += g(r, c) * db(A[ia(r, c)], B[ib(r, c)]);
    }
  });
}

// Elementwise unary op; dfn(x, y) is dy/dx given input x and output y.
template <class F, class D>
Var unary(const char* op, Var a, F fn, D dfn) {
  const Tensor& A = a.value();
  Tensor out(A.rows(), A.cols());
  for (std::size_t k = 0; k < A.size(); ++k) out[k] = fn(A[k]);
  return a.tape->record(op, std::move(out), {a.id}, [a, dfn](Tape& tp, const Tensor& Y, const Tensor& g) {
    const Tensor& A = tp.value(a);
    Tensor& ga = tp.grad_buffer(a.id);
    for (std::size_t k = 0; k < A.size(); ++k) ga[k] += g[k] * dfn(A[k], Y[k]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Dense catalog

inline Var matmul(Var a, Var b) {
  Tape& t = detail::same_tape(a, b, "matmul");
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.cols() != B.rows()) detail::shape_fail("matmul", A, B);
  const std::size_t n = A.rows(), m = A.cols(), p = B.cols();
  Tensor out(n, p);
  hacd::detail::parallel_rows(n, m * p, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i)
      for (std::size_t k = 0; k < m; ++k) {
        double aik = A(i, k);
        if (aik == 0.0) continue;
        for (std::size_t j = 0; j < p; ++j) out(i, j) += aik * B(k, j);
      }
  });
  return t.record("matmul", std::move(out), {a.id, b.id}, [a, b, n, m, p](Tape& tp, const Tensor&, const Tensor& g) {
    const Tensor& A = tp.value(a);
    const Tensor& B = tp.value(b);
    if (tp.requires_grad(a)) {
      Tensor& ga = tp.grad_buffer(a.id);
      hacd::detail::parallel_rows(n, m * p, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i)
          for (std::size_t k = 0; k < m; ++k) {
            double s = 0.0;
            for (std::size_t j = 0; j < p; ++j) s += g(i, j) * B(k, j);
            ga(i, k) += s;
          }
      });
    }
    if (tp.requires_grad(b)) {
      Tensor& gb = tp.grad_buffer(b.id);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < m; ++k) {
          double aik = A(i, k);
          if (aik == 0.0) continue;
          for (std::size_t j = 0; j < p; ++j) gb(k, j) += aik * g(i, j);
        }
    }
  });
}

// add / sub / hadamard broadcast 1x1, row and column vectors.
inline Var add(Var a, Var b) {
  return detail::broadcast_binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

inline Var sub(Var a, Var b) {
  return detail::broadcast_binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

inline Var hadamard(Var a, Var b) {
  return detail::broadcast_binary(
      "hadamard", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

inline Var scale(Var a, double s) {
  const Tensor& A = a.value();
  Tensor out(A.rows(), A.cols());
  for (std::size_t k = 0; k < A.size(); ++k) out[k] = s * A[k];
  return a.tape->record("scale", std::move(out), {a.id}, [a, s](Tape& tp, const Tensor&, const Tensor& g) {
    Tensor& ga = tp.grad_buffer(a.id);
    for (std::size_t k = 0; k < g.size(); ++k) ga[k] += s * g[k];
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  Tape& t = *parts.front().tape;
  std::size_t rows = parts.front().rows(), cols = 0;
  std::vector<std::size_t> ids, offsets;
  for (auto v : parts) {
    if (v.tape != &t) throw Error("concat_cols: operands live on different tapes");
    if (v.rows() != rows) detail::shape_fail("concat_cols", parts.front().value(), v.value());
    offsets.push_back(cols);
    cols += v.cols();
    ids.push_back(v.id);
  }
  Tensor out(rows, cols);
  for (std::size_t q = 0; q < parts.size(); ++q) {
    const Tensor& P = parts[q].value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < P.cols(); ++c) out(r, offsets[q] + c) = P(r, c);
  }
  return t.record("concat_cols", std::move(out), ids, [parts, offsets, rows](Tape& tp, const Tensor&, const Tensor& g) {
    for (std::size_t q = 0; q < parts.size(); ++q) {
      if (!tp.requires_grad(parts[q])) continue;
      Tensor& gp = tp.grad_buffer(parts[q].id);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < gp.cols(); ++c) gp(r, c) += g(r, offsets[q] + c);
    }
  });
}

namespace detail {

inline Var softmax_impl(const char* op, Var a, const std::vector<char>* mask) {
  const Tensor& A = a.value();
  Tensor out(A.rows(), A.cols(), 0.0);
  for (std::size_t r = 0; r < A.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t c = 0; c < A.cols(); ++c) {
      if (mask && !(*mask)[r * A.cols() + c]) continue;
      mx = std::max(mx, A(r, c));
      any = true;
    }
    if (!any) throw ShapeError(std::string(op) + ": row " + std::to_string(r) + " has an empty mask");
    double z = 0.0;
    for (std::size_t c = 0; c < A.cols(); ++c) {
      if (mask && !(*mask)[r * A.cols() + c]) continue;
      out(r, c) = std::exp(A(r, c) - mx);
      z += out(r, c);
    }
    for (std::size_t c = 0; c < A.cols(); ++c) out(r, c) /= z;
  }
  return a.tape->record(op, std::move(out), {a.id}, [a](Tape& tp, const Tensor& Y, const Tensor& g) {
    Tensor& ga = tp.grad_buffer(a.id);
    for (std::size_t r = 0; r < Y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < Y.cols(); ++c) dot += g(r, c) * Y(r, c);
      for (std::size_t c = 0; c < Y.cols(); ++c) ga(r, c) += Y(r, c) * (g(r, c) - dot);
    }
  });
}

}  // namespace detail

// Numerically stabilized (row max subtracted).
inline Var row_softmax(Var a) { return detail::softmax_impl("row_softmax", a, nullptr); }

// Entries outside the mask are exactly 0. mask is row-major, same shape as a.
inline Var masked_row_softmax(Var a, const std::vector<char>& mask) {
  if (mask.size() != a.value().size()) {
    throw ShapeError("masked_row_softmax: mask length " + std::to_string(mask.size()) + " for input " +
                     a.value().shape_string());
  }
  return detail::softmax_impl("masked_row_softmax", a, &mask);
}

inline Var tanh(Var a) {
  return detail::unary("tanh", a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var leaky_relu(Var a, double slope = 0.2) {
  return detail::unary(
      "leaky_relu", a, [slope](double x) { return x > 0.0 ? x : slope * x; },
      [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

inline Var elu(Var a, double alpha = 1.0) {
  return detail::unary(
      "elu", a, [alpha](double x) { return x > 0.0 ? x : alpha * std::expm1(x); },
      [alpha](double x, double y) { return x > 0.0 ? 1.0 : y + alpha; });
}

inline Var exp(Var a) {
  return detail::unary("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var log(Var a) {
  return detail::unary("log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

// log(1 + e^x), evaluated without overflow.
inline Var softplus(Var a) {
  return detail::unary(
      "softplus", a, [](double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
      [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

inline Var sum(Var a) {
  const Tensor& A = a.value();
  double s = 0.0;
  for (double v : A.data()) s += v;
  return a.tape->record("sum", Tensor::scalar(s), {a.id}, [a](Tape& tp, const Tensor&, const Tensor& g) {
    Tensor& ga = tp.grad_buffer(a.id);
    for (std::size_t k = 0; k < ga.size(); ++k) ga[k] += g[0];
  });
}

inline Var mean(Var a) {
  const Tensor& A = a.value();
  if (A.size() == 0) throw ShapeError("mean: empty tensor");
  double s = 0.0;
  for (double v : A.data()) s += v;
  const double inv = 1.0 / static_cast<double>(A.size());
  return a.tape->record("mean", Tensor::scalar(s * inv), {a.id}, [a, inv](Tape& tp, const Tensor&, const Tensor& g) {
    Tensor& ga = tp.grad_buffer(a.id);
    for (std::size_t k = 0; k < ga.size(); ++k) ga[k] += g[0] * inv;
  });
}

inline Var trace(Var a) {
  const Tensor& A = a.value();
  if (A.rows() != A.cols()) throw ShapeError("trace: non-square input " + A.shape_string());
  double s = 0.0;
  for (std::size_t i = 0; i < A.rows(); ++i) s += A(i, i);
  return a.tape->record("trace", Tensor::scalar(s), {a.id}, [a](Tape& tp, const Tensor&, const Tensor& g) {
    Tensor& ga = tp.grad_buffer(a.id);
    for (std::size_t i = 0; i < ga.rows(); ++i) ga(i, i) += g[0];
  });
}

inline Var transpose(Var a) {
  const Tensor& A = a.value();
  Tensor out(A.cols(), A.rows());
  for (std::size_t r = 0; r < A.rows(); ++r)
    for (std::size_t c = 0; c < A.cols(); ++c) out(c, r) = A(r, c);
  return a.tape->record("transpose", std::move(out), {a.id}, [a](Tape& tp, const Tensor&, const Tensor& g) {
    Tensor& ga = tp.grad_buffer(a.id);
    for (std::size_t r = 0; r < ga.rows(); ++r)
      for (std::size_t c = 0; c < ga.cols(); ++c) ga(r, c) += g(c, r);
  });
}

// Rows with norm below 1e-12 are divided by 1e-12 instead.
inline Var l2_normalize_rows(Var a) {
  constexpr double kFloor = 1e-12;
  const Tensor& A = a.value();
  Tensor out(A.rows(), A.cols());
  std::vector<double> norms(A.rows());
  for (std::size_t r = 0; r < A.rows(); ++r) {
    double s = 0.0;
    for (double v : A.row_span(r)) s += v * v;
    norms[r] = std::max(std::sqrt(s), kFloor);
    for (std::size_t c = 0; c < A.cols(); ++c) out(r, c) = A(r, c) / norms[r];
  }
  return a.tape->record("l2_normalize_rows", std::move(out), {a.id},
                        [a, norms = std::move(norms)](Tape& tp, const Tensor& Y, const Tensor& g) {
    Tensor& ga = tp.grad_buffer(a.id);
    for (std::size_t r = 0; r < Y.rows(); ++r) {
      if (norms[r] <= kFloor) {
        for (std::size_t c = 0; c < Y.cols(); ++c) ga(r, c) += g(r, c) / kFloor;
        continue;
      }
      double dot = 0.0;
      for (std::size_t c = 0; c < Y.cols(); ++c) dot += g(r, c) * Y(r, c);
      for (std::size_t c = 0; c < Y.cols(); ++c) ga(r, c) += (g(r, c) - Y(r, c) * dot) / norms[r];
    }
  });
}

inline Var gather_rows(Var a, std::vector<std::size_t> idx) {
  const Tensor& A = a.value();
  Tensor out(idx.size(), A.cols());
  for (std::size_t q = 0; q < idx.size(); ++q) {
    if (idx[q] >= A.rows()) {
      throw ShapeError("gather_rows: index " + std::to_string(idx[q]) + " out of range for " + A.shape_string());
    }
    for (std::size_t c = 0; c < A.cols(); ++c) out(q, c) = A(idx[q], c);
  }
  return a.tape->record("gather_rows", std::move(out), {a.id}, [a, idx = std::move(idx)](Tape& tp, const Tensor&, const Tensor& g) {
    Tensor& ga = tp.grad_buffer(a.id);
    for (std::size_t q = 0; q < idx.size(); ++q)
      for (std::size_t c = 0; c < ga.cols(); ++c) ga(idx[q], c) += g(q, c);
  });
}

// ---------------------------------------------------------------------------
// Sparse-indexed ops

// Constant sparse matrix times a differentiable dense matrix.
inline Var spmm(std::shared_ptr<const SparseMatrix> s, Var x) {
  const Tensor& X = x.value();
  if (s->cols() != X.rows()) {
    throw ShapeError("spmm: sparse " + std::to_string(s->rows()) + "x" + std::to_string(s->cols()) + " times dense " +
                     X.shape_string());
  }
  Tensor out(s->rows(), X.cols());
  for (std::size_t r = 0; r < s->rows(); ++r) {
    auto cols = s->row_cols(r);
    auto vals = s->row_values(r);
    for (std::size_t k = 0; k < cols.size(); ++k)
      for (std::size_t c = 0; c < X.cols(); ++c) out(r, c) += vals[k] * X(cols[k], c);
  }
  return x.tape->record("spmm", std::move(out), {x.id}, [s, x](Tape& tp, const Tensor&, const Tensor& g) {
    Tensor& gx = tp.grad_buffer(x.id);
    for (std::size_t r = 0; r < s->rows(); ++r) {
      auto cols = s->row_cols(r);
      auto vals = s->row_values(r);
      for (std::size_t k = 0; k < cols.size(); ++k)
        for (std::size_t c = 0; c < gx.cols(); ++c) gx(cols[k], c) += vals[k] * g(r, c);
    }
  });
}

inline Var spmm(const SparseMatrix& s, Var x) { return spmm(std::make_shared<const SparseMatrix>(s), x); }

// Softmax of an nnz x 1 value column within each row segment of the pattern.
// This is masked_row_softmax restricted to the stored entries.
inline Var segment_softmax(Var values, std::shared_ptr<const RowPattern> pat) {
  const Tensor& V = values.value();
  if (V.rows() != pat->nnz() || V.cols() != 1) {
    throw ShapeError("segment_softmax: values " + V.shape_string() + " for pattern with " + std::to_string(pat->nnz()) +
                     " entries");
  }
  Tensor out(V.rows(), 1);
  for (std::size_t r = 0; r < pat->rows; ++r) {
    std::size_t lo = pat->row_ptr[r], hi = pat->row_ptr[r + 1];
    if (lo == hi) throw ShapeError("segment_softmax: row " + std::to_string(r) + " has no entries");
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = lo; k < hi; ++k) mx = std::max(mx, V[k]);
    double z = 0.0;
    for (std::size_t k = lo; k < hi; ++k) z += (out[k] = std::exp(V[k] - mx));
    for (std::size_t k = lo; k < hi; ++k) out[k] /= z;
  }
  return values.tape->record("segment_softmax", std::move(out), {values.id},
                             [values, pat](Tape& tp, const Tensor& Y, const Tensor& g) {
    Tensor& gv = tp.grad_buffer(values.id);
    for (std::size_t r = 0; r < pat->rows; ++r) {
      double dot = 0.0;
      for (std::size_t k = pat->row_ptr[r]; k < pat->row_ptr[r + 1]; ++k) dot += g[k] * Y[k];
      for (std::size_t k = pat->row_ptr[r]; k < pat->row_ptr[r + 1]; ++k) gv[k] += Y[k] * (g[k] - dot);
    }
  });
}

// out[i] = sum over stored (i, j) of values[e] * dense[j]; differentiable in
// both the entry values and the dense operand.
inline Var spmm_pattern(std::shared_ptr<const RowPattern> pat, Var values, Var dense) {
  Tape& t = detail::same_tape(values, dense, "spmm_pattern");
  const Tensor& V = values.value();
  const Tensor& D = dense.value();
  if (V.rows() != pat->nnz() || V.cols() != 1 || D.rows() != pat->cols) {
    throw ShapeError("spmm_pattern: values " + V.shape_string() + ", dense " + D.shape_string() + " for pattern " +
                     std::to_string(pat->rows) + "x" + std::to_string(pat->cols));
  }
  Tensor out(pat->rows, D.cols());
  for (std::size_t r = 0; r < pat->rows; ++r)
    for (std::size_t k = pat->row_ptr[r]; k < pat->row_ptr[r + 1]; ++k)
      for (std::size_t c = 0; c < D.cols(); ++c) out(r, c) += V[k] * D(pat->col_idx[k], c);
  return t.record("spmm_pattern", std::move(out), {values.id, dense.id}, [pat, values, dense](Tape& tp, const Tensor&, const Tensor& g) {
    const Tensor& V = tp.value(values);
    const Tensor& D = tp.value(dense);
    if (tp.requires_grad(values)) {
      Tensor& gv = tp.grad_buffer(values.id);
      for (std::size_t r = 0; r < pat->rows; ++r)
        for (std::size_t k = pat->row_ptr[r]; k < pat->row_ptr[r + 1]; ++k) {
          double s = 0.0;
          for (std::size_t c = 0; c < D.cols(); ++c) s += g(r, c) * D(pat->col_idx[k], c);
          gv[k] += s;
        }
    }
    if (tp.requires_grad(dense)) {
      Tensor& gd = tp.grad_buffer(dense.id);
      for (std::size_t r = 0; r < pat->rows; ++r)
        for (std::size_t k = pat->row_ptr[r]; k < pat->row_ptr[r + 1]; ++k)
          for (std::size_t c = 0; c < D.cols(); ++c) gd(pat->col_idx[k], c) += V[k] * g(r, c);
    }
  });
}

// Sums an m x 1 column into n_segments buckets.
inline Var segment_sum(Var values, std::vector<std::size_t> segment, std::size_t n_segments) {
  const Tensor& V = values.value();
  if (V.cols() != 1 || V.rows() != segment.size()) {
    throw ShapeError("segment_sum: values " + V.shape_string() + " with " + std::to_string(segment.size()) + " ids");
  }
  Tensor out(n_segments, 1);
  for (std::size_t k = 0; k < segment.size(); ++k) {
    if (segment[k] >= n_segments) throw ShapeError("segment_sum: segment id out of range");
    out[segment[k]] += V[k];
  }
  return values.tape->record("segment_sum", std::move(out), {values.id},
                             [values, segment = std::move(segment)](Tape& tp, const Tensor&, const Tensor& g) {
                               Tensor& gv = tp.grad_buffer(values.id);
                               for (std::size_t k = 0; k < segment.size(); ++k) gv[k] += g[segment[k]];
                             });
}

// ---------------------------------------------------------------------------
// Finite-difference oracle

struct FiniteDiffReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool all_finite = true;
  std::size_t entries_checked = 0;
};

// Builds a scalar loss on the given tape from parameter vars (same order as
// the parameter list handed to finite_diff_check).
using ScalarFn = std::function<Var(Tape&, const std::vector<Var>&)>;

/// Compares reverse-mode gradients against central differences,
/// rel = |a - f| / max(|a|, |f|, 1e-8), over every parameter entry.
inline FiniteDiffReport finite_diff_check(const ScalarFn& fn, std::vector<NamedTensor> params, double epsilon = 1e-5) {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw ConfigError("finite_diff_check: epsilon must be > 0");
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (auto& p : params) vars.push_back(tape.parameter(p.value, p.name));
    Var loss = fn(tape, vars);
    tape.backward(loss);
    for (auto v : vars) analytic.push_back(tape.grad(v));
  }
  auto eval = [&]() {
    Tape tape(false);
    std::vector<Var> vars;
    for (auto& p : params) vars.push_back(tape.constant(p.value));
    return fn(tape, vars).value().item();
  };
  FiniteDiffReport rep;
  for (std::size_t q = 0; q < params.size(); ++q) {
    Tensor& val = params[q].value;
    for (std::size_t k = 0; k < val.size(); ++k) {
      const double orig = val[k];
      val[k] = orig + epsilon;
      const double up = eval();
      val[k] = orig - epsilon;
      const double down = eval();
      val[k] = orig;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double a = analytic[q][k];
      ++rep.entries_checked;
      if (!std::isfinite(numeric) || !std::isfinite(a)) {
        rep.all_finite = false;
        rep.max_rel_err = std::numeric_limits<double>::infinity();
        rep.worst_param = params[q].name;
        rep.worst_index = k;
        rep.worst_analytic = a;
        rep.worst_numeric = numeric;
        continue;
      }
      double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      if (rep.all_finite && (rel > rep.max_rel_err || rep.worst_param.empty())) {
        rep.max_rel_err = rel;
        rep.worst_param = params[q].name;
        rep.worst_index = k;
        rep.worst_analytic = a;
        rep.worst_numeric = numeric;
      }
    }
  }
  return rep;
}

}  // namespace ad
}  // namespace hacd
