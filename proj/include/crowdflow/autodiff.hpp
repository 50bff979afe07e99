#pragma once

// Dense rank-2 tensors with reverse-mode differentiation on an explicit
// tape. Ops run on whole buffers; a recorded node keeps one closure that
// scatters the output gradient back to its parents. Tensors without a tape
// binding are constants and record nothing.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "crowdflow/common.hpp"

#include "json.hpp"

namespace crowdflow::ad {

class Tape;

class Tensor {
 public:
  Tensor() : data_(std::make_shared<std::vector<double>>()) {}

  Tensor(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols),
        data_(std::make_shared<std::vector<double>>(rows * cols, 0.0)) {}

  static Tensor zeros(std::size_t rows, std::size_t cols) {
    return Tensor(rows, cols);
  }

  static Tensor full(std::size_t rows, std::size_t cols, double v) {
    Tensor t(rows, cols);
    std::fill(t.data_->begin(), t.data_->end(), v);
    return t;
  }

  static Tensor scalar(double v) { return full(1, 1, v); }

  static Tensor from(std::size_t rows, std::size_t cols,
                     std::vector<double> values) {
    require(values.size() == rows * cols, "Tensor::from: size mismatch");
    Tensor t;
    t.rows_ = rows;
    t.cols_ = cols;
    t.data_ = std::make_shared<std::vector<double>>(std::move(values));
    return t;
  }

  static Tensor column(const std::vector<double>& values) {
    return from(values.size(), 1, values);
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t numel() const { return rows_ * cols_; }

  const std::vector<double>& values() const { return *data_; }
  std::vector<double>& mut_values() { return *data_; }

  double at(std::size_t r, std::size_t c) const {
    return (*data_)[r * cols_ + c];
  }
  double& mut(std::size_t r, std::size_t c) { return (*data_)[r * cols_ + c]; }

  double item() const {
    require(numel() == 1, "Tensor::item: not a scalar");
    return (*data_)[0];
  }

  bool all_finite() const {
    for (double v : *data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  Tensor clone() const {
    Tensor t;
    t.rows_ = rows_;
    t.cols_ = cols_;
    t.data_ = std::make_shared<std::vector<double>>(*data_);
    return t;
  }

  // Same buffer, no tape binding.
  Tensor detached() const {
    Tensor t;
    t.rows_ = rows_;
    t.cols_ = cols_;
    t.data_ = data_;
    return t;
  }

  bool on_tape() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int node() const { return node_; }

  std::string shape_str() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
  }

 private:
  friend class Tape;
  std::size_t rows_ = 0, cols_ = 0;
  std::shared_ptr<std::vector<double>> data_;
  Tape* tape_ = nullptr;
  int node_ = -1;
};

class Tape {
 public:
  using BackFn = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool empty() const { return nodes_.empty(); }
  std::size_t size() const { return nodes_.size(); }

  // Registers a constant tensor as a differentiable leaf.
  void watch(Tensor& t) {
    require(t.tape_ == nullptr, "Tape::watch: tensor already recorded");
    t.tape_ = this;
    t.node_ = alloc(t.numel(), {}, nullptr);
  }

  int alloc(std::size_t size, std::vector<int> parents, BackFn fn) {
    nodes_.push_back(Node{std::move(parents), std::move(fn), size});
    return static_cast<int>(nodes_.size()) - 1;
  }

  void bind(Tensor& t, int node) {
    t.tape_ = this;
    t.node_ = node;
  }

  // Single reverse sweep in anti-recording order. A second call on the same
  // tape is a contract violation.
  void backward_from(const Tensor& loss) {
    require(!consumed_, "Tape::backward_from: tape already consumed");
    require(loss.tape_ == this, "Tape::backward_from: loss not on this tape");
    require(loss.numel() == 1, "Tape::backward_from: loss must be scalar");
    consumed_ = true;
    grads_.assign(nodes_.size(), {});
    touched_.assign(nodes_.size(), false);
    grad_buf(loss.node_)[0] = 1.0;
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
      if (!touched_[i] || !nodes_[i].back) continue;
      nodes_[i].back(*this, i);
    }
  }

  bool ran_backward() const { return consumed_; }

  // Gradient buffer for a node; allocates zeros on first touch.
  std::vector<double>& grad_buf(int node) {
    auto& g = grads_[node];
    if (g.empty() && nodes_[node].size > 0) g.assign(nodes_[node].size, 0.0);
    touched_[node] = true;
    return g;
  }

  bool touched(int node) const { return touched_[node]; }

  std::vector<double> gradient_of(const Tensor& t) const {
    require(consumed_, "Tape::gradient_of: run backward first");
    require(t.tape_ == this, "Tape::gradient_of: tensor not on this tape");
    const auto& g = grads_[t.node_];
    if (g.empty()) return std::vector<double>(t.numel(), 0.0);
    return g;
  }

 private:
  struct Node {
    std::vector<int> parents;
    BackFn back;
    std::size_t size;
  };
  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
  std::vector<bool> touched_;
  bool consumed_ = false;
};

namespace detail {

inline Tape* joint_tape(const Tensor& a, const Tensor& b) {
  if (a.on_tape() && b.on_tape()) {
    require(a.tape() == b.tape(), "op: operands recorded on different tapes");
    return a.tape();
  }
  return a.on_tape() ? a.tape() : b.tape();
}

inline void check_same_shape(const char* op, const Tensor& a,
                             const Tensor& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(),
          std::string(op) + ": shape mismatch (" + a.shape_str() + " vs " +
              b.shape_str() + ")");
}

// C (m,n) += op(A) * op(B) over raw buffers, ikj order.
inline void matmul_accum(const double* a, const double* b, double* c,
                         std::size_t m, std::size_t k, std::size_t n,
                         bool trans_a, bool trans_b) {
  auto body = [=](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      double* crow = c + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = trans_a ? a[p * m + i] : a[i * k + p];
        if (av == 0.0) continue;
        if (!trans_b) {
          const double* brow = b + p * n;
          for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        } else {
          for (std::size_t j = 0; j < n; ++j) crow[j] += av * b[j * k + p];
        }
      }
    }
  };
  // Parallel only when the row work is heavy enough to pay for threads.
  if (m * k * n >= (1u << 21))
    parallel_ranges(m, body, /*serial_cutoff=*/1);
  else
    body(0, m);
}

}  // namespace detail

// ---- elementwise ---------------------------------------------------------

template <class Fwd, class Grad>
Tensor unary_elemwise(const char* /*op*/, const Tensor& a, Fwd fwd, Grad dfdx) {
  Tensor out(a.rows(), a.cols());
  const auto& av = a.values();
  auto& ov = out.mut_values();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = fwd(av[i]);
  if (a.on_tape()) {
    Tape* t = a.tape();
    int node = t->alloc(out.numel(), {a.node()},
                        [a, out, dfdx](Tape& tp, int self) {
                          const auto& g = tp.grad_buf(self);
                          auto& ga = tp.grad_buf(a.node());
                          const auto& av2 = a.values();
                          const auto& ov2 = out.values();
                          for (std::size_t i = 0; i < g.size(); ++i)
                            ga[i] += g[i] * dfdx(av2[i], ov2[i]);
                        });
    t->bind(out, node);
  }
  return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same_shape("add", a, b);
  Tensor out(a.rows(), a.cols());
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.mut_values();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] + bv[i];
  if (Tape* t = detail::joint_tape(a, b)) {
    std::vector<int> parents;
    if (a.on_tape()) parents.push_back(a.node());
    if (b.on_tape()) parents.push_back(b.node());
    int node = t->alloc(out.numel(), parents, [a, b](Tape& tp, int self) {
      const auto& g = tp.grad_buf(self);
      if (a.on_tape()) {
        auto& ga = tp.grad_buf(a.node());
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.on_tape()) {
        auto& gb = tp.grad_buf(b.node());
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
    t->bind(out, node);
  }
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::check_same_shape("sub", a, b);
  Tensor out(a.rows(), a.cols());
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.mut_values();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] - bv[i];
  if (Tape* t = detail::joint_tape(a, b)) {
    std::vector<int> parents;
    if (a.on_tape()) parents.push_back(a.node());
    if (b.on_tape()) parents.push_back(b.node());
    int node = t->alloc(out.numel(), parents, [a, b](Tape& tp, int self) {
      const auto& g = tp.grad_buf(self);
      if (a.on_tape()) {
        auto& ga = tp.grad_buf(a.node());
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.on_tape()) {
        auto& gb = tp.grad_buf(b.node());
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
    t->bind(out, node);
  }
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::check_same_shape("hadamard", a, b);
  Tensor out(a.rows(), a.cols());
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.mut_values();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] * bv[i];
  if (Tape* t = detail::joint_tape(a, b)) {
    std::vector<int> parents;
    if (a.on_tape()) parents.push_back(a.node());
    if (b.on_tape()) parents.push_back(b.node());
    int node = t->alloc(out.numel(), parents, [a, b](Tape& tp, int self) {
      const auto& g = tp.grad_buf(self);
      const auto& av2 = a.values();
      const auto& bv2 = b.values();
      if (a.on_tape()) {
        auto& ga = tp.grad_buf(a.node());
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
      }
      if (b.on_tape()) {
        auto& gb = tp.grad_buf(b.node());
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av2[i];
      }
    });
    t->bind(out, node);
  }
  return out;
}

inline Tensor divide(const Tensor& a, const Tensor& b) {
  detail::check_same_shape("divide", a, b);
  Tensor out(a.rows(), a.cols());
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.mut_values();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] / bv[i];
  if (Tape* t = detail::joint_tape(a, b)) {
    std::vector<int> parents;
    if (a.on_tape()) parents.push_back(a.node());
    if (b.on_tape()) parents.push_back(b.node());
    int node = t->alloc(out.numel(), parents, [a, b, out](Tape& tp, int self) {
      const auto& g = tp.grad_buf(self);
      const auto& bv2 = b.values();
      const auto& ov2 = out.values();
      if (a.on_tape()) {
        auto& ga = tp.grad_buf(a.node());
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / bv2[i];
      }
      if (b.on_tape()) {
        auto& gb = tp.grad_buf(b.node());
        for (std::size_t i = 0; i < g.size(); ++i)
          gb[i] -= g[i] * ov2[i] / bv2[i];
      }
    });
    t->bind(out, node);
  }
  return out;
}

inline Tensor scale(const Tensor& a, double c) {
  return unary_elemwise(
      "scale", a, [c](double x) { return x * c; },
      [c](double, double) { return c; });
}

inline Tensor add_scalar(const Tensor& a, double c) {
  return unary_elemwise(
      "add_scalar", a, [c](double x) { return x + c; },
      [](double, double) { return 1.0; });
}

inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }

inline Tensor exp(const Tensor& a) {
  return unary_elemwise(
      "exp", a, [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

inline Tensor log(const Tensor& a) {
  return unary_elemwise(
      "log", a, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

inline Tensor sqrt(const Tensor& a) {
  // subgradient 0 at the origin keeps coincident-point distances from
  // poisoning the backward pass with inf * 0
  return unary_elemwise(
      "sqrt", a, [](double x) { return std::sqrt(x); },
      [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

inline Tensor sigmoid(const Tensor& a) {
  return unary_elemwise(
      "sigmoid", a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

inline Tensor abs(const Tensor& a) {
  return unary_elemwise(
      "abs", a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

// Hard clamp; unit gradient wherever the input passes through unchanged.
inline Tensor clamp(const Tensor& a, double lo, double hi) {
  return unary_elemwise(
      "clamp", a,
      [lo, hi](double x) { return std::min(hi, std::max(lo, x)); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

inline Tensor silu(const Tensor& a) { return mul(a, sigmoid(a)); }

// ---- linear algebra ------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.cols() == b.rows(), "matmul: inner dims differ (" + a.shape_str() +
                                    " vs " + b.shape_str() + ")");
  Tensor out(a.rows(), b.cols());
  detail::matmul_accum(a.values().data(), b.values().data(),
                       out.mut_values().data(), a.rows(), a.cols(), b.cols(),
                       false, false);
  if (Tape* t = detail::joint_tape(a, b)) {
    std::vector<int> parents;
    if (a.on_tape()) parents.push_back(a.node());
    if (b.on_tape()) parents.push_back(b.node());
    int node = t->alloc(out.numel(), parents, [a, b](Tape& tp, int self) {
      const auto& g = tp.grad_buf(self);
      const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
      if (a.on_tape()) {
        auto& ga = tp.grad_buf(a.node());
        // dA += dC * B^T
        detail::matmul_accum(g.data(), b.values().data(), ga.data(), m, n, k,
                             false, true);
      }
      if (b.on_tape()) {
        auto& gb = tp.grad_buf(b.node());
        // dB += A^T * dC
        detail::matmul_accum(a.values().data(), g.data(), gb.data(), k, m, n,
                             true, false);
      }
    });
    t->bind(out, node);
  }
  return out;
}

inline Tensor transpose(const Tensor& a) {
  Tensor out(a.cols(), a.rows());
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) out.mut(c, r) = a.at(r, c);
  if (a.on_tape()) {
    Tape* t = a.tape();
    int node = t->alloc(out.numel(), {a.node()}, [a](Tape& tp, int self) {
      const auto& g = tp.grad_buf(self);
      auto& ga = tp.grad_buf(a.node());
      const std::size_t rows = a.rows(), cols = a.cols();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c)
          ga[r * cols + c] += g[c * rows + r];
    });
    t->bind(out, node);
  }
  return out;
}

inline Tensor outer(const Tensor& a, const Tensor& b) {
  require(a.cols() == 1 && b.cols() == 1, "outer: expects column vectors");
  Tensor out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j)
      out.mut(i, j) = a.at(i, 0) * b.at(j, 0);
  if (Tape* t = detail::joint_tape(a, b)) {
    std::vector<int> parents;
    if (a.on_tape()) parents.push_back(a.node());
    if (b.on_tape()) parents.push_back(b.node());
    int node = t->alloc(out.numel(), parents, [a, b](Tape& tp, int self) {
      const auto& g = tp.grad_buf(self);
      const std::size_t m = a.rows(), n = b.rows();
      if (a.on_tape()) {
        auto& ga = tp.grad_buf(a.node());
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j)
            ga[i] += g[i * n + j] * b.at(j, 0);
      }
      if (b.on_tape()) {
        auto& gb = tp.grad_buf(b.node());
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j)
            gb[j] += g[i * n + j] * a.at(i, 0);
      }
    });
    t->bind(out, node);
  }
  return out;
}

// ---- reductions ----------------------------------------------------------

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  Tensor out = Tensor::scalar(s);
  if (a.on_tape()) {
    Tape* t = a.tape();
    int node = t->alloc(1, {a.node()}, [a](Tape& tp, int self) {
      const double g = tp.grad_buf(self)[0];
      auto& ga = tp.grad_buf(a.node());
      for (auto& v : ga) v += g;
    });
    t->bind(out, node);
  }
  return out;
}

inline Tensor mean(const Tensor& a) {
  require(a.numel() > 0, "mean: empty tensor");
  Tensor s = sum(a);
  return scale(s, 1.0 / static_cast<double>(a.numel()));
}

inline Tensor squared_norm(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v * v;
  Tensor out = Tensor::scalar(s);
  if (a.on_tape()) {
    Tape* t = a.tape();
    int node = t->alloc(1, {a.node()}, [a](Tape& tp, int self) {
      const double g = tp.grad_buf(self)[0];
      auto& ga = tp.grad_buf(a.node());
      const auto& av = a.values();
      for (std::size_t i = 0; i < av.size(); ++i) ga[i] += 2.0 * av[i] * g;
    });
    t->bind(out, node);
  }
  return out;
}

// axis 0 collapses rows into a (1,cols) row; axis 1 collapses cols into a
// (rows,1) column.
inline Tensor sum_axis(const Tensor& a, int axis) {
  require(axis == 0 || axis == 1, "sum_axis: axis must be 0 or 1");
  Tensor out = axis == 0 ? Tensor(1, a.cols()) : Tensor(a.rows(), 1);
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) {
      if (axis == 0)
        out.mut(0, c) += a.at(r, c);
      else
        out.mut(r, 0) += a.at(r, c);
    }
  if (a.on_tape()) {
    Tape* t = a.tape();
    int node =
        t->alloc(out.numel(), {a.node()}, [a, axis](Tape& tp, int self) {
          const auto& g = tp.grad_buf(self);
          auto& ga = tp.grad_buf(a.node());
          const std::size_t cols = a.cols();
          for (std::size_t r = 0; r < a.rows(); ++r)
            for (std::size_t c = 0; c < cols; ++c)
              ga[r * cols + c] += axis == 0 ? g[c] : g[r];
        });
    t->bind(out, node);
  }
  return out;
}

// ---- shape ops -----------------------------------------------------------

// (1,n)->(m,n), (m,1)->(m,n), (1,1)->(m,n)
inline Tensor broadcast(const Tensor& a, std::size_t rows, std::size_t cols) {
  const bool row_rep = a.rows() == 1 && a.cols() == cols;
  const bool col_rep = a.cols() == 1 && a.rows() == rows;
  const bool scalar_rep = a.numel() == 1;
  require(row_rep || col_rep || scalar_rep,
          "broadcast: cannot expand " + a.shape_str() + " to " +
              std::to_string(rows) + "x" + std::to_string(cols));
  Tensor out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      out.mut(r, c) = scalar_rep   ? a.values()[0]
                      : (row_rep ? a.at(0, c) : a.at(r, 0));
  if (a.on_tape()) {
    Tape* t = a.tape();
    int node = t->alloc(out.numel(), {a.node()},
                        [a, rows, cols, row_rep, col_rep,
                         scalar_rep](Tape& tp, int self) {
                          const auto& g = tp.grad_buf(self);
                          auto& ga = tp.grad_buf(a.node());
                          for (std::size_t r = 0; r < rows; ++r)
                            for (std::size_t c = 0; c < cols; ++c) {
                              const double gv = g[r * cols + c];
                              if (scalar_rep)
                                ga[0] += gv;
                              else if (row_rep)
                                ga[c] += gv;
                              else
                                ga[r] += gv;
                            }
                        });
    t->bind(out, node);
  }
  return out;
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_cols: empty input");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  Tape* tape = nullptr;
  for (const auto& p : parts) {
    require(p.rows() == rows, "concat_cols: row count mismatch");
    cols += p.cols();
    if (p.on_tape()) {
      require(tape == nullptr || tape == p.tape(),
              "concat_cols: operands on different tapes");
      tape = p.tape();
    }
  }
  Tensor out(rows, cols);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < p.cols(); ++c)
        out.mut(r, offset + c) = p.at(r, c);
    offset += p.cols();
  }
  if (tape) {
    std::vector<int> parents;
    for (const auto& p : parts)
      if (p.on_tape()) parents.push_back(p.node());
    int node =
        tape->alloc(out.numel(), parents, [parts, cols](Tape& tp, int self) {
          const auto& g = tp.grad_buf(self);
          std::size_t offset2 = 0;
          for (const auto& p : parts) {
            if (p.on_tape()) {
              auto& gp = tp.grad_buf(p.node());
              for (std::size_t r = 0; r < p.rows(); ++r)
                for (std::size_t c = 0; c < p.cols(); ++c)
                  gp[r * p.cols() + c] += g[r * cols + offset2 + c];
            }
            offset2 += p.cols();
          }
        });
    tape->bind(out, node);
  }
  return out;
}

inline Tensor slice_rows(const Tensor& a, std::size_t r0, std::size_t r1) {
  require(r0 <= r1 && r1 <= a.rows(), "slice_rows: range out of bounds");
  Tensor out(r1 - r0, a.cols());
  for (std::size_t r = r0; r < r1; ++r)
    for (std::size_t c = 0; c < a.cols(); ++c)
      out.mut(r - r0, c) = a.at(r, c);
  if (a.on_tape()) {
    Tape* t = a.tape();
    int node = t->alloc(out.numel(), {a.node()}, [a, r0, r1](Tape& tp,
                                                             int self) {
      const auto& g = tp.grad_buf(self);
      auto& ga = tp.grad_buf(a.node());
      const std::size_t cols = a.cols();
      for (std::size_t r = r0; r < r1; ++r)
        for (std::size_t c = 0; c < cols; ++c)
          ga[r * cols + c] += g[(r - r0) * cols + c];
    });
    t->bind(out, node);
  }
  return out;
}

inline Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t c1) {
  require(c0 <= c1 && c1 <= a.cols(), "slice_cols: range out of bounds");
  Tensor out(a.rows(), c1 - c0);
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = c0; c < c1; ++c) out.mut(r, c - c0) = a.at(r, c);
  if (a.on_tape()) {
    Tape* t = a.tape();
    int node = t->alloc(out.numel(), {a.node()}, [a, c0, c1](Tape& tp,
                                                             int self) {
      const auto& g = tp.grad_buf(self);
      auto& ga = tp.grad_buf(a.node());
      const std::size_t cols = a.cols(), w = c1 - c0;
      for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t c = c0; c < c1; ++c)
          ga[r * cols + c] += g[r * w + (c - c0)];
    });
    t->bind(out, node);
  }
  return out;
}

// ---- gather / scatter ----------------------------------------------------

inline Tensor take_rows(const Tensor& a, const std::vector<std::size_t>& idx) {
  for (std::size_t i : idx)
    require(i < a.rows(), "take_rows: index out of range");
  Tensor out(idx.size(), a.cols());
  for (std::size_t k = 0; k < idx.size(); ++k)
    for (std::size_t c = 0; c < a.cols(); ++c)
      out.mut(k, c) = a.at(idx[k], c);
  if (a.on_tape()) {
    Tape* t = a.tape();
    int node = t->alloc(out.numel(), {a.node()}, [a, idx](Tape& tp, int self) {
      const auto& g = tp.grad_buf(self);
      auto& ga = tp.grad_buf(a.node());
      const std::size_t cols = a.cols();
      for (std::size_t k = 0; k < idx.size(); ++k)
        for (std::size_t c = 0; c < cols; ++c)
          ga[idx[k] * cols + c] += g[k * cols + c];
    });
    t->bind(out, node);
  }
  return out;
}

// Gathers scalar entries of a flattened tensor into a (k,1) column.
inline Tensor take_flat(const Tensor& a, const std::vector<std::size_t>& idx) {
  for (std::size_t i : idx)
    require(i < a.numel(), "take_flat: index out of range");
  Tensor out(idx.size(), 1);
  for (std::size_t k = 0; k < idx.size(); ++k)
    out.mut_values()[k] = a.values()[idx[k]];
  if (a.on_tape()) {
    Tape* t = a.tape();
    int node = t->alloc(out.numel(), {a.node()}, [a, idx](Tape& tp, int self) {
      const auto& g = tp.grad_buf(self);
      auto& ga = tp.grad_buf(a.node());
      for (std::size_t k = 0; k < idx.size(); ++k) ga[idx[k]] += g[k];
    });
    t->bind(out, node);
  }
  return out;
}

// Sums rows of a into nseg buckets keyed by seg; backward is a gather.
inline Tensor segment_sum(const Tensor& a, const std::vector<std::size_t>& seg,
                          std::size_t nseg) {
  require(seg.size() == a.rows(), "segment_sum: one segment id per row");
  for (std::size_t s : seg) require(s < nseg, "segment_sum: id out of range");
  Tensor out(nseg, a.cols());
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c)
      out.mut(seg[r], c) += a.at(r, c);
  if (a.on_tape()) {
    Tape* t = a.tape();
    int node = t->alloc(out.numel(), {a.node()}, [a, seg](Tape& tp, int self) {
      const auto& g = tp.grad_buf(self);
      auto& ga = tp.grad_buf(a.node());
      const std::size_t cols = a.cols();
      for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t c = 0; c < cols; ++c)
          ga[r * cols + c] += g[seg[r] * cols + c];
    });
    t->bind(out, node);
  }
  return out;
}

// Per-segment maximum of a (k,1) column; gradient routes to the argmax row
// (first one on ties). Empty segments yield 0.
inline Tensor segment_max(const Tensor& a, const std::vector<std::size_t>& seg,
                          std::size_t nseg) {
  require(a.cols() == 1, "segment_max: expects a column");
  require(seg.size() == a.rows(), "segment_max: one segment id per row");
  Tensor out(nseg, 1);
  std::vector<long> arg(nseg, -1);
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const std::size_t s = seg[r];
    require(s < nseg, "segment_max: id out of range");
    const double v = a.at(r, 0);
    if (arg[s] < 0 || v > out.at(s, 0)) {
      out.mut(s, 0) = v;
      arg[s] = static_cast<long>(r);
    }
  }
  if (a.on_tape()) {
    Tape* t = a.tape();
    int node = t->alloc(out.numel(), {a.node()}, [a, arg](Tape& tp, int self) {
      const auto& g = tp.grad_buf(self);
      auto& ga = tp.grad_buf(a.node());
      for (std::size_t s = 0; s < arg.size(); ++s)
        if (arg[s] >= 0) ga[static_cast<std::size_t>(arg[s])] += g[s];
    });
    t->bind(out, node);
  }
  return out;
}

// ---- softmax -------------------------------------------------------------

// Row-wise softmax with max subtraction.
inline Tensor softmax_rows(const Tensor& a) {
  require(a.cols() > 0, "softmax_rows: empty rows");
  Tensor out(a.rows(), a.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    double m = a.at(r, 0);
    for (std::size_t c = 1; c < a.cols(); ++c) m = std::max(m, a.at(r, c));
    double z = 0.0;
    for (std::size_t c = 0; c < a.cols(); ++c) {
      const double e = std::exp(a.at(r, c) - m);
      out.mut(r, c) = e;
      z += e;
    }
    for (std::size_t c = 0; c < a.cols(); ++c) out.mut(r, c) /= z;
  }
  if (a.on_tape()) {
    Tape* t = a.tape();
    int node = t->alloc(out.numel(), {a.node()}, [a, out](Tape& tp, int self) {
      const auto& g = tp.grad_buf(self);
      auto& ga = tp.grad_buf(a.node());
      const std::size_t cols = a.cols();
      for (std::size_t r = 0; r < a.rows(); ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < cols; ++c)
          dot += g[r * cols + c] * out.at(r, c);
        for (std::size_t c = 0; c < cols; ++c)
          ga[r * cols + c] += out.at(r, c) * (g[r * cols + c] - dot);
      }
    });
    t->bind(out, node);
  }
  return out;
}

// ---- parameters ----------------------------------------------------------

class ParameterStore {
 public:
  void add(const std::string& name, Tensor t) {
    require(!t.on_tape(), "ParameterStore::add: tensor must be constant");
    require(params_.emplace(name, std::move(t)).second,
            "ParameterStore::add: duplicate name '" + name + "'");
  }

  bool has(const std::string& name) const { return params_.count(name) != 0; }

  Tensor& at(const std::string& name) {
    auto it = params_.find(name);
    require(it != params_.end(),
            "ParameterStore: unknown parameter '" + name + "'");
    return it->second;
  }
  const Tensor& at(const std::string& name) const {
    auto it = params_.find(name);
    require(it != params_.end(),
            "ParameterStore: unknown parameter '" + name + "'");
    return it->second;
  }

  const std::map<std::string, Tensor>& all() const { return params_; }
  std::map<std::string, Tensor>& all_mut() { return params_; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [k, v] : params_) n += v.numel();
    return n;
  }

  nlohmann::json to_json() const {
    nlohmann::json doc = nlohmann::json::object();
    for (const auto& [name, t] : params_) {
      nlohmann::json entry;
      entry["shape"] = {t.rows(), t.cols()};
      nlohmann::json vals = nlohmann::json::array();
      for (double v : t.values()) vals.push_back(format_double(v));
      entry["values"] = std::move(vals);
      doc[name] = std::move(entry);
    }
    return doc;
  }

  static ParameterStore from_json(const nlohmann::json& doc) {
    ParameterStore store;
    for (auto it = doc.begin(); it != doc.end(); ++it) {
      const auto& entry = it.value();
      const std::size_t rows = entry.at("shape").at(0).get<std::size_t>();
      const std::size_t cols = entry.at("shape").at(1).get<std::size_t>();
      std::vector<double> values;
      values.reserve(rows * cols);
      for (const auto& s : entry.at("values"))
        values.push_back(parse_double(s.get<std::string>()));
      store.add(it.key(), Tensor::from(rows, cols, std::move(values)));
    }
    return store;
  }

 private:
  std::map<std::string, Tensor> params_;
};

using ParamMap = std::map<std::string, Tensor>;
using GradMap = std::map<std::string, Tensor>;

// Watched views of every parameter, sharing the store's buffers.
inline ParamMap watch_params(Tape& tape, const ParameterStore& store) {
  ParamMap view;
  for (const auto& [name, t] : store.all()) {
    Tensor w = t.detached();
    tape.watch(w);
    view.emplace(name, std::move(w));
  }
  return view;
}

// Unwatched views (inference path; records nothing).
inline ParamMap plain_params(const ParameterStore& store) {
  ParamMap view;
  for (const auto& [name, t] : store.all()) view.emplace(name, t.detached());
  return view;
}

// Gradients of every watched parameter after backward; unreachable
// parameters get zeros.
inline GradMap param_gradients(const Tape& tape, const ParamMap& watched) {
  GradMap grads;
  for (const auto& [name, t] : watched) {
    std::vector<double> g = tape.gradient_of(t);
    grads.emplace(name, Tensor::from(t.rows(), t.cols(), std::move(g)));
  }
  return grads;
}

// ---- gradient checking ---------------------------------------------------

// Max over coordinates of |analytic - central difference| / max(1, |cd|).
// f must map a tensor to a scalar tensor and be pure.
template <class F>
double grad_check(F&& f, const Tensor& point, double step = 1e-6) {
  Tape tape;
  Tensor x = point.clone();
  tape.watch(x);
  Tensor loss = f(x);
  require(loss.numel() == 1, "grad_check: f must return a scalar");
  std::vector<double> analytic(point.numel(), 0.0);
  if (loss.on_tape()) {
    tape.backward_from(loss);
    analytic = tape.gradient_of(x);
  }
  Tensor probe = point.clone();
  double max_err = 0.0;
  for (std::size_t i = 0; i < probe.numel(); ++i) {
    const double orig = probe.mut_values()[i];
    probe.mut_values()[i] = orig + step;
    const double fp = f(probe).item();
    probe.mut_values()[i] = orig - step;
    const double fm = f(probe).item();
    probe.mut_values()[i] = orig;
    const double cd = (fp - fm) / (2.0 * step);
    const double err = std::abs(analytic[i] - cd) / std::max(1.0, std::abs(cd));
    max_err = std::max(max_err, err);
  }
  return max_err;
}

}  // namespace crowdflow::ad
