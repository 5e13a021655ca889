#pragma once

// Dense float64 tensors with reverse-mode automatic differentiation.
//
// A Tensor is a shared handle to a graph node. Operations on tensors that
// require gradients record their inputs and a local gradient rule on the
// result; Tensor::backward() orders the recorded graph topologically and
// sweeps it once in reverse. Nothing is global, so graphs built on
// different threads never interact.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "vimae/errors.hpp"

namespace vimae {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

class Tensor;

/// Local gradient rule of a recorded operation. `upstream` is d(loss)/d(out);
/// `parent_grads[i]` is the gradient buffer of input i to accumulate into, or
/// an empty span when that input does not take part in differentiation.
using BackwardRule = std::function<void(std::span<const double> upstream,
                                        std::span<std::span<double>> parent_grads)>;

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardRule rule;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    for (std::size_t d : shape)
      if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
    if (shape_numel(shape) != data.size())
      throw DimensionError("shape " + shape_str(shape) + " needs " +
                           std::to_string(shape_numel(shape)) + " values, got " +
                           std::to_string(data.size()));
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return Tensor({}, {value}, requires_grad);
  }

  /// Row-major matrix from nested rows; all rows must share a length.
  static Tensor matrix(const std::vector<std::vector<double>>& rows,
                       bool requires_grad = false) {
    if (rows.empty() || rows.front().empty()) throw DimensionError("empty matrix literal");
    std::vector<double> flat;
    flat.reserve(rows.size() * rows.front().size());
    for (const auto& r : rows) {
      if (r.size() != rows.front().size()) throw DimensionError("ragged matrix literal");
      flat.insert(flat.end(), r.begin(), r.end());
    }
    return Tensor({rows.size(), rows.front().size()}, std::move(flat), requires_grad);
  }

  static Tensor vector(std::vector<double> values, bool requires_grad = false) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values), requires_grad);
  }

  /// Result of a differentiable operation. The rule is kept only when some
  /// parent participates in differentiation.
  static Tensor from_op(Shape shape, std::vector<double> data,
                        std::vector<Tensor> parents, BackwardRule rule) {
    Tensor out(std::move(shape), std::move(data));
    bool any = false;
    for (const Tensor& p : parents) any = any || p.requires_grad();
    if (any) {
      out.node_->requires_grad = true;
      out.node_->rule = std::move(rule);
      for (Tensor& p : parents) out.node_->parents.push_back(std::move(p.node_));
    }
    return out;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }
  std::size_t rows() const { return rank() >= 1 ? node_->shape[0] : 1; }
  std::size_t cols() const { return rank() >= 2 ? node_->shape[1] : 1; }

  std::span<const double> data() const { return node_->data; }
  /// Writable storage. Intended for leaves (parameters, inputs); writing
  /// into a recorded intermediate invalidates its gradient rules.
  std::span<double> mutable_data() { return node_->data; }

  double item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }
  double operator[](std::size_t i) const { return node_->data[i]; }
  double at(std::size_t r, std::size_t c) const { return node_->data[r * cols() + c]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) {
    if (!node_->parents.empty()) throw ContractError("requires_grad can only be set on leaf tensors");
    node_->requires_grad = on;
  }
  bool is_leaf() const { return node_->parents.empty(); }

  bool has_grad() const { return node_->grad.size() == node_->data.size(); }
  /// Accumulated gradient; zeros when backward has not reached this tensor.
  std::vector<double> grad() const {
    return has_grad() ? node_->grad : std::vector<double>(numel(), 0.0);
  }
  std::span<const double> grad_view() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  /// New leaf holding a copy of the values, detached from any graph.
  Tensor detach() const { return Tensor(shape(), node_->data, false); }

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  /// Accumulates d(this)/d(leaf) into every requires_grad leaf reachable
  /// from this scalar. Intermediate gradients are reset on each call;
  /// leaf gradients accumulate until zero_grad().
  void backward() const {
    if (numel() != 1)
      throw ContractError("backward() needs a scalar loss, got shape " + shape_str(shape()));
    if (!requires_grad()) return;

    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    // Iterative post-order DFS; parents are visited in recorded order.
    std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        detail::Node* p = node->parents[next++].get();
        if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }

    for (detail::Node* n : order)
      if (!n->parents.empty()) n->grad.assign(n->data.size(), 0.0);
    node_->ensure_grad();
    node_->grad[0] += 1.0;

    std::vector<std::span<double>> parent_grads;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      detail::Node* n = *it;
      if (n->parents.empty()) continue;
      parent_grads.clear();
      for (auto& p : n->parents) {
        if (p->requires_grad) {
          p->ensure_grad();
          parent_grads.emplace_back(p->grad);
        } else {
          parent_grads.emplace_back();
        }
      }
      n->rule(n->grad, parent_grads);
    }
  }

 private:
  std::shared_ptr<detail::Node> node_;
};

// ---------------------------------------------------------------------------
// Matrix product
// ---------------------------------------------------------------------------

namespace detail {

// out[m x n] += a[m x k] * b[k x n]; the k-sum runs in ascending order for
// every output element.
inline void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> out,
                    std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = out.data() + i * n;
    const double* arow = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

// out[m x k] += g[m x n] * b[k x n]^T, via an explicit transpose of b so the
// inner loop is an axpy; each output still sums over j in ascending order.
inline void gemm_nt(std::span<const double> g, std::span<const double> b, std::span<double> out,
                    std::size_t m, std::size_t k, std::size_t n) {
  std::vector<double> bt(n * k);
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
  std::vector<double> acc(k);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    gemm_nn(g.subspan(i * n, n), bt, acc, 1, n, k);
    double* orow = out.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) orow[p] += acc[p];
  }
}

// out[k x n] += a[m x k]^T * g[m x n]
inline void gemm_tn(std::span<const double> a, std::span<const double> g, std::span<double> out,
                    std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = g.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      double* orow = out.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * grow[j];
    }
  }
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(m * n, 0.0);
  detail::gemm_nn(a.data(), b.data(), out, m, k, n);
  return Tensor::from_op({m, n}, std::move(out), {a, b},
                         [a, b, m, k, n](std::span<const double> g, std::span<std::span<double>> pg) {
                           if (!pg[0].empty()) detail::gemm_nt(g, b.data(), pg[0], m, k, n);
                           if (!pg[1].empty()) detail::gemm_tn(a.data(), g, pg[1], m, k, n);
                         });
}

// ---------------------------------------------------------------------------
// Elementwise binary ops. The right operand may be a row vector ({n} or
// {1, n}) broadcast over the rows of an {m, n} left operand (bias addition).
// ---------------------------------------------------------------------------

namespace detail {

enum class Broadcast { kNone, kRow };

inline Broadcast check_binary(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Broadcast::kNone;
  const bool row_vec = (b.rank() == 1 || (b.rank() == 2 && b.rows() == 1));
  if (a.rank() == 2 && row_vec && b.numel() == a.cols()) return Broadcast::kRow;
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                       shape_str(b.shape()));
}

template <class Fwd, class DA, class DB>
Tensor binary(const char* name, const Tensor& a, const Tensor& b, Fwd fwd, DA da, DB db) {
  const Broadcast bc = check_binary(name, a, b);
  const std::size_t n = a.numel();
  const std::size_t w = b.numel();
  std::vector<double> out(n);
  auto av = a.data();
  auto bv = b.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[i], bv[bc == Broadcast::kRow ? i % w : i]);
  return Tensor::from_op(
      a.shape(), std::move(out), {a, b},
      [a, b, bc, n, w, da, db](std::span<const double> g, std::span<std::span<double>> pg) {
        auto av = a.data();
        auto bv = b.data();
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t j = bc == Broadcast::kRow ? i % w : i;
          if (!pg[0].empty()) pg[0][i] += g[i] * da(av[i], bv[j]);
          if (!pg[1].empty()) pg[1][j] += g[i] * db(av[i], bv[j]);
        }
      });
}

template <class Fwd, class Deriv>
Tensor unary(const Tensor& a, Fwd fwd, Deriv deriv) {
  const std::size_t n = a.numel();
  std::vector<double> out(n);
  auto av = a.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[i]);
  // The rule sees the input value x and the output value y.
  return Tensor::from_op(a.shape(), out, {a},
                         [a, out, n, deriv](std::span<const double> g, std::span<std::span<double>> pg) {
                           auto av = a.data();
                           for (std::size_t i = 0; i < n; ++i) pg[0][i] += g[i] * deriv(av[i], out[i]);
                         });
}

inline double stable_sigmoid(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

inline double stable_softplus(double t) {
  if (t > 0.0) return t + std::log1p(std::exp(-t));
  return std::log1p(std::exp(t));
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

inline Tensor scale(const Tensor& a, double c) {
  return detail::unary(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

inline Tensor add_scalar(const Tensor& a, double c) {
  return detail::unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(double c, const Tensor& a) { return scale(a, c); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// ---------------------------------------------------------------------------
// Elementwise unary ops
// ---------------------------------------------------------------------------

inline Tensor relu(const Tensor& a) {
  return detail::unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Tensor tanh(const Tensor& a) {
  return detail::unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Tensor sigmoid(const Tensor& a) {
  return detail::unary(a, detail::stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

/// ln(1 + e^t), split at 0 so neither branch overflows.
inline Tensor softplus(const Tensor& a) {
  return detail::unary(a, detail::stable_softplus,
                       [](double x, double) { return detail::stable_sigmoid(x); });
}

inline Tensor log(const Tensor& a) {
  return detail::unary(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Tensor exp(const Tensor& a) {
  return detail::unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

/// Gradient passes through inside [lo, hi] and is zero outside.
inline Tensor clamp(const Tensor& a, double lo, double hi) {
  if (!(lo <= hi)) throw ContractError("clamp: lower bound exceeds upper bound");
  return detail::unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  const std::size_t n = a.numel();
  return Tensor::from_op({}, {acc}, {a}, [n](std::span<const double> g, std::span<std::span<double>> pg) {
    for (std::size_t i = 0; i < n; ++i) pg[0][i] += g[0];
  });
}

inline Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

/// Sum along one axis; the axis is removed from the result shape.
inline Tensor sum(const Tensor& a, std::size_t axis) {
  if (axis >= a.rank())
    throw DimensionError("sum: axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(a.shape()));
  const Shape& s = a.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) out_shape.push_back(s[i]);
  std::vector<double> out(outer * inner, 0.0);
  auto av = a.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t in = 0; in < inner; ++in) out[o * inner + in] += av[(o * len + l) * inner + in];
  return Tensor::from_op(std::move(out_shape), std::move(out), {a},
                         [outer, len, inner](std::span<const double> g, std::span<std::span<double>> pg) {
                           for (std::size_t o = 0; o < outer; ++o)
                             for (std::size_t l = 0; l < len; ++l)
                               for (std::size_t in = 0; in < inner; ++in)
                                 pg[0][(o * len + l) * inner + in] += g[o * inner + in];
                         });
}

inline Tensor mean(const Tensor& a, std::size_t axis) {
  if (axis >= a.rank())
    throw DimensionError("mean: axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(a.shape()));
  return scale(sum(a, axis), 1.0 / static_cast<double>(a.shape()[axis]));
}

// ---------------------------------------------------------------------------
// Structural
// ---------------------------------------------------------------------------

/// Columns [begin, end) of a matrix.
inline Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  if (a.rank() != 2 || begin >= end || end > a.cols())
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") invalid for shape " + shape_str(a.shape()));
  const std::size_t m = a.rows(), n = a.cols(), w = end - begin;
  std::vector<double> out(m * w);
  auto av = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = av[i * n + begin + j];
  return Tensor::from_op({m, w}, std::move(out), {a},
                         [m, n, w, begin](std::span<const double> g, std::span<std::span<double>> pg) {
                           for (std::size_t i = 0; i < m; ++i)
                             for (std::size_t j = 0; j < w; ++j) pg[0][i * n + begin + j] += g[i * w + j];
                         });
}

/// Rows selected by index, as a new leaf (no gradient).
inline Tensor gather_rows(const Tensor& a, std::span<const std::size_t> idx) {
  if (a.rank() != 2) throw DimensionError("gather_rows needs a matrix, got " + shape_str(a.shape()));
  const std::size_t n = a.cols();
  std::vector<double> out;
  out.reserve(idx.size() * n);
  auto av = a.data();
  for (std::size_t r : idx) {
    if (r >= a.rows()) throw DimensionError("gather_rows: row index out of range");
    out.insert(out.end(), av.begin() + static_cast<std::ptrdiff_t>(r * n),
               av.begin() + static_cast<std::ptrdiff_t>((r + 1) * n));
  }
  return Tensor({idx.size(), n}, std::move(out));
}

inline bool all_finite(const Tensor& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](double v) { return std::isfinite(v); });
}

}  // namespace vimae
