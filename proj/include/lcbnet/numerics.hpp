// Reverse-mode differentiable dense arrays.
//
// Every model computation is expressed with the free functions in this
// header. Each call records a node holding its value and a closure that
// propagates gradients to its inputs; `DiffArray::backward()` walks the graph
// in reverse topological order. The graph is rebuilt on every forward pass,
// so sequence lengths may change freely between calls.
//
// Gradients of leaf arrays accumulate across backward() calls until
// zero_grad() is called. Intermediate gradients are reset on every call.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "lcbnet/errors.hpp"

namespace lcbnet::num {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

class DiffArray;

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<double>& grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
  // Gradient buffer of parent i, or nullptr when it does not need one.
  double* parent_grad(std::size_t i) {
    Node& p = *parents[i];
    return p.requires_grad ? p.grad_buffer().data() : nullptr;
  }
  const std::vector<double>& parent_value(std::size_t i) const {
    return parents[i]->value;
  }
};

inline bool& grad_enabled() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled()) {
    detail::grad_enabled() = false;
  }
  ~NoGradGuard() { detail::grad_enabled() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

class DiffArray {
 public:
  DiffArray() = default;

  DiffArray(Shape shape, std::vector<double> data, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    if (shape_size(shape) != data.size()) {
      throw DimensionError("DiffArray: shape " + shape_string(shape) +
                           " does not match " + std::to_string(data.size()) +
                           " values");
    }
    node_->shape = std::move(shape);
    node_->value = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static DiffArray zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = shape_size(shape);
    return DiffArray(std::move(shape), std::vector<double>(n, 0.0),
                     requires_grad);
  }
  static DiffArray filled(Shape shape, double value) {
    const std::size_t n = shape_size(shape);
    return DiffArray(std::move(shape), std::vector<double>(n, value));
  }
  static DiffArray scalar(double value, bool requires_grad = false) {
    return DiffArray({}, {value}, requires_grad);
  }
  static DiffArray matrix(std::size_t rows, std::size_t cols,
                          std::vector<double> data,
                          bool requires_grad = false) {
    return DiffArray({rows, cols}, std::move(data), requires_grad);
  }
  static DiffArray vector(std::vector<double> data,
                          bool requires_grad = false) {
    const std::size_t n = data.size();
    return DiffArray({n}, std::move(data), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  std::size_t rows() const { return rank() == 0 ? 1 : node_->shape[0]; }
  std::size_t cols() const {
    return rank() < 2 ? 1 : size() / std::max<std::size_t>(rows(), 1);
  }

  std::span<const double> data() const { return node_->value; }
  // Writable view; meant for leaves (parameter updates, perturbation).
  std::span<double> mutable_data() { return node_->value; }
  double value(std::size_t i) const { return node_->value[i]; }
  double at(std::size_t r, std::size_t c) const {
    return node_->value[r * cols() + c];
  }
  double item() const {
    if (size() != 1) {
      throw ContractError("item(): array of shape " + shape_string(shape()) +
                          " is not a scalar");
    }
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) {
    if (!node_->leaf) throw ContractError("requires_grad set on non-leaf");
    node_->requires_grad = flag;
  }
  bool is_leaf() const { return node_->leaf; }
  std::span<const double> grad() const { return node_->grad_buffer(); }
  std::span<double> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

  // Values only, cut from the graph.
  DiffArray detach() const { return DiffArray(shape(), node_->value); }

  void backward() const;

  detail::Node& node() const { return *node_; }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

// Creates an op result. The backward closure is only stored when gradient
// recording is on and some input needs a gradient.
template <typename Backward>
DiffArray make_result(Shape shape, std::vector<double> value,
                      std::initializer_list<const DiffArray*> inputs,
                      Backward&& backward) {
  DiffArray out(std::move(shape), std::move(value));
  if (!grad_enabled()) return out;
  bool needs = false;
  for (const DiffArray* in : inputs) needs = needs || in->requires_grad();
  if (!needs) return out;
  Node& node = out.node();
  node.requires_grad = true;
  node.leaf = false;
  node.parents.reserve(inputs.size());
  for (const DiffArray* in : inputs) node.parents.push_back(in->node_ptr());
  node.backward = std::forward<Backward>(backward);
  return out;
}

inline DiffArray make_result(Shape shape, std::vector<double> value,
                             const std::vector<DiffArray>& inputs,
                             std::function<void(Node&)> backward) {
  DiffArray out(std::move(shape), std::move(value));
  if (!grad_enabled()) return out;
  bool needs = false;
  for (const DiffArray& in : inputs) needs = needs || in.requires_grad();
  if (!needs) return out;
  Node& node = out.node();
  node.requires_grad = true;
  node.leaf = false;
  for (const DiffArray& in : inputs) node.parents.push_back(in.node_ptr());
  node.backward = std::move(backward);
  return out;
}

inline void require_rank2(const DiffArray& a, const char* op) {
  if (a.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " +
                         shape_string(a.shape()));
  }
}

inline void require_same_shape(const DiffArray& a, const DiffArray& b,
                               const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " +
                         shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " differ");
  }
}

inline double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

inline void DiffArray::backward() const {
  if (!defined()) throw ContractError("backward() on an empty array");
  if (size() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        shape_string(shape()));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (detail::Node* node : order) {
    if (!node->leaf) node->grad.assign(node->value.size(), 0.0);
  }
  node_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (!node->leaf && node->backward) node->backward(*node);
  }
}

// ---------------------------------------------------------------------------
// Linear algebra

inline DiffArray matmul(const DiffArray& a, const DiffArray& b) {
  detail::require_rank2(a, "matmul");
  detail::require_rank2(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner dimensions differ for " +
                         shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      if (av == 0.0) continue;
      const double* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  return detail::make_result(
      {m, n}, std::move(out), {&a, &b}, [m, k, n](detail::Node& self) {
        const double* g = self.grad.data();
        const double* va = self.parent_value(0).data();
        const double* vb = self.parent_value(1).data();
        if (double* ga = self.parent_grad(0)) {
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
              double acc = 0.0;
              const double* brow = vb + p * n;
              const double* grow = g + i * n;
              for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
              ga[i * k + p] += acc;
            }
          }
        }
        if (double* gb = self.parent_grad(1)) {
          for (std::size_t i = 0; i < m; ++i) {
            const double* grow = g + i * n;
            for (std::size_t p = 0; p < k; ++p) {
              const double av = va[i * k + p];
              if (av == 0.0) continue;
              double* gbrow = gb + p * n;
              for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
            }
          }
        }
      });
}

inline DiffArray transpose(const DiffArray& a) {
  detail::require_rank2(a, "transpose");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.data()[i * n + j];
  return detail::make_result({n, m}, std::move(out), {&a},
                             [m, n](detail::Node& self) {
                               double* ga = self.parent_grad(0);
                               for (std::size_t i = 0; i < m; ++i)
                                 for (std::size_t j = 0; j < n; ++j)
                                   ga[i * n + j] += self.grad[j * m + i];
                             });
}

inline DiffArray reshape(const DiffArray& a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    throw DimensionError("reshape: cannot view " + shape_string(a.shape()) +
                         " as " + shape_string(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return detail::make_result(std::move(shape), std::move(out), {&a},
                             [](detail::Node& self) {
                               double* ga = self.parent_grad(0);
                               for (std::size_t i = 0; i < self.grad.size();
                                    ++i)
                                 ga[i] += self.grad[i];
                             });
}

// ---------------------------------------------------------------------------
// Element-wise arithmetic

inline DiffArray add(const DiffArray& a, const DiffArray& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value(i) + b.value(i);
  return detail::make_result(a.shape(), std::move(out), {&a, &b},
                             [](detail::Node& self) {
                               for (std::size_t p = 0; p < 2; ++p) {
                                 if (double* g = self.parent_grad(p)) {
                                   for (std::size_t i = 0; i < self.grad.size();
                                        ++i)
                                     g[i] += self.grad[i];
                                 }
                               }
                             });
}

inline DiffArray sub(const DiffArray& a, const DiffArray& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value(i) - b.value(i);
  return detail::make_result(a.shape(), std::move(out), {&a, &b},
                             [](detail::Node& self) {
                               if (double* g = self.parent_grad(0))
                                 for (std::size_t i = 0; i < self.grad.size();
                                      ++i)
                                   g[i] += self.grad[i];
                               if (double* g = self.parent_grad(1))
                                 for (std::size_t i = 0; i < self.grad.size();
                                      ++i)
                                   g[i] -= self.grad[i];
                             });
}

inline DiffArray mul(const DiffArray& a, const DiffArray& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value(i) * b.value(i);
  return detail::make_result(
      a.shape(), std::move(out), {&a, &b}, [](detail::Node& self) {
        const auto& va = self.parent_value(0);
        const auto& vb = self.parent_value(1);
        if (double* g = self.parent_grad(0))
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            g[i] += self.grad[i] * vb[i];
        if (double* g = self.parent_grad(1))
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            g[i] += self.grad[i] * va[i];
      });
}

inline DiffArray scale(const DiffArray& a, double factor) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value(i) * factor;
  return detail::make_result(a.shape(), std::move(out), {&a},
                             [factor](detail::Node& self) {
                               double* g = self.parent_grad(0);
                               for (std::size_t i = 0; i < self.grad.size();
                                    ++i)
                                 g[i] += self.grad[i] * factor;
                             });
}

// x [m x n] + b [n] broadcast over rows.
inline DiffArray add_bias(const DiffArray& x, const DiffArray& bias) {
  detail::require_rank2(x, "add_bias");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  if (bias.size() != n) {
    throw DimensionError("add_bias: bias " + shape_string(bias.shape()) +
                         " does not fit " + shape_string(x.shape()));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bias.value(j);
  return detail::make_result(
      x.shape(), std::move(out), {&x, &bias}, [m, n](detail::Node& self) {
        if (double* gx = self.parent_grad(0))
          for (std::size_t i = 0; i < m * n; ++i) gx[i] += self.grad[i];
        if (double* gb = self.parent_grad(1))
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gb[j] += self.grad[i * n + j];
      });
}

inline DiffArray sum(const DiffArray& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  return detail::make_result({}, {total}, {&a}, [](detail::Node& self) {
    double* g = self.parent_grad(0);
    const std::size_t n = self.parents[0]->value.size();
    for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
  });
}

inline DiffArray mean(const DiffArray& a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

// ---------------------------------------------------------------------------
// Nonlinearities

// Output lies strictly inside (0, 1), even where exp() saturates.
inline DiffArray sigmoid(const DiffArray& x) {
  constexpr double lo = std::numeric_limits<double>::min();
  const double hi = std::nextafter(1.0, 0.0);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::clamp(detail::stable_sigmoid(x.value(i)), lo, hi);
  return detail::make_result(x.shape(), std::move(out), {&x},
                             [](detail::Node& self) {
                               double* g = self.parent_grad(0);
                               for (std::size_t i = 0; i < self.grad.size();
                                    ++i) {
                                 const double s = self.value[i];
                                 g[i] += self.grad[i] * s * (1.0 - s);
                               }
                             });
}

// x * sigmoid(x), a.k.a. swish.
inline DiffArray silu(const DiffArray& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = x.value(i) * detail::stable_sigmoid(x.value(i));
  return detail::make_result(
      x.shape(), std::move(out), {&x}, [](detail::Node& self) {
        double* g = self.parent_grad(0);
        const auto& vx = self.parent_value(0);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          const double s = detail::stable_sigmoid(vx[i]);
          g[i] += self.grad[i] * (s + vx[i] * s * (1.0 - s));
        }
      });
}

namespace detail {

// Row-wise softmax over the last dimension. When `causal`, row r only sees
// columns 0..(r % rows_per_block); the rest are exactly zero.
inline DiffArray softmax_impl(const DiffArray& x, bool causal) {
  if (x.rank() == 0) throw DimensionError("softmax_rows: scalar input");
  const std::size_t n = x.shape().back();
  const std::size_t m = n == 0 ? 0 : x.size() / n;
  const std::size_t block = x.rank() >= 2 ? x.shape()[x.rank() - 2] : 1;
  std::vector<double> out(x.size(), 0.0);
  for (std::size_t r = 0; r < m; ++r) {
    const std::size_t limit = causal ? std::min(n, (r % block) + 1) : n;
    const double* in = x.data().data() + r * n;
    double* o = out.data() + r * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < limit; ++j) mx = std::max(mx, in[j]);
    double total = 0.0;
    for (std::size_t j = 0; j < limit; ++j) {
      o[j] = std::exp(in[j] - mx);
      total += o[j];
    }
    for (std::size_t j = 0; j < limit; ++j) o[j] /= total;
  }
  return make_result(x.shape(), std::move(out), {&x},
                     [m, n](Node& self) {
                       double* g = self.parent_grad(0);
                       for (std::size_t r = 0; r < m; ++r) {
                         const double* s = self.value.data() + r * n;
                         const double* gy = self.grad.data() + r * n;
                         double dot = 0.0;
                         for (std::size_t j = 0; j < n; ++j)
                           dot += gy[j] * s[j];
                         for (std::size_t j = 0; j < n; ++j)
                           g[r * n + j] += s[j] * (gy[j] - dot);
                       }
                     });
}

}  // namespace detail

inline DiffArray softmax_rows(const DiffArray& x) {
  return detail::softmax_impl(x, false);
}

// Softmax where row i attends to columns 0..i only (decoder self-attention).
inline DiffArray causal_softmax_rows(const DiffArray& x) {
  detail::require_rank2(x, "causal_softmax_rows");
  return detail::softmax_impl(x, true);
}

inline DiffArray layer_norm(const DiffArray& x, const DiffArray& gain,
                            const DiffArray& bias, double eps) {
  detail::require_rank2(x, "layer_norm");
  const std::size_t m = x.shape()[0], d = x.shape()[1];
  if (d == 0) throw DimensionError("layer_norm: zero-width rows");
  if (gain.size() != d || bias.size() != d) {
    throw DimensionError("layer_norm: gain/bias do not match width " +
                         std::to_string(d));
  }
  std::vector<double> out(m * d), normalized(m * d), inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = x.data().data() + i * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      normalized[i * d + j] = (row[j] - mu) * inv_std[i];
      out[i * d + j] = normalized[i * d + j] * gain.value(j) + bias.value(j);
    }
  }
  return detail::make_result(
      x.shape(), std::move(out), {&x, &gain, &bias},
      [m, d, normalized = std::move(normalized),
       inv_std = std::move(inv_std)](detail::Node& self) {
        const auto& g = self.parent_value(1);
        if (double* gx = self.parent_grad(0)) {
          std::vector<double> dxhat(d);
          for (std::size_t i = 0; i < m; ++i) {
            double s1 = 0.0, s2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              dxhat[j] = self.grad[i * d + j] * g[j];
              s1 += dxhat[j];
              s2 += dxhat[j] * normalized[i * d + j];
            }
            const double dd = static_cast<double>(d);
            for (std::size_t j = 0; j < d; ++j) {
              gx[i * d + j] += inv_std[i] / dd *
                               (dd * dxhat[j] - s1 -
                                normalized[i * d + j] * s2);
            }
          }
        }
        if (double* gg = self.parent_grad(1))
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < d; ++j)
              gg[j] += self.grad[i * d + j] * normalized[i * d + j];
        if (double* gb = self.parent_grad(2))
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < d; ++j) gb[j] += self.grad[i * d + j];
      });
}

// ---------------------------------------------------------------------------
// Indexing and layout

// Rows of `table` [V x d] selected by ids.
inline DiffArray embedding(const DiffArray& table, std::span<const int> ids) {
  detail::require_rank2(table, "embedding");
  const std::size_t vocab = table.shape()[0], d = table.shape()[1];
  std::vector<double> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw ContractError("embedding: id " + std::to_string(ids[i]) +
                          " outside table of " + std::to_string(vocab));
    }
    std::copy_n(table.data().begin() + ids[i] * d, d, out.begin() + i * d);
  }
  std::vector<int> saved(ids.begin(), ids.end());
  return detail::make_result(
      {ids.size(), d}, std::move(out), {&table},
      [d, saved = std::move(saved)](detail::Node& self) {
        double* g = self.parent_grad(0);
        for (std::size_t i = 0; i < saved.size(); ++i)
          for (std::size_t j = 0; j < d; ++j)
            g[saved[i] * d + j] += self.grad[i * d + j];
      });
}

inline DiffArray slice_cols(const DiffArray& x, std::size_t start,
                            std::size_t count) {
  detail::require_rank2(x, "slice_cols");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  if (start + count > n) throw DimensionError("slice_cols: out of range");
  std::vector<double> out(m * count);
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(x.data().begin() + i * n + start, count,
                out.begin() + i * count);
  return detail::make_result({m, count}, std::move(out), {&x},
                             [m, n, start, count](detail::Node& self) {
                               double* g = self.parent_grad(0);
                               for (std::size_t i = 0; i < m; ++i)
                                 for (std::size_t j = 0; j < count; ++j)
                                   g[i * n + start + j] +=
                                       self.grad[i * count + j];
                             });
}

inline DiffArray slice_rows(const DiffArray& x, std::size_t start,
                            std::size_t count) {
  detail::require_rank2(x, "slice_rows");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  if (start + count > m) throw DimensionError("slice_rows: out of range");
  std::vector<double> out(x.data().begin() + start * n,
                          x.data().begin() + (start + count) * n);
  return detail::make_result({count, n}, std::move(out), {&x},
                             [n, start](detail::Node& self) {
                               double* g = self.parent_grad(0) + start * n;
                               for (std::size_t i = 0; i < self.grad.size();
                                    ++i)
                                 g[i] += self.grad[i];
                             });
}

inline DiffArray concat_cols(const std::vector<DiffArray>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t m = parts[0].rows();
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  for (const DiffArray& p : parts) {
    detail::require_rank2(p, "concat_cols");
    if (p.rows() != m) throw DimensionError("concat_cols: row counts differ");
    offsets.push_back(total);
    total += p.cols();
  }
  std::vector<double> out(m * total);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const std::size_t w = parts[k].cols();
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(parts[k].data().begin() + i * w, w,
                  out.begin() + i * total + offsets[k]);
  }
  return detail::make_result(
      {m, total}, std::move(out), parts,
      [m, total, offsets](detail::Node& self) {
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
          double* g = self.parent_grad(k);
          if (!g) continue;
          const std::size_t w = self.parents[k]->shape[1];
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j)
              g[i * w + j] += self.grad[i * total + offsets[k] + j];
        }
      });
}

// Sliding windows of x [L x c] flattened to rows: output row t holds
// x[t*stride - pad + s] for s in [0, span), zero outside the sequence.
inline DiffArray unfold(const DiffArray& x, std::size_t span,
                        std::size_t stride, std::size_t pad) {
  detail::require_rank2(x, "unfold");
  const std::size_t len = x.shape()[0], c = x.shape()[1];
  if (span == 0 || stride == 0) throw ConfigError("unfold: zero span/stride");
  if (len + 2 * pad < span) {
    throw InputError("unfold: sequence of " + std::to_string(len) +
                     " rows shorter than window " + std::to_string(span));
  }
  const std::size_t out_len = (len + 2 * pad - span) / stride + 1;
  const std::size_t width = span * c;
  std::vector<double> out(out_len * width, 0.0);
  for (std::size_t t = 0; t < out_len; ++t) {
    for (std::size_t s = 0; s < span; ++s) {
      const auto src = static_cast<std::ptrdiff_t>(t * stride + s) -
                       static_cast<std::ptrdiff_t>(pad);
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
      std::copy_n(x.data().begin() + src * c, c,
                  out.begin() + t * width + s * c);
    }
  }
  return detail::make_result(
      {out_len, width}, std::move(out), {&x},
      [len, c, span, stride, pad, out_len, width](detail::Node& self) {
        double* g = self.parent_grad(0);
        for (std::size_t t = 0; t < out_len; ++t) {
          for (std::size_t s = 0; s < span; ++s) {
            const auto src = static_cast<std::ptrdiff_t>(t * stride + s) -
                             static_cast<std::ptrdiff_t>(pad);
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
            for (std::size_t j = 0; j < c; ++j)
              g[src * c + j] += self.grad[t * width + s * c + j];
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Convolutions

// x [L x c_in], kernels [span x c_in x c_out], bias [c_out].
inline DiffArray conv1d(const DiffArray& x, const DiffArray& kernels,
                        const DiffArray& bias, std::size_t stride,
                        std::size_t pad) {
  detail::require_rank2(x, "conv1d");
  if (kernels.rank() != 3 || kernels.shape()[1] != x.shape()[1]) {
    throw DimensionError("conv1d: kernels " + shape_string(kernels.shape()) +
                         " do not fit input " + shape_string(x.shape()));
  }
  const std::size_t span = kernels.shape()[0];
  const std::size_t c_in = kernels.shape()[1], c_out = kernels.shape()[2];
  DiffArray windows = unfold(x, span, stride, pad);
  return add_bias(matmul(windows, reshape(kernels, {span * c_in, c_out})),
                  bias);
}

// Length-preserving convolution with zero padding; span must be odd.
inline DiffArray conv1d_same(const DiffArray& x, const DiffArray& kernels,
                             const DiffArray& bias) {
  if (kernels.rank() != 3) {
    throw DimensionError("conv1d_same: kernels must be span x in x out");
  }
  const std::size_t span = kernels.shape()[0];
  if (span % 2 == 0) {
    throw ConfigError("conv1d_same: span " + std::to_string(span) +
                      " is even; a centred window needs an odd span");
  }
  return conv1d(x, kernels, bias, 1, (span - 1) / 2);
}

// Per-channel convolution: x [L x c], kernel [span x c], bias [c].
inline DiffArray depthwise_conv1d_same(const DiffArray& x,
                                       const DiffArray& kernel,
                                       const DiffArray& bias) {
  detail::require_rank2(x, "depthwise_conv1d_same");
  detail::require_rank2(kernel, "depthwise_conv1d_same");
  const std::size_t len = x.shape()[0], c = x.shape()[1];
  const std::size_t span = kernel.shape()[0];
  if (kernel.shape()[1] != c || bias.size() != c) {
    throw DimensionError("depthwise_conv1d_same: channel mismatch");
  }
  if (span % 2 == 0) throw ConfigError("depthwise_conv1d_same: even span");
  const auto pad = static_cast<std::ptrdiff_t>((span - 1) / 2);
  std::vector<double> out(len * c);
  for (std::size_t t = 0; t < len; ++t) {
    for (std::size_t j = 0; j < c; ++j) {
      double acc = bias.value(j);
      for (std::size_t s = 0; s < span; ++s) {
        const auto src = static_cast<std::ptrdiff_t>(t + s) - pad;
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
        acc += x.value(src * c + j) * kernel.value(s * c + j);
      }
      out[t * c + j] = acc;
    }
  }
  return detail::make_result(
      {len, c}, std::move(out), {&x, &kernel, &bias},
      [len, c, span, pad](detail::Node& self) {
        const auto& vx = self.parent_value(0);
        const auto& vk = self.parent_value(1);
        double* gx = self.parent_grad(0);
        double* gk = self.parent_grad(1);
        double* gb = self.parent_grad(2);
        for (std::size_t t = 0; t < len; ++t) {
          for (std::size_t j = 0; j < c; ++j) {
            const double g = self.grad[t * c + j];
            if (gb) gb[j] += g;
            for (std::size_t s = 0; s < span; ++s) {
              const auto src = static_cast<std::ptrdiff_t>(t + s) - pad;
              if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
              if (gx) gx[src * c + j] += g * vk[s * c + j];
              if (gk) gk[s * c + j] += g * vx[src * c + j];
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Parameters and finite-difference verification

struct Parameter {
  std::string name;
  DiffArray value;
};

struct GradCheckEntry {
  std::string name;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double max_rel_error = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  std::size_t checked_values = 0;

  double max_rel_error() const {
    double worst = 0.0;
    for (const auto& e : entries) worst = std::max(worst, e.max_rel_error);
    return worst;
  }
  bool passed() const {
    return std::all_of(entries.begin(), entries.end(),
                       [](const GradCheckEntry& e) { return e.passed; });
  }
};

// |a - b| / max(|a|, |b|, floor). Gradients smaller than `floor` are
// compared on an absolute scale, where central differences lose precision.
inline double relative_error(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline constexpr double kGradCheckFloor = 1e-6;

// Compares backward() gradients with central differences for every entry of
// every parameter that requires a gradient. `build_loss` must rebuild the
// graph from the current parameter values on each call.
inline GradCheckReport grad_check(const std::function<DiffArray()>& build_loss,
                                  std::span<Parameter> params, double h,
                                  double tol,
                                  double floor = kGradCheckFloor) {
  if (!(h > 0.0) || !(tol > 0.0)) {
    throw ContractError("grad_check: h and tol must be positive");
  }
  for (Parameter& p : params)
    if (p.value.requires_grad()) p.value.zero_grad();
  build_loss().backward();

  GradCheckReport report;
  NoGradGuard no_grad;
  for (Parameter& p : params) {
    if (!p.value.requires_grad()) continue;
    GradCheckEntry entry;
    entry.name = p.name;
    const std::vector<double> analytic(p.value.grad().begin(),
                                       p.value.grad().end());
    auto values = p.value.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double original = values[i];
      values[i] = original + h;
      const double plus = build_loss().item();
      values[i] = original - h;
      const double minus = build_loss().item();
      values[i] = original;
      const double numeric = (plus - minus) / (2.0 * h);
      const double err = relative_error(analytic[i], numeric, floor);
      if (err >= entry.max_rel_error) {
        entry.max_rel_error = err;
        entry.worst_index = i;
        entry.analytic = analytic[i];
        entry.numeric = numeric;
      }
      ++report.checked_values;
    }
    entry.passed = entry.max_rel_error < tol;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace lcbnet::num
