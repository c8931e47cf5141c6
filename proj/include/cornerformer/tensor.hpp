#pragma once

// Dense row-major tensor with a dynamic reverse-mode differentiation graph.
//
// Every op returns a fresh node that remembers its parents and a closure that
// pushes the node's gradient back into them. Nodes that do not depend on any
// trainable leaf carry no closure, so pure inference builds no graph.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace cornerformer {

using Shape = std::vector<std::size_t>;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

template <class T>
struct Node {
  Shape shape;
  std::shared_ptr<std::vector<T>> data;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::size_t numel() const { return data->size(); }

  // Lazily allocated gradient buffer.
  std::vector<T>& g() {
    if (grad.empty()) grad.assign(data->size(), T(0));
    return grad;
  }
};

template <class T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<Node<T>>;

  Tensor() = default;
  explicit Tensor(NodePtr n) : node_(std::move(n)) {}

  static Tensor zeros(Shape shape) {
    return from_data(shape, std::vector<T>(shape_numel(shape), T(0)));
  }

  static Tensor full(Shape shape, T value) {
    return from_data(shape, std::vector<T>(shape_numel(shape), value));
  }

  static Tensor scalar(T value) { return from_data({}, {value}); }

  static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false) {
    if (data.size() != shape_numel(shape))
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->data = std::make_shared<std::vector<T>>(std::move(data));
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  // Leaf sharing storage with another owner (the parameter store).
  static Tensor shared_leaf(Shape shape, std::shared_ptr<std::vector<T>> data,
                            bool requires_grad) {
    if (data->size() != shape_numel(shape))
      throw DimensionError("shared storage length does not match shape " + shape_str(shape));
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->numel(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const T> data() const { return {node_->data->data(), node_->data->size()}; }
  // Only meaningful on leaves; interior nodes may share storage after reshape.
  std::span<T> mutable_data() { return {node_->data->data(), node_->data->size()}; }
  const std::shared_ptr<std::vector<T>>& storage() const { return node_->data; }

  std::span<const T> grad() const { return {node_->grad.data(), node_->grad.size()}; }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad.assign(node_->data->size(), T(0)); }
  void drop_grad() { node_->grad.clear(); }

  T item() const {
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    return (*node_->data)[0];
  }
  T operator[](std::size_t i) const { return (*node_->data)[i]; }

  const NodePtr& node() const { return node_; }

  // Copy of the values with no graph attached.
  Tensor detach() const { return from_data(shape(), *node_->data); }

  // Reverse pass from a scalar. Each node in the graph is visited once, in
  // reverse topological order.
  void backward() const {
    if (numel() != 1)
      throw DimensionError("backward() needs a scalar, got " + shape_str(shape()));
    backward_with(std::vector<T>{T(1)});
  }

  void backward_with(const std::vector<T>& seed) const {
    if (!node_->requires_grad) return;
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        Node<T>* p = n->parents[next++].get();
        if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    auto& g = node_->g();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed.at(i);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node<T>* n = *it;
      if (n->backward && !n->grad.empty()) n->backward(*n);
    }
  }

 private:
  NodePtr node_;
};

namespace detail {

template <class T>
Tensor<T> make_result(Shape shape, std::vector<T> data,
                      std::initializer_list<Tensor<T>> parents,
                      std::function<void(Node<T>&)> backward) {
  auto out = Tensor<T>::from_data(std::move(shape), std::move(data));
  bool any = false;
  for (const auto& p : parents) any = any || p.requires_grad();
  if (any) {
    auto& n = *out.node();
    n.requires_grad = true;
    for (const auto& p : parents) n.parents.push_back(p.node());
    n.backward = std::move(backward);
  }
  return out;
}

template <class T>
Tensor<T> make_result(Shape shape, std::vector<T> data, const std::vector<Tensor<T>>& parents,
                      std::function<void(Node<T>&)> backward) {
  auto out = Tensor<T>::from_data(std::move(shape), std::move(data));
  bool any = false;
  for (const auto& p : parents) any = any || p.requires_grad();
  if (any) {
    auto& n = *out.node();
    n.requires_grad = true;
    for (const auto& p : parents) n.parents.push_back(p.node());
    n.backward = std::move(backward);
  }
  return out;
}

inline void require_same_shape(const char* op, const Shape& a, const Shape& b) {
  if (a != b)
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                         shape_str(b));
}

inline void require_rank(const char* op, const Shape& a, std::size_t rank) {
  if (a.size() != rank)
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got " + shape_str(a));
}

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

// Splits a shape around `axis` into (outer, len, inner) extents.
inline std::tuple<std::size_t, std::size_t, std::size_t> split_axis(const Shape& s,
                                                                    std::size_t axis) {
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  return {outer, s[axis], inner};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("add", a.shape(), b.shape());
  std::vector<T> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  auto an = a.node(), bn = b.node();
  return detail::make_result<T>(a.shape(), std::move(out), {a, b}, [an, bn](Node<T>& n) {
    for (auto* p : {an.get(), bn.get()}) {
      if (!p->requires_grad) continue;
      auto& g = p->g();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("sub", a.shape(), b.shape());
  std::vector<T> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  auto an = a.node(), bn = b.node();
  return detail::make_result<T>(a.shape(), std::move(out), {a, b}, [an, bn](Node<T>& n) {
    if (an->requires_grad) {
      auto& g = an->g();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->g();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
    }
  });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("mul", a.shape(), b.shape());
  std::vector<T> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  auto an = a.node(), bn = b.node();
  return detail::make_result<T>(a.shape(), std::move(out), {a, b}, [an, bn](Node<T>& n) {
    const auto& x = *an->data;
    const auto& y = *bn->data;
    if (an->requires_grad) {
      auto& g = an->g();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * y[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->g();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * x[i];
    }
  });
}

// a * scale + shift with constant scalars.
template <class T>
Tensor<T> affine(const Tensor<T>& a, T scale, T shift = T(0)) {
  std::vector<T> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * scale + shift;
  auto an = a.node();
  return detail::make_result<T>(a.shape(), std::move(out), {a}, [an, scale](Node<T>& n) {
    auto& g = an->g();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * scale;
  });
}

// Per-column affine map on a 2-D tensor: out[i][j] = a[i][j] * scale[j] + shift[j].
template <class T>
Tensor<T> affine_cols(const Tensor<T>& a, std::vector<T> scale, std::vector<T> shift) {
  detail::require_rank("affine_cols", a.shape(), 2);
  const std::size_t r = a.dim(0), c = a.dim(1);
  if (scale.size() != c || shift.size() != c)
    throw DimensionError("affine_cols: column vectors do not match " + shape_str(a.shape()));
  std::vector<T> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[i * c + j] * scale[j] + shift[j];
  auto an = a.node();
  return detail::make_result<T>(a.shape(), std::move(out), {a},
                                [an, scale = std::move(scale), r, c](Node<T>& n) {
                                  auto& g = an->g();
                                  for (std::size_t i = 0; i < r; ++i)
                                    for (std::size_t j = 0; j < c; ++j)
                                      g[i * c + j] += n.grad[i * c + j] * scale[j];
                                });
}

namespace detail {

template <class T, class F, class DF>
Tensor<T> unary(const Tensor<T>& a, F f, DF df_from_out) {
  std::vector<T> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  auto an = a.node();
  return make_result<T>(a.shape(), std::move(out), {a}, [an, df_from_out](Node<T>& n) {
    auto& g = an->g();
    const auto& x = *an->data;
    const auto& y = *n.data;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * df_from_out(x[i], y[i]);
  });
}

}  // namespace detail

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
  return detail::unary(
      a, [](T v) { return v > T(0) ? v : T(0); },
      [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return detail::unary(
      a,
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Tensor<T> tanh(const Tensor<T>& a) {
  return detail::unary(
      a, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

// Multiplies by a constant tensor of the same shape (masks, fixed weights).
template <class T>
Tensor<T> mul_const(const Tensor<T>& a, std::span<const T> c) {
  if (c.size() != a.numel())
    throw DimensionError("mul_const: constant length does not match " + shape_str(a.shape()));
  std::vector<T> k(c.begin(), c.end());
  std::vector<T> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * k[i];
  auto an = a.node();
  return detail::make_result<T>(a.shape(), std::move(out), {a},
                                [an, k = std::move(k)](Node<T>& n) {
                                  auto& g = an->g();
                                  for (std::size_t i = 0; i < g.size(); ++i)
                                    g[i] += n.grad[i] * k[i];
                                });
}

// Scales row i of a 2-D tensor by m[i]; used to zero padded rows.
template <class T>
Tensor<T> mask_rows(const Tensor<T>& a, std::span<const T> m) {
  detail::require_rank("mask_rows", a.shape(), 2);
  if (m.size() != a.dim(0))
    throw DimensionError("mask_rows: mask length does not match " + shape_str(a.shape()));
  const std::size_t c = a.dim(1);
  std::vector<T> full(a.numel());
  for (std::size_t i = 0; i < m.size(); ++i)
    std::fill_n(full.begin() + static_cast<std::ptrdiff_t>(i * c), c, m[i]);
  return mul_const(a, std::span<const T>(full));
}

// ---------------------------------------------------------------------------
// Linear algebra

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n);
  detail::MapMat<T>(out.data(), m, n).noalias() =
      detail::CMapMat<T>(a.data().data(), m, k) * detail::CMapMat<T>(b.data().data(), k, n);
  auto an = a.node(), bn = b.node();
  return detail::make_result<T>({m, n}, std::move(out), {a, b}, [an, bn, m, k, n](Node<T>& nd) {
    detail::CMapMat<T> G(nd.grad.data(), m, n);
    if (an->requires_grad)
      detail::MapMat<T>(an->g().data(), m, k).noalias() +=
          G * detail::CMapMat<T>(bn->data->data(), k, n).transpose();
    if (bn->requires_grad)
      detail::MapMat<T>(bn->g().data(), k, n).noalias() +=
          detail::CMapMat<T>(an->data->data(), m, k).transpose() * G;
  });
}

template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
  detail::require_rank("transpose", a.shape(), 2);
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<T> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  auto an = a.node();
  return detail::make_result<T>({c, r}, std::move(out), {a}, [an, r, c](Node<T>& n) {
    auto& g = an->g();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += n.grad[j * r + i];
  });
}

// Adds a length-d vector to every row of an [n x d] tensor.
template <class T>
Tensor<T> add_rowvec(const Tensor<T>& a, const Tensor<T>& v) {
  detail::require_rank("add_rowvec", a.shape(), 2);
  if (v.numel() != a.dim(1))
    throw DimensionError("add_rowvec: row vector " + shape_str(v.shape()) +
                         " does not match " + shape_str(a.shape()));
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<T> out(a.numel());
  auto x = a.data(), y = v.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[i * c + j] + y[j];
  auto an = a.node(), vn = v.node();
  return detail::make_result<T>(a.shape(), std::move(out), {a, v}, [an, vn, r, c](Node<T>& n) {
    if (an->requires_grad) {
      auto& g = an->g();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
    if (vn->requires_grad) {
      auto& g = vn->g();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[j] += n.grad[i * c + j];
    }
  });
}

template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  return add_rowvec(matmul(x, w), b);
}

// ---------------------------------------------------------------------------
// Reductions and normalization

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = T(0);
  for (T v : a.data()) s += v;
  auto an = a.node();
  return detail::make_result<T>({}, {s}, {a}, [an](Node<T>& n) {
    auto& g = an->g();
    for (auto& v : g) v += n.grad[0];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
  return affine(sum(a), T(1) / static_cast<T>(std::max<std::size_t>(1, a.numel())));
}

// Sums out one axis; the axis is removed from the result shape.
template <class T>
Tensor<T> sum_axis(const Tensor<T>& a, std::size_t axis) {
  if (axis >= a.rank()) throw DimensionError("sum_axis: axis out of range for " + shape_str(a.shape()));
  auto [outer, len, inner] = detail::split_axis(a.shape(), axis);
  Shape s = a.shape();
  s.erase(s.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<T> out(outer * inner, T(0));
  auto x = a.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += x[(o * len + l) * inner + i];
  auto an = a.node();
  return detail::make_result<T>(s, std::move(out), {a},
                                [an, outer = outer, len = len, inner = inner](Node<T>& n) {
                                  auto& g = an->g();
                                  for (std::size_t o = 0; o < outer; ++o)
                                    for (std::size_t l = 0; l < len; ++l)
                                      for (std::size_t i = 0; i < inner; ++i)
                                        g[(o * len + l) * inner + i] += n.grad[o * inner + i];
                                });
}

// Softmax along `axis` with max subtraction.
template <class T>
Tensor<T> softmax(const Tensor<T>& a, std::size_t axis) {
  if (axis >= a.rank()) throw DimensionError("softmax: axis out of range for " + shape_str(a.shape()));
  auto [outer, len, inner] = detail::split_axis(a.shape(), axis);
  std::vector<T> out(a.numel());
  auto x = a.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * len * inner + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t l = 0; l < len; ++l) mx = std::max(mx, x[base + l * inner]);
      T z = T(0);
      for (std::size_t l = 0; l < len; ++l) {
        const T e = std::exp(x[base + l * inner] - mx);
        out[base + l * inner] = e;
        z += e;
      }
      for (std::size_t l = 0; l < len; ++l) out[base + l * inner] /= z;
    }
  auto an = a.node();
  return detail::make_result<T>(
      a.shape(), std::move(out), {a}, [an, outer = outer, len = len, inner = inner](Node<T>& n) {
        auto& g = an->g();
        const auto& y = *n.data;
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t base = o * len * inner + i;
            T dot = T(0);
            for (std::size_t l = 0; l < len; ++l)
              dot += n.grad[base + l * inner] * y[base + l * inner];
            for (std::size_t l = 0; l < len; ++l)
              g[base + l * inner] += y[base + l * inner] * (n.grad[base + l * inner] - dot);
          }
      });
}

// Row softmax over an [r x c] tensor where columns with valid[j] == 0 are
// treated as -inf: they get exactly zero weight and zero gradient.
template <class T>
Tensor<T> masked_softmax_rows(const Tensor<T>& a, std::span<const unsigned char> valid) {
  detail::require_rank("masked_softmax_rows", a.shape(), 2);
  const std::size_t r = a.dim(0), c = a.dim(1);
  if (valid.size() != c)
    throw DimensionError("masked_softmax_rows: mask length does not match " + shape_str(a.shape()));
  std::vector<unsigned char> mask(valid.begin(), valid.end());
  std::vector<T> out(a.numel(), T(0));
  auto x = a.data();
  for (std::size_t i = 0; i < r; ++i) {
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < c; ++j)
      if (mask[j]) mx = std::max(mx, x[i * c + j]);
    if (!std::isfinite(mx)) continue;  // no valid key: all-zero row
    T z = T(0);
    for (std::size_t j = 0; j < c; ++j)
      if (mask[j]) z += (out[i * c + j] = std::exp(x[i * c + j] - mx));
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= z;
  }
  auto an = a.node();
  return detail::make_result<T>(a.shape(), std::move(out), {a}, [an, r, c](Node<T>& n) {
    auto& g = an->g();
    const auto& y = *n.data;
    for (std::size_t i = 0; i < r; ++i) {
      T dot = T(0);
      for (std::size_t j = 0; j < c; ++j) dot += n.grad[i * c + j] * y[i * c + j];
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += y[i * c + j] * (n.grad[i * c + j] - dot);
    }
  });
}

// Layer normalization over the last axis of an [n x d] tensor.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     T eps = T(1e-5)) {
  detail::require_rank("layer_norm", x.shape(), 2);
  const std::size_t r = x.dim(0), d = x.dim(1);
  if (gain.numel() != d || bias.numel() != d)
    throw DimensionError("layer_norm: gain/bias do not match " + shape_str(x.shape()));
  std::vector<T> xhat(x.numel()), out(x.numel()), inv_std(r);
  auto xv = x.data(), gv = gain.data(), bv = bias.data();
  for (std::size_t i = 0; i < r; ++i) {
    T mu = T(0);
    for (std::size_t j = 0; j < d; ++j) mu += xv[i * d + j];
    mu /= static_cast<T>(d);
    T var = T(0);
    for (std::size_t j = 0; j < d; ++j) {
      const T t = xv[i * d + j] - mu;
      var += t * t;
    }
    var /= static_cast<T>(d);
    inv_std[i] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[i * d + j] = (xv[i * d + j] - mu) * inv_std[i];
      out[i * d + j] = xhat[i * d + j] * gv[j] + bv[j];
    }
  }
  auto xn = x.node(), gn = gain.node(), bn = bias.node();
  return detail::make_result<T>(
      x.shape(), std::move(out), {x, gain, bias},
      [xn, gn, bn, r, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& n) {
        const auto& gv = *gn->data;
        if (gn->requires_grad) {
          auto& g = gn->g();
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < d; ++j) g[j] += n.grad[i * d + j] * xhat[i * d + j];
        }
        if (bn->requires_grad) {
          auto& g = bn->g();
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < d; ++j) g[j] += n.grad[i * d + j];
        }
        if (xn->requires_grad) {
          auto& g = xn->g();
          const T inv_d = T(1) / static_cast<T>(d);
          for (std::size_t i = 0; i < r; ++i) {
            T s1 = T(0), s2 = T(0);
            for (std::size_t j = 0; j < d; ++j) {
              const T dy = n.grad[i * d + j] * gv[j];
              s1 += dy;
              s2 += dy * xhat[i * d + j];
            }
            for (std::size_t j = 0; j < d; ++j) {
              const T dy = n.grad[i * d + j] * gv[j];
              g[i * d + j] += inv_std[i] * (dy - inv_d * s1 - xhat[i * d + j] * inv_d * s2);
            }
          }
        }
      });
}

// Residual add followed by layer normalization.
template <class T>
Tensor<T> add_norm(const Tensor<T>& residual, const Tensor<T>& branch, const Tensor<T>& gain,
                   const Tensor<T>& bias) {
  detail::require_same_shape("add_norm", residual.shape(), branch.shape());
  return layer_norm(add(residual, branch), gain, bias);
}

// Mean binary cross entropy. `pred` is clamped to [eps, 1 - eps]; targets may
// be fractional. With `weights`, the mean is taken as sum(w * l) / sum(w), so
// zero-weight entries contribute nothing and receive no gradient.
template <class T>
Tensor<T> bce(const Tensor<T>& pred, std::span<const T> target,
              std::span<const T> weights = {}) {
  constexpr T eps = T(1e-7);
  if (target.size() != pred.numel())
    throw DimensionError("bce: target length " + std::to_string(target.size()) +
                         " does not match prediction " + shape_str(pred.shape()));
  if (!weights.empty() && weights.size() != pred.numel())
    throw DimensionError("bce: weight length does not match prediction " + shape_str(pred.shape()));
  std::vector<T> t(target.begin(), target.end());
  std::vector<T> w = weights.empty() ? std::vector<T>(t.size(), T(1))
                                     : std::vector<T>(weights.begin(), weights.end());
  T wsum = T(0);
  for (T v : w) wsum += v;
  const T norm = wsum > T(0) ? T(1) / wsum : T(0);
  auto p = pred.data();
  T loss = T(0);
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (w[i] == T(0)) continue;
    const T q = std::clamp(p[i], eps, T(1) - eps);
    loss -= w[i] * (t[i] * std::log(q) + (T(1) - t[i]) * std::log(T(1) - q));
  }
  loss *= norm;
  auto pn = pred.node();
  return detail::make_result<T>({}, {loss}, {pred},
                                [pn, t = std::move(t), w = std::move(w), norm](Node<T>& n) {
                                  auto& g = pn->g();
                                  const auto& p = *pn->data;
                                  for (std::size_t i = 0; i < g.size(); ++i) {
                                    if (w[i] == T(0)) continue;
                                    if (p[i] < eps || p[i] > T(1) - eps) continue;
                                    const T q = p[i];
                                    g[i] += n.grad[0] * norm * w[i] *
                                            (-(t[i] / q) + (T(1) - t[i]) / (T(1) - q));
                                  }
                                });
}

// ---------------------------------------------------------------------------
// Shape manipulation

// Reinterprets the element order under a new shape; storage is shared.
template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  auto out = Tensor<T>::shared_leaf(std::move(shape), a.storage(), false);
  if (a.requires_grad()) {
    auto& n = *out.node();
    n.requires_grad = true;
    n.parents.push_back(a.node());
    auto an = a.node();
    n.backward = [an](Node<T>& nd) {
      auto& g = an->g();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += nd.grad[i];
    };
  }
  return out;
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  Shape s = parts[0].shape();
  if (axis >= s.size()) throw DimensionError("concat: axis out of range for " + shape_str(s));
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape q = p.shape();
    if (q.size() != s.size())
      throw DimensionError("concat: rank mismatch " + shape_str(s) + " vs " + shape_str(q));
    for (std::size_t i = 0; i < s.size(); ++i)
      if (i != axis && q[i] != s[i])
        throw DimensionError("concat: shape mismatch " + shape_str(s) + " vs " + shape_str(q));
    total += q[axis];
  }
  s[axis] = total;
  auto [outer, len, inner] = detail::split_axis(s, axis);
  (void)len;
  std::vector<T> out(shape_numel(s));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t pl = p.dim(axis);
    auto x = p.data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(o * pl * inner), pl * inner,
                  out.begin() + static_cast<std::ptrdiff_t>((o * total + off) * inner));
    off += pl;
  }
  std::vector<std::shared_ptr<Node<T>>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return detail::make_result<T>(
      s, std::move(out), parts,
      [nodes, offsets, axis, outer = outer, inner = inner, total](Node<T>& n) {
        for (std::size_t k = 0; k < nodes.size(); ++k) {
          auto& p = *nodes[k];
          if (!p.requires_grad) continue;
          auto& g = p.g();
          const std::size_t pl = p.shape[axis];
          for (std::size_t o = 0; o < outer; ++o) {
            const T* src = n.grad.data() + (o * total + offsets[k]) * inner;
            T* dst = g.data() + o * pl * inner;
            for (std::size_t i = 0; i < pl * inner; ++i) dst[i] += src[i];
          }
        }
      });
}

// Contiguous range [start, start + len) along `axis`.
template <class T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t start, std::size_t len) {
  if (axis >= a.rank() || start + len > a.dim(axis))
    throw DimensionError("slice: range out of bounds for " + shape_str(a.shape()));
  auto [outer, full, inner] = detail::split_axis(a.shape(), axis);
  Shape s = a.shape();
  s[axis] = len;
  std::vector<T> out(shape_numel(s));
  auto x = a.data();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(x.begin() + static_cast<std::ptrdiff_t>((o * full + start) * inner), len * inner,
                out.begin() + static_cast<std::ptrdiff_t>(o * len * inner));
  auto an = a.node();
  return detail::make_result<T>(
      s, std::move(out), {a},
      [an, start, len, outer = outer, full = full, inner = inner](Node<T>& n) {
        auto& g = an->g();
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < len * inner; ++i)
            g[(o * full + start) * inner + i] += n.grad[o * len * inner + i];
      });
}

// Selects rows of an [n x d] tensor; repeated indices accumulate gradient.
template <class T>
Tensor<T> gather_rows(const Tensor<T>& a, std::vector<std::size_t> idx) {
  detail::require_rank("gather_rows", a.shape(), 2);
  const std::size_t d = a.dim(1);
  for (auto i : idx)
    if (i >= a.dim(0))
      throw DimensionError("gather_rows: index " + std::to_string(i) + " out of range for " +
                           shape_str(a.shape()));
  std::vector<T> out(idx.size() * d);
  auto x = a.data();
  for (std::size_t r = 0; r < idx.size(); ++r)
    std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(idx[r] * d), d,
                out.begin() + static_cast<std::ptrdiff_t>(r * d));
  auto an = a.node();
  const std::size_t m = idx.size();
  return detail::make_result<T>({m, d}, std::move(out), {a},
                                [an, idx = std::move(idx), d](Node<T>& n) {
                                  auto& g = an->g();
                                  for (std::size_t r = 0; r < idx.size(); ++r)
                                    for (std::size_t j = 0; j < d; ++j)
                                      g[idx[r] * d + j] += n.grad[r * d + j];
                                });
}

// ---------------------------------------------------------------------------
// Spatial ops on H x W x C maps

// 2-D convolution with zero padding (k - 1) / 2. Kernel layout k x k x Cin x Cout.
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias,
                 std::size_t stride = 1) {
  detail::require_rank("conv2d", x.shape(), 3);
  detail::require_rank("conv2d kernel", kernel.shape(), 4);
  const std::size_t H = x.dim(0), W = x.dim(1), Ci = x.dim(2);
  const std::size_t k = kernel.dim(0), Co = kernel.dim(3);
  if (kernel.dim(1) != k || kernel.dim(2) != Ci || bias.numel() != Co || k % 2 == 0 ||
      (stride != 1 && stride != 2))
    throw DimensionError("conv2d: input " + shape_str(x.shape()) + " incompatible with kernel " +
                         shape_str(kernel.shape()) + " / bias " + shape_str(bias.shape()));
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
  const std::size_t Ho = (H - 1) / stride + 1, Wo = (W - 1) / stride + 1;
  const std::size_t K = k * k * Ci;
  const bool pointwise = (k == 1 && stride == 1);

  // im2col; a 1x1 stride-1 conv reads the input directly.
  std::shared_ptr<std::vector<T>> cols;
  if (pointwise) {
    cols = x.storage();
  } else {
    cols = std::make_shared<std::vector<T>>(Ho * Wo * K, T(0));
    auto xv = x.data();
    for (std::size_t oy = 0; oy < Ho; ++oy)
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        T* row = cols->data() + (oy * Wo + ox) * K;
        for (std::size_t ky = 0; ky < k; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
          for (std::size_t kx = 0; kx < k; ++kx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - pad;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
            std::copy_n(xv.data() + (static_cast<std::size_t>(iy) * W + static_cast<std::size_t>(ix)) * Ci,
                        Ci, row + (ky * k + kx) * Ci);
          }
        }
      }
  }
  std::vector<T> out(Ho * Wo * Co);
  detail::MapMat<T> O(out.data(), Ho * Wo, Co);
  O.noalias() = detail::CMapMat<T>(cols->data(), Ho * Wo, K) *
                detail::CMapMat<T>(kernel.data().data(), K, Co);
  O.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.data().data(), Co);

  auto xn = x.node(), kn = kernel.node(), bn = bias.node();
  return detail::make_result<T>(
      {Ho, Wo, Co}, std::move(out), {x, kernel, bias},
      [=](Node<T>& n) {
        detail::CMapMat<T> G(n.grad.data(), Ho * Wo, Co);
        if (kn->requires_grad)
          detail::MapMat<T>(kn->g().data(), K, Co).noalias() +=
              detail::CMapMat<T>(cols->data(), Ho * Wo, K).transpose() * G;
        if (bn->requires_grad) {
          auto& g = bn->g();
          for (std::size_t r = 0; r < Ho * Wo; ++r)
            for (std::size_t c = 0; c < Co; ++c) g[c] += n.grad[r * Co + c];
        }
        if (xn->requires_grad) {
          auto& gx = xn->g();
          if (pointwise) {
            detail::MapMat<T>(gx.data(), H * W, Ci).noalias() +=
                G * detail::CMapMat<T>(kn->data->data(), K, Co).transpose();
            return;
          }
          std::vector<T> dcols(Ho * Wo * K);
          detail::MapMat<T>(dcols.data(), Ho * Wo, K).noalias() =
              G * detail::CMapMat<T>(kn->data->data(), K, Co).transpose();
          for (std::size_t oy = 0; oy < Ho; ++oy)
            for (std::size_t ox = 0; ox < Wo; ++ox) {
              const T* row = dcols.data() + (oy * Wo + ox) * K;
              for (std::size_t ky = 0; ky < k; ++ky) {
                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - pad;
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                for (std::size_t kx = 0; kx < k; ++kx) {
                  const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - pad;
                  if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                  T* dst = gx.data() + (static_cast<std::size_t>(iy) * W + static_cast<std::size_t>(ix)) * Ci;
                  const T* src = row + (ky * k + kx) * Ci;
                  for (std::size_t c = 0; c < Ci; ++c) dst[c] += src[c];
                }
              }
            }
        }
      });
}

template <class T>
Tensor<T> upsample2x_nearest(const Tensor<T>& x) {
  detail::require_rank("upsample2x_nearest", x.shape(), 3);
  const std::size_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
  std::vector<T> out(4 * H * W * C);
  auto xv = x.data();
  for (std::size_t y = 0; y < 2 * H; ++y)
    for (std::size_t xx = 0; xx < 2 * W; ++xx)
      std::copy_n(xv.data() + ((y / 2) * W + xx / 2) * C, C, out.data() + (y * 2 * W + xx) * C);
  auto xn = x.node();
  return detail::make_result<T>({2 * H, 2 * W, C}, std::move(out), {x}, [xn, H, W, C](Node<T>& n) {
    auto& g = xn->g();
    for (std::size_t y = 0; y < 2 * H; ++y)
      for (std::size_t xx = 0; xx < 2 * W; ++xx) {
        const T* src = n.grad.data() + (y * 2 * W + xx) * C;
        T* dst = g.data() + ((y / 2) * W + xx / 2) * C;
        for (std::size_t c = 0; c < C; ++c) dst[c] += src[c];
      }
  });
}

// Bilinear lookup of an H x W x C map at continuous pixel coordinates
// (x = column, y = row, texel centers on integers). Points are an [N x 2]
// tensor; texels outside the map read as zero. Differentiable with respect to
// both the map and the coordinates.
template <class T>
Tensor<T> bilinear_sample(const Tensor<T>& map, const Tensor<T>& points) {
  detail::require_rank("bilinear_sample", map.shape(), 3);
  if (points.rank() != 2 || points.dim(1) != 2)
    throw DimensionError("bilinear_sample: points must be [N x 2], got " + shape_str(points.shape()));
  const std::size_t H = map.dim(0), W = map.dim(1), C = map.dim(2), N = points.dim(0);
  std::vector<T> out(N * C, T(0));
  auto mv = map.data(), pv = points.data();
  auto texel = [&](std::ptrdiff_t yy, std::ptrdiff_t xx) -> const T* {
    if (yy < 0 || xx < 0 || yy >= static_cast<std::ptrdiff_t>(H) || xx >= static_cast<std::ptrdiff_t>(W))
      return nullptr;
    return mv.data() + (static_cast<std::size_t>(yy) * W + static_cast<std::size_t>(xx)) * C;
  };
  for (std::size_t n = 0; n < N; ++n) {
    const T px = pv[2 * n], py = pv[2 * n + 1];
    if (!std::isfinite(px) || !std::isfinite(py)) continue;
    const T fx = std::floor(px), fy = std::floor(py);
    const T ax = px - fx, ay = py - fy;
    const auto x0 = static_cast<std::ptrdiff_t>(fx), y0 = static_cast<std::ptrdiff_t>(fy);
    const T w[4] = {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay};
    const T* t[4] = {texel(y0, x0), texel(y0, x0 + 1), texel(y0 + 1, x0), texel(y0 + 1, x0 + 1)};
    T* o = out.data() + n * C;
    for (int q = 0; q < 4; ++q)
      if (t[q])
        for (std::size_t c = 0; c < C; ++c) o[c] += w[q] * t[q][c];
  }
  auto mn = map.node(), pn = points.node();
  return detail::make_result<T>({N, C}, std::move(out), {map, points}, [mn, pn, H, W, C, N](Node<T>& nd) {
    const auto& mv = *mn->data;
    const auto& pv = *pn->data;
    T* gm = mn->requires_grad ? mn->g().data() : nullptr;
    T* gp = pn->requires_grad ? pn->g().data() : nullptr;
    for (std::size_t n = 0; n < N; ++n) {
      const T px = pv[2 * n], py = pv[2 * n + 1];
      if (!std::isfinite(px) || !std::isfinite(py)) continue;
      const T fx = std::floor(px), fy = std::floor(py);
      const T ax = px - fx, ay = py - fy;
      const auto x0 = static_cast<std::ptrdiff_t>(fx), y0 = static_cast<std::ptrdiff_t>(fy);
      const std::ptrdiff_t ys[4] = {y0, y0, y0 + 1, y0 + 1};
      const std::ptrdiff_t xs[4] = {x0, x0 + 1, x0, x0 + 1};
      const T w[4] = {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay};
      // d w / d ax and d w / d ay
      const T wx[4] = {-(1 - ay), (1 - ay), -ay, ay};
      const T wy[4] = {-(1 - ax), -ax, (1 - ax), ax};
      const T* go = nd.grad.data() + n * C;
      T dx = T(0), dy = T(0);
      for (int q = 0; q < 4; ++q) {
        if (ys[q] < 0 || xs[q] < 0 || ys[q] >= static_cast<std::ptrdiff_t>(H) ||
            xs[q] >= static_cast<std::ptrdiff_t>(W))
          continue;
        const std::size_t base = (static_cast<std::size_t>(ys[q]) * W + static_cast<std::size_t>(xs[q])) * C;
        if (gm)
          for (std::size_t c = 0; c < C; ++c) gm[base + c] += w[q] * go[c];
        if (gp) {
          T dot = T(0);
          for (std::size_t c = 0; c < C; ++c) dot += go[c] * mv[base + c];
          dx += wx[q] * dot;
          dy += wy[q] * dot;
        }
      }
      if (gp) {
        gp[2 * n] += dx;
        gp[2 * n + 1] += dy;
      }
    }
  });
}

// out[n] = sum_g weights[n][g] * values[n * G + g]; values [N*G x C], weights [N x G].
template <class T>
Tensor<T> weighted_group_sum(const Tensor<T>& values, const Tensor<T>& weights) {
  detail::require_rank("weighted_group_sum", values.shape(), 2);
  detail::require_rank("weighted_group_sum weights", weights.shape(), 2);
  const std::size_t N = weights.dim(0), G = weights.dim(1), C = values.dim(1);
  if (values.dim(0) != N * G)
    throw DimensionError("weighted_group_sum: values " + shape_str(values.shape()) +
                         " do not match weights " + shape_str(weights.shape()));
  std::vector<T> out(N * C, T(0));
  auto v = values.data(), w = weights.data();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t g = 0; g < G; ++g) {
      const T a = w[n * G + g];
      const T* src = v.data() + (n * G + g) * C;
      T* dst = out.data() + n * C;
      for (std::size_t c = 0; c < C; ++c) dst[c] += a * src[c];
    }
  auto vn = values.node(), wn = weights.node();
  return detail::make_result<T>({N, C}, std::move(out), {values, weights}, [vn, wn, N, G, C](Node<T>& nd) {
    const auto& v = *vn->data;
    const auto& w = *wn->data;
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t g = 0; g < G; ++g) {
        const T* go = nd.grad.data() + n * C;
        if (vn->requires_grad) {
          T* dst = vn->g().data() + (n * G + g) * C;
          for (std::size_t c = 0; c < C; ++c) dst[c] += w[n * G + g] * go[c];
        }
        if (wn->requires_grad) {
          const T* src = v.data() + (n * G + g) * C;
          T dot = T(0);
          for (std::size_t c = 0; c < C; ++c) dot += go[c] * src[c];
          wn->g()[n * G + g] += dot;
        }
      }
  });
}

}  // namespace cornerformer
