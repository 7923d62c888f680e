#pragma once

// Reverse-mode autodiff substrate. A Tensor<T> is a shared handle to a node
// in a dynamically recorded op graph; ops (ops.hpp) append nodes, backward()
// walks the graph once in reverse topological order. T is float for training
// and double for the gradient-check mode.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "vitsr/errors.hpp"

namespace vitsr {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) {
    if (d <= 0) throw DimensionError("shape has non-positive dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ')';
  return os.str();
}

inline bool same_shape(const Shape& a, const Shape& b) { return a == b; }

namespace detail {

inline int& no_grad_depth() {
  thread_local int depth = 0;
  return depth;
}

// Fixed-order unrolled kernels; deterministic within a build and
// vectorizable without reassociation flags.
template <typename T>
inline T dot(const T* a, const T* b, std::size_t n) {
  T s0 = 0, s1 = 0, s2 = 0, s3 = 0, s4 = 0, s5 = 0, s6 = 0, s7 = 0;
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
    s4 += a[i + 4] * b[i + 4];
    s5 += a[i + 5] * b[i + 5];
    s6 += a[i + 6] * b[i + 6];
    s7 += a[i + 7] * b[i + 7];
  }
  T s = ((s0 + s1) + (s2 + s3)) + ((s4 + s5) + (s6 + s7));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

template <typename T>
inline void axpy(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace detail

inline bool grad_enabled() { return detail::no_grad_depth() == 0; }

// Scoped switch that disables graph recording (validation, inference).
struct NoGradGuard {
  NoGradGuard() { ++detail::no_grad_depth(); }
  ~NoGradGuard() { --detail::no_grad_depth(); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool needs_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void()> backprop;

  std::size_t numel() const { return value.size(); }

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

template <typename T>
class Tensor {
 public:
  using Node = TensorNode<T>;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : node_(std::make_shared<Node>()) {
    node_->value.assign(shape_numel(shape), fill);
    node_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<T> data) : node_(std::make_shared<Node>()) {
    if (shape_numel(shape) != data.size())
      throw DimensionError("data size " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
    node_->shape = std::move(shape);
    node_->value = std::move(data);
  }

  static Tensor scalar(T v) { return Tensor({1}, std::vector<T>{v}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
  std::size_t numel() const { return node_->value.size(); }

  const std::vector<T>& values() const { return node_->value; }
  std::vector<T>& values() { return node_->value; }
  const T* data() const { return node_->value.data(); }
  T* data() { return node_->value.data(); }

  T item() const {
    if (numel() != 1) throw ContractError("item() on tensor with numel " + std::to_string(numel()));
    return node_->value[0];
  }

  Tensor& set_requires_grad(bool b = true) {
    node_->requires_grad = b;
    node_->needs_grad = b;
    return *this;
  }
  bool requires_grad() const { return node_->requires_grad; }
  bool needs_grad() const { return node_ && node_->needs_grad; }

  bool has_grad() const { return node_ && !node_->grad.empty(); }
  const std::vector<T>& grad() const {
    if (!has_grad()) throw ContractError("tensor has no gradient");
    return node_->grad;
  }
  void zero_grad() {
    if (node_) node_->grad.assign(node_->value.size(), T(0));
  }
  void drop_grad() {
    if (node_) node_->grad.clear();
  }

  // Value copy detached from any recorded graph.
  Tensor detach() const {
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = node_->shape;
    t.node_->value = node_->value;
    return t;
  }

  bool all_finite() const {
    for (T v : node_->value)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  std::shared_ptr<Node>& node() { return node_; }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

namespace detail {

template <typename T>
void topo_collect(TensorNode<T>* root, std::vector<TensorNode<T>*>& order) {
  // Iterative post-order DFS over grad-needing nodes.
  std::unordered_set<TensorNode<T>*> seen;
  std::vector<std::pair<TensorNode<T>*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      TensorNode<T>* p = node->parents[idx].get();
      ++idx;
      if (p->needs_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
}

}  // namespace detail

// Reverse-mode sweep from a scalar loss. Gradients accumulate; callers are
// expected to zero parameter grads between steps.
template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ContractError("backward() requires a scalar loss");
  auto* root = loss.node().get();
  if (!root->needs_grad) return;
  std::vector<TensorNode<T>*> order;
  detail::topo_collect(root, order);
  root->ensure_grad();
  root->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode<T>* n = *it;
    if (n->backprop && !n->grad.empty()) n->backprop();
  }
}

}  // namespace vitsr
