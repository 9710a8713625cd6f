// SPDX-License-Identifier: Apache-2.0
#pragma once

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

#include "blockspec/core/error.hpp"

namespace blockspec {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? ", " : "") << s[i];
  os << ')';
  return os.str();
}

namespace detail {

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backward;

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

/// Disables tape recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Dense row-major tensor with optional participation in the gradient tape.
///
/// A tensor is a shared handle: copies alias the same storage and tape node.
/// Use `clone()` for an independent copy.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;
  using NodeT = detail::Node<T>;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, T fill = T(0)) : node_(std::make_shared<NodeT>()) {
    node_->data.assign(shape_numel(shape), fill);
    node_->shape = std::move(shape);
  }

  BasicTensor(Shape shape, std::vector<T> data) : node_(std::make_shared<NodeT>()) {
    BLOCKSPEC_CHECK(shape_numel(shape) == data.size(), DimensionError,
                    "tensor data length " + std::to_string(data.size()) +
                        " does not match shape " + shape_str(shape));
    node_->shape = std::move(shape);
    node_->data = std::move(data);
  }

  static BasicTensor scalar(T v) { return BasicTensor(Shape{1}, std::vector<T>{v}); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t ndim() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }
  std::size_t rows() const { return node_->shape.at(0); }
  std::size_t cols() const { return node_->shape.size() > 1 ? node_->shape.back() : 1; }

  std::span<T> data() { return node_->data; }
  std::span<const T> data() const { return node_->data; }
  T* ptr() { return node_->data.data(); }
  const T* ptr() const { return node_->data.data(); }
  T item() const {
    BLOCKSPEC_CHECK(numel() == 1, DimensionError, "item() on non-scalar " + shape_str(shape()));
    return node_->data[0];
  }
  T& at(std::size_t r, std::size_t c) { return node_->data[r * cols() + c]; }
  T at(std::size_t r, std::size_t c) const { return node_->data[r * cols() + c]; }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  BasicTensor& set_requires_grad(bool on) {
    BLOCKSPEC_CHECK(node_->parents.empty() || on, ContractError,
                    "cannot detach an interior tape node in place; use clone()");
    node_->requires_grad = on;
    return *this;
  }
  bool has_grad() const { return node_ && !node_->grad.empty(); }
  std::span<T> grad() { return node_->grad; }
  std::span<const T> grad() const { return node_->grad; }
  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), T(0)); }
  void clear_grad() { node_->grad.clear(); node_->grad.shrink_to_fit(); }

  /// Fresh leaf tensor with the same contents and no tape history.
  BasicTensor clone() const { return BasicTensor(shape(), node_->data); }

  /// Same storage interpreted with another shape (leaf/no-grad tensors only).
  BasicTensor reshaped(Shape s) const {
    BLOCKSPEC_CHECK(shape_numel(s) == numel(), DimensionError,
                    "reshape " + shape_str(shape()) + " -> " + shape_str(s));
    BasicTensor out(std::move(s), node_->data);
    return out;
  }

  NodeT* node() const { return node_.get(); }
  const std::shared_ptr<NodeT>& node_ptr() const { return node_; }

  /// Builds an op result; records the tape edge only when grad mode is on
  /// and some parent requires grad.
  template <typename BackwardFactory>
  static BasicTensor make_result(Shape shape, std::vector<T> data,
                                 std::initializer_list<BasicTensor> parents,
                                 BackwardFactory&& factory) {
    return make_result(std::move(shape), std::move(data),
                       std::vector<BasicTensor>(parents), std::forward<BackwardFactory>(factory));
  }

  template <typename BackwardFactory>
  static BasicTensor make_result(Shape shape, std::vector<T> data,
                                 const std::vector<BasicTensor>& parents,
                                 BackwardFactory&& factory) {
    BasicTensor out(std::move(shape), std::move(data));
    if (!grad_enabled()) return out;
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (!any) return out;
    out.node_->requires_grad = true;
    for (const auto& p : parents)
      if (p.node_) out.node_->parents.push_back(p.node_);
    // The closure receives the output node; it lives inside that node, so a
    // raw pointer is valid whenever it runs.
    out.node_->backward = factory(out.node_.get());
    return out;
  }

 private:
  std::shared_ptr<NodeT> node_;
};

using Tensor = BasicTensor<float>;
using TensorF64 = BasicTensor<double>;

/// Populates d(loss)/d(leaf) for every leaf reachable from `loss` that
/// requires grad. Gradients accumulate into existing buffers.
template <typename T>
void backward(const BasicTensor<T>& loss) {
  BLOCKSPEC_CHECK(loss.defined() && loss.numel() == 1, ContractError,
                  "backward() requires a scalar loss");
  BLOCKSPEC_CHECK(loss.requires_grad() && loss.node()->backward, ContractError,
                  "backward() on a tensor with no recorded tape");
  using NodeT = detail::Node<T>;
  std::vector<NodeT*> order;
  std::unordered_set<NodeT*> seen;
  std::vector<std::pair<NodeT*, std::size_t>> stack{{loss.node(), 0}};
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      NodeT* p = n->parents[idx++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  loss.node()->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT* n = *it;
    if (n->backward && !n->grad.empty()) n->backward();
  }
}

}  // namespace blockspec
