#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "imagine/core/params.hpp"
#include "imagine/core/tensor.hpp"

namespace imagine {

/// Handle to a node on a Tape.
struct Var {
  int32_t id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode autodiff tape. Nodes are appended in evaluation order;
/// backward() walks them in reverse. Gradients are only materialized for
/// nodes flagged needs_grad, so frozen parameters cost nothing on the
/// backward pass. One backward() call per tape; reset() recycles storage.
template <typename T>
class Tape {
 public:
  Var constant(Tensor<T> v) { return emplace(std::move(v), false); }

  /// Differentiable leaf whose gradient can be read back after backward().
  Var input(Tensor<T> v) { return emplace(std::move(v), true); }

  /// Leaf bound to a parameter entry. If trainable, backward() accumulates
  /// into the entry's grad tensor; otherwise the value is a plain constant.
  Var param(ParamEntry<T>& e, bool trainable = true) {
    Node n;
    n.external = &e.value;
    n.needs_grad = trainable;
    n.sink = trainable ? &e : nullptr;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int32_t>(nodes_.size() - 1)};
  }

  Var emplace(Tensor<T> value, bool needs_grad) {
    Node n;
    n.owned = std::move(value);
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int32_t>(nodes_.size() - 1)};
  }

  void set_backward(Var v, std::function<void(Tape&)> fn) {
    nodes_[v.id].backward = std::move(fn);
  }

  const Tensor<T>& val(Var v) const {
    const Node& n = nodes_[v.id];
    return n.external ? *n.external : n.owned;
  }

  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }

  /// Gradient buffer for accumulation, allocated on first touch.
  Tensor<T>& grad_buffer(Var v) {
    Node& n = nodes_[v.id];
    if (n.grad.empty()) n.grad = Tensor<T>(val(v).shape());
    return n.grad;
  }

  /// Gradient of a node after backward(); zeros if it was never reached.
  const Tensor<T>& grad_of(Var v) {
    Node& n = nodes_[v.id];
    if (n.grad.empty()) n.grad = Tensor<T>(val(v).shape());
    return n.grad;
  }

  /// Seeds d(root)/d(root) = 1 and propagates to all reachable leaves.
  /// Trainable parameter leaves accumulate into their store entries.
  void backward(Var root) {
    IM_CHECK(val(root).numel() == 1, "backward root must be scalar");
    grad_buffer(root).fill(T(1));
    for (int32_t i = root.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.grad.empty()) continue;
      if (n.backward) n.backward(*this);
      if (n.sink) n.sink->grad.add_(n.grad);
    }
  }

  void reset() { nodes_.clear(); }
  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* external = nullptr;
    Tensor<T> grad;
    std::function<void(Tape&)> backward;
    ParamEntry<T>* sink = nullptr;
    bool needs_grad = false;
  };

  std::vector<Node> nodes_;
};

}  // namespace imagine
