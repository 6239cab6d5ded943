#pragma once

#include <functional>
#include <initializer_list>
#include <string>
#include <vector>

#include "octaquant/nn/tensor.hpp"

namespace octaquant::nn {

/// Handle to a value recorded on a Tape.
struct Var {
  int id = -1;
  bool valid() const noexcept { return id >= 0; }
};

/// Reverse-mode gradient tape. Ops append nodes in execution order;
/// backward() walks them in reverse. A tape is consumed by backward() and
/// must be clear()ed before the next forward pass.
template <typename T>
class Tape {
 public:
  using TensorT = BasicTensor<T>;
  /// Receives the gradient flowing into a node's output and accumulates
  /// into its inputs through Tape::grad_sink.
  using Backprop = std::function<void(Tape&, const TensorT& output_grad)>;

  /// Leaf that never receives a gradient.
  Var constant(TensorT value) { return push(std::move(value), false, nullptr); }

  /// Leaf whose gradient is accumulated by backward().
  Var variable(TensorT value) { return push(std::move(value), true, nullptr); }

  /// Records the output of an op. The node requires a gradient when any
  /// input does; `backprop` is dropped otherwise.
  Var record(TensorT value, std::initializer_list<Var> inputs, Backprop backprop) {
    bool needs = false;
    for (Var v : inputs) {
      if (v.valid() && node(v).requires_grad) needs = true;
    }
    return push(std::move(value), needs, needs ? std::move(backprop) : nullptr);
  }

  const TensorT& value(Var v) const { return node(v).value; }
  bool requires_grad(Var v) const { return node(v).requires_grad; }

  /// Gradient of the last backward() with respect to `v`; zeros when no
  /// path reached it.
  const TensorT& grad(Var v) {
    Node& n = node(v);
    if (!n.requires_grad) throw Error("grad requested for a value that does not require gradients");
    ensure_grad(n);
    return n.grad;
  }

  /// Gradient buffer of an input inside a Backprop, or nullptr when the
  /// input does not require gradients.
  TensorT* grad_sink(Var v) {
    if (!v.valid()) return nullptr;
    Node& n = node(v);
    if (!n.requires_grad) return nullptr;
    ensure_grad(n);
    return &n.grad;
  }

  void backward(Var loss) {
    if (consumed_) throw Error("backward called twice on the same forward pass; clear() the tape and re-run forward");
    Node& root = node(loss);
    if (root.value.size() != 1) {
      throw ShapeError("backward needs a scalar loss, got shape " + to_string(root.value.shape()));
    }
    consumed_ = true;
    if (!root.requires_grad) return;
    ensure_grad(root);
    root.grad[0] = T{1};
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.backprop || n.grad.empty()) continue;
      // The callback may grow other nodes' grads but never reallocates nodes_.
      n.backprop(*this, n.grad);
    }
  }

  bool consumed() const noexcept { return consumed_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  void clear() {
    nodes_.clear();
    consumed_ = false;
  }

 private:
  struct Node {
    TensorT value;
    TensorT grad;
    bool requires_grad = false;
    Backprop backprop;
  };

  Var push(TensorT value, bool requires_grad, Backprop backprop) {
    if (consumed_) throw Error("tape already consumed by backward(); clear() it before recording");
    nodes_.push_back(Node{std::move(value), {}, requires_grad, std::move(backprop)});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  Node& node(Var v) {
    if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) throw Error("invalid tape handle");
    return nodes_[static_cast<std::size_t>(v.id)];
  }
  const Node& node(Var v) const {
    if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) throw Error("invalid tape handle");
    return nodes_[static_cast<std::size_t>(v.id)];
  }

  static void ensure_grad(Node& n) {
    if (n.grad.empty()) n.grad = TensorT(n.value.shape(), T{0});
  }

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

}  // namespace octaquant::nn
