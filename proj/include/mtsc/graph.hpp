#pragma once

#include <functional>
#include <memory>
#include <span>
#include <unordered_set>
#include <vector>

#include "mtsc/core.hpp"

namespace mtsc::ad {

/// One value in the backward graph. Nodes are owned either by a Graph (the
/// per-forward tape) or by a ParamStore (persistent parameters). `inputs`
/// point at other nodes; the tape is append-only, so the graph is acyclic.
template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // allocated lazily during backward
  bool requires_grad = false;
  std::vector<Node*> inputs;
  std::function<void(Node&)> backward;

  size_t size() const { return value.size(); }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

/// Lightweight non-owning handle to a Node.
template <typename T>
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(Node<T>* n) : node_(n) {}

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  size_t size() const { return node_->value.size(); }
  std::span<const T> value() const { return node_->value; }
  std::span<T> value_mut() { return node_->value; }
  std::span<const T> grad() const { return node_->grad; }
  Node<T>* node() const { return node_; }

  T scalar() const {
    check(size() == 1, "scalar() on tensor of shape ", shape_str(shape()));
    return node_->value[0];
  }

private:
  Node<T>* node_ = nullptr;
};

/// Tape of nodes for one forward/backward pass. Cleared (or destroyed) between
/// optimizer steps; parameters live outside and survive.
template <typename T>
class Graph {
public:
  Tensor<T> leaf(Shape shape, std::vector<T> data, bool requires_grad = false) {
    check(numel(shape) == data.size(), "leaf: shape ", shape_str(shape), " does not match data length ", data.size());
    auto node = std::make_unique<Node<T>>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    node->requires_grad = requires_grad;
    nodes_.push_back(std::move(node));
    return Tensor<T>(nodes_.back().get());
  }

  Tensor<T> zeros(Shape shape, bool requires_grad = false) {
    return leaf(std::move(shape), std::vector<T>(numel(shape), T(0)), requires_grad);
  }

  /// Creates an op output node. `backward` reads node.grad and accumulates
  /// into inputs' grad buffers (inputs are grad-allocated by run_backward).
  Tensor<T> make(Shape shape, std::vector<Node<T>*> inputs, std::function<void(Node<T>&)> backward) {
    auto node = std::make_unique<Node<T>>();
    node->shape = std::move(shape);
    node->value.assign(numel(node->shape), T(0));
    for (Node<T>* in : inputs)
      if (in->requires_grad) node->requires_grad = true;
    node->inputs = std::move(inputs);
    if (node->requires_grad) node->backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Tensor<T>(nodes_.back().get());
  }

  size_t node_count() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

private:
  std::vector<std::unique_ptr<Node<T>>> nodes_;
};

/// Runs reverse-mode accumulation from a scalar loss. Parameter grads are
/// accumulated (not reset); call ParamStore::zero_grad between steps.
template <typename T>
void backward(Tensor<T> loss) {
  check(loss.size() == 1, "backward: loss must be scalar, got ", shape_str(loss.shape()));
  if (!loss.node()->requires_grad) return;

  // Iterative post-order topo sort over grad-requiring nodes.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, size_t>> stack;
  stack.emplace_back(loss.node(), 0);
  visited.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next_input] = stack.back();
    bool descended = false;
    while (next_input < node->inputs.size()) {
      Node<T>* in = node->inputs[next_input++];
      if (in->requires_grad && !visited.count(in)) {
        visited.insert(in);
        stack.emplace_back(in, 0);
        descended = true;
        break;
      }
    }
    if (!descended && (stack.back().second >= stack.back().first->inputs.size())) {
      order.push_back(stack.back().first);
      stack.pop_back();
    }
  }

  for (Node<T>* node : order) node->ensure_grad();
  loss.node()->grad[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward) node->backward(*node);
  }
}

}  // namespace mtsc::ad
