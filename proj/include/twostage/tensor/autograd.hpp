// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <optional>
#include <unordered_map>
#include <utility>
#include <vector>

#include "twostage/tensor/rng.hpp"
#include "twostage/tensor/tensor.hpp"

namespace twostage::tensor {

template <typename T>
class Graph;

/// Handle to a node on a Graph's tape.
template <typename T>
struct Var {
  Graph<T>* graph = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return graph->value(id); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return graph->requires_grad(id); }
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so the tape is
/// already topologically sorted; backward() walks it once in reverse.
template <typename T>
class Graph {
 public:
  using Backward = std::function<void(Graph&, std::size_t)>;

  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    Backward backward;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Training mode enables dropout; it requires an rng.
  void set_training(bool training, Rng* rng = nullptr) {
    training_ = training;
    rng_ = rng;
  }
  bool training() const noexcept { return training_; }
  Rng& rng() {
    if (!rng_) throw Error("graph in training mode has no rng");
    return *rng_;
  }

  Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

  Var<T> leaf(Tensor<T> value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  /// One leaf per key: repeated uses of the same storage accumulate into one gradient.
  Var<T> keyed_leaf(const void* key, const Tensor<T>& value, bool requires_grad) {
    if (auto it = keyed_.find(key); it != keyed_.end()) return {this, it->second};
    Var<T> v = leaf(value, requires_grad);
    keyed_.emplace(key, v.id);
    return v;
  }

  std::optional<std::size_t> find_keyed(const void* key) const {
    if (auto it = keyed_.find(key); it != keyed_.end()) return it->second;
    return std::nullopt;
  }

  /// Appends an op result. The backward closure is dropped when no input needs a gradient.
  Var<T> push(Tensor<T> value, std::vector<std::size_t> inputs, Backward backward) {
    Node n;
    n.value = std::move(value);
    for (std::size_t i : inputs) n.requires_grad = n.requires_grad || nodes_[i].requires_grad;
    if (n.requires_grad) {
      n.inputs = std::move(inputs);
      n.backward = std::move(backward);
    }
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradient accumulator for a node; allocated as zeros on first access.
  Tensor<T>& grad_ref(std::size_t id) {
    Node& n = nodes_[id];
    if (!has_grad(n)) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }

  /// nullptr when no gradient reached the node.
  const Tensor<T>* grad(std::size_t id) const {
    const Node& n = nodes_[id];
    if (!n.requires_grad || !has_grad(n)) return nullptr;
    return &n.grad;
  }

  void backward(Var<T> loss) {
    if (loss.graph != this) throw Error("backward on a variable from another graph");
    if (value(loss.id).size() != 1) {
      throw DimensionError("backward requires a scalar loss, got shape " + shape_str(value(loss.id).shape()));
    }
    if (!nodes_[loss.id].requires_grad) return;
    grad_ref(loss.id).fill(T{1});
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || !n.backward || !has_grad(n)) continue;
      n.backward(*this, i);
    }
  }

 private:
  static bool has_grad(const Node& n) {
    return n.grad.size() == n.value.size() && n.grad.shape() == n.value.shape() && !n.grad.values().empty();
  }

  std::deque<Node> nodes_;
  std::unordered_map<const void*, std::size_t> keyed_;
  bool training_ = false;
  Rng* rng_ = nullptr;
};

}  // namespace twostage::tensor
