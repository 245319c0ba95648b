// SPDX-License-Identifier: Apache-2.0
#pragma once

// Tape-based reverse-mode differentiation over dense NCHW tensors. A Graph
// records every operation applied to its Vars; backward() replays the tape
// in reverse and accumulates gradients. Graphs are single-use and
// single-threaded; concurrent callers each build their own.

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <unordered_map>
#include <vector>

#include "liso/kernels.hpp"
#include "liso/tensor.hpp"

namespace liso {

template <class T>
class Graph;

template <class T>
struct Var {
  Graph<T>* graph = nullptr;
  int id = -1;

  const Tensor<T>& value() const { return graph->value(*this); }
  const Shape& shape() const { return value().shape(); }
  bool valid() const { return graph != nullptr && id >= 0; }
};

/// A named trainable (or buffer) array plus its accumulated gradient.
template <class T>
struct ParamEntry {
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;

  void zero_grad() { grad = Tensor<T>::zeros(value.shape()); }
};

/// How batch-norm layers behave in a forward pass.
enum class NormMode {
  Train,        // batch statistics, running averages updated
  TrainFrozen,  // batch statistics, running averages untouched
  Eval,         // running averages
};

template <class T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, const Tensor<T>& out_value, const Tensor<T>& out_grad)>;

  /// With track_params=false every param() is bound as a constant, which
  /// is what inner gradient evaluations want.
  explicit Graph(bool track_params = true) : track_params_(track_params) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<T> constant(Tensor<T> v) { return push(std::move(v), false, nullptr); }
  Var<T> variable(Tensor<T> v) { return push(std::move(v), true, nullptr); }

  Var<T> param(ParamEntry<T>& entry) {
    auto it = param_ids_.find(&entry);
    if (it != param_ids_.end()) return Var<T>{this, it->second};
    Var<T> v = push(entry.value, track_params_ && entry.trainable, nullptr);
    param_ids_.emplace(&entry, v.id);
    return v;
  }

  /// Records an op output. The backward closure runs only if the output
  /// received a gradient and at least one input requires one.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn) {
    bool needs = false;
    for (const auto& in : inputs) needs = needs || nodes_[in.id]->requires_grad;
    return push(std::move(value), needs, needs ? std::move(fn) : nullptr);
  }
  Var<T> record(Tensor<T> value, const std::vector<Var<T>>& inputs, BackwardFn fn) {
    bool needs = false;
    for (const auto& in : inputs) needs = needs || nodes_[in.id]->requires_grad;
    return push(std::move(value), needs, needs ? std::move(fn) : nullptr);
  }

  const Tensor<T>& value(Var<T> v) const { return nodes_[v.id]->value; }
  bool requires_grad(Var<T> v) const { return nodes_[v.id]->requires_grad; }

  /// Gradient buffer for v, allocated on first use. Only call for Vars
  /// that require gradients.
  Tensor<T>& grad_buffer(Var<T> v) {
    auto& node = *nodes_[v.id];
    if (node.grad.empty() && !node.value.empty()) node.grad = Tensor<T>::zeros(node.value.shape());
    return node.grad;
  }

  /// Gradient of the last backward() root with respect to v (zeros if v
  /// did not influence it).
  Tensor<T> grad(Var<T> v) const {
    const auto& node = *nodes_[v.id];
    return node.grad.empty() ? Tensor<T>::zeros(node.value.shape()) : node.grad;
  }

  void backward(Var<T> root) {
    require(root.graph == this && value(root).size() == 1, ErrorCode::InvalidArgument,
            "backward needs a scalar root from this graph");
    if (!nodes_[root.id]->requires_grad) return;
    grad_buffer(root)[0] = T{1};
    for (int i = root.id; i >= 0; --i) {
      auto& node = *nodes_[i];
      if (node.backward && !node.grad.empty()) node.backward(*this, node.value, node.grad);
    }
  }

  /// Adds the gradients of all bound trainable params into their entries.
  void flush_param_grads() {
    for (auto& [entry, id] : param_ids_) {
      auto& node = *nodes_[id];
      if (!node.requires_grad || node.grad.empty()) continue;
      if (entry->grad.shape() != entry->value.shape()) entry->zero_grad();
      entry->grad += node.grad;
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var<T> push(Tensor<T> value, bool requires_grad, BackwardFn fn) {
    auto node = std::make_unique<Node>();
    node->value = std::move(value);
    node->requires_grad = requires_grad;
    node->backward = std::move(fn);
    nodes_.push_back(std::move(node));
    return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
  }

  bool track_params_;
  std::vector<std::unique_ptr<Node>> nodes_;
  std::unordered_map<ParamEntry<T>*, int> param_ids_;
};

}  // namespace liso
