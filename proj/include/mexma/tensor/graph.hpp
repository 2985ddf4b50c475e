#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mexma/tensor/shape.hpp"

namespace mexma::tensor {

// Owned dense values with a shape; the storage type for parameters and optimizer state.
template <typename T>
struct Array {
  Shape shape;
  std::vector<T> values;

  Array() = default;
  Array(Shape s, std::vector<T> v) : shape(std::move(s)), values(std::move(v)) {
    if (numel(shape) != values.size())
      throw ShapeError("array", "value count " + std::to_string(values.size()) +
                                    " does not match shape " + to_string(shape));
  }
  static Array zeros(Shape s) {
    const auto n = numel(s);
    return Array(std::move(s), std::vector<T>(n, T(0)));
  }
  static Array filled(Shape s, T value) {
    const auto n = numel(s);
    return Array(std::move(s), std::vector<T>(n, value));
  }

  std::size_t size() const { return values.size(); }
  bool operator==(const Array&) const = default;
};

template <typename U, typename T>
Array<U> cast(const Array<T>& a) {
  return Array<U>(a.shape, std::vector<U>(a.values.begin(), a.values.end()));
}

class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

using NodeId = std::size_t;

template <typename T>
class Graph;

// Handle to one node of a Graph. Cheap to copy; valid while the graph lives.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  bool attached() const { return graph_ != nullptr; }
  Graph<T>* graph() const { return graph_; }
  NodeId id() const { return id_; }

  const Shape& shape() const { return graph_->node(id_).shape; }
  std::span<const T> values() const { return graph_->node(id_).value; }
  std::size_t numel() const { return graph_->node(id_).value.size(); }
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(int axis) const { return shape()[normalize_axis("dim", axis, rank())]; }
  bool requires_grad() const { return graph_->node(id_).requires_grad; }
  const std::string& primitive() const { return graph_->node(id_).primitive; }

  T item() const {
    if (numel() != 1) throw ShapeError("item", "[] (one element)", shape());
    return values()[0];
  }
  Array<T> to_array() const { return Array<T>(shape(), std::vector<T>(values().begin(), values().end())); }

 private:
  friend class Graph<T>;
  Tensor(Graph<T>* g, NodeId id) : graph_(g), id_(id) {}

  Graph<T>* graph_ = nullptr;
  NodeId id_ = 0;
};

// Tape of primitive applications in topological order. One graph per training step.
template <typename T>
class Graph {
 public:
  // Receives the graph, the node's own id and its output gradient; accumulates into inputs.
  using BackwardFn = std::function<void(Graph&, NodeId, std::span<const T>)>;

  struct Node {
    std::string primitive;
    Shape shape;
    std::vector<T> value;
    std::vector<NodeId> inputs;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Tensor<T> constant(Shape shape, std::vector<T> values) {
    return leaf("constant", std::move(shape), std::move(values), false);
  }
  Tensor<T> constant(const Array<T>& a) { return constant(a.shape, a.values); }

  // Leaf whose gradient is collected by backward().
  Tensor<T> variable(Shape shape, std::vector<T> values) {
    return leaf("variable", std::move(shape), std::move(values), true);
  }
  Tensor<T> variable(const Array<T>& a) { return variable(a.shape, a.values); }

  // Appends a primitive application. The closure is dropped when no input needs a gradient.
  Tensor<T> record(std::string primitive, Shape shape, std::vector<T> value,
                   std::vector<NodeId> inputs, BackwardFn backward) {
    if (numel(shape) != value.size())
      throw ShapeError(primitive, "output value count does not match " + to_string(shape));
    bool needs = false;
    for (auto in : inputs) {
      if (in >= nodes_.size()) throw GraphError(primitive + ": input node does not exist");
      needs = needs || nodes_[in].requires_grad;
    }
    Node n{std::move(primitive), std::move(shape), std::move(value), std::move(inputs), needs,
           needs ? std::move(backward) : BackwardFn{}};
    nodes_.push_back(std::move(n));
    return Tensor<T>(this, nodes_.size() - 1);
  }

  const Node& node(NodeId id) const { return nodes_.at(id); }
  std::size_t size() const { return nodes_.size(); }
  std::span<const T> value(NodeId id) const { return nodes_.at(id).value; }
  bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }

  // Reverse sweep from a scalar loss. Replaces any gradients from an earlier call.
  void backward(const Tensor<T>& loss) {
    if (loss.graph() != this) throw GraphError("backward: loss is not attached to this graph");
    const Node& root = nodes_.at(loss.id());
    if (root.value.size() != 1)
      throw GraphError("backward: loss must be a scalar, got shape " + to_string(root.shape));
    grads_.assign(nodes_.size(), {});
    std::vector<char> reachable(nodes_.size(), 0);
    reachable[loss.id()] = 1;
    if (!root.requires_grad) return;
    grads_[loss.id()] = {T(1)};
    for (NodeId id = loss.id() + 1; id-- > 0;) {
      if (!reachable[id]) continue;
      const Node& n = nodes_[id];
      if (!n.requires_grad) continue;
      for (auto in : n.inputs) reachable[in] = 1;
      if (grads_[id].empty()) grads_[id].assign(n.value.size(), T(0));
      if (n.backward) n.backward(*this, id, grads_[id]);
    }
  }

  bool has_grad(const Tensor<T>& t) const {
    return t.graph() == this && t.id() < grads_.size() && !grads_[t.id()].empty();
  }

  // Gradient of the last backward() loss w.r.t. `t`; zeros when no gradient reached it.
  Array<T> grad(const Tensor<T>& t) const {
    if (t.graph() != this) throw GraphError("grad: tensor belongs to a different graph");
    if (!has_grad(t)) return Array<T>::zeros(t.shape());
    return Array<T>(t.shape(), grads_[t.id()]);
  }

  // Gradient slot of an input, allocated on first use; for primitives' backward closures.
  std::span<T> grad_slot(NodeId id) {
    auto& g = grads_[id];
    if (g.empty()) g.assign(nodes_[id].value.size(), T(0));
    return g;
  }

  void accumulate(NodeId id, std::span<const T> delta) {
    if (!nodes_[id].requires_grad) return;
    auto& g = grads_[id];
    if (g.empty()) {
      g.assign(delta.begin(), delta.end());
      return;
    }
    auto slot = std::span<T>(g);
    for (std::size_t i = 0; i < slot.size(); ++i) slot[i] += delta[i];
  }

 private:
  Tensor<T> leaf(const char* kind, Shape shape, std::vector<T> values, bool requires_grad) {
    if (numel(shape) != values.size())
      throw ShapeError(kind, "value count " + std::to_string(values.size()) +
                                 " does not match shape " + to_string(shape));
    nodes_.push_back(Node{kind, std::move(shape), std::move(values), {}, requires_grad, {}});
    return Tensor<T>(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  std::vector<std::vector<T>> grads_;
};

}  // namespace mexma::tensor
