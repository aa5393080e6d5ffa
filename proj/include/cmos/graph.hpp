#pragma once

#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "cmos/tensor.hpp"

namespace cmos {

template <Real T>
class Graph;

/// Handle to a value recorded on a Graph. Cheap to copy; valid while the graph lives.
template <Real T>
struct Var {
  Graph<T>* graph = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return graph->value(*this); }
  const Shape& shape() const { return value().shape(); }
};

/// Dynamic tape of executed operations. Rebuilt for every forward pass.
///
/// Nodes are appended in execution order, so every node's inputs precede it and a
/// single reverse sweep is a valid topological traversal. A graph is confined to one
/// thread; separate graphs share nothing.
template <Real T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, const Tensor<T>& out_grad)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<T> leaf(Tensor<T> value, bool requires_grad = true);
  Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

  /// Appends an operation result. The node requires grad iff any input does; the
  /// backward rule is dropped otherwise.
  Var<T> record(std::string op, Tensor<T> value, const std::vector<Var<T>>& inputs,
                BackwardFn backward);

  const Tensor<T>& value(Var<T> v) const { return node(v).value; }
  bool requires_grad(Var<T> v) const { return node(v).requires_grad; }
  const std::string& op_name(Var<T> v) const { return node(v).op; }

  /// Gradient accumulated by the last backward(); zeros when the node was unreached.
  Tensor<T> grad(Var<T> v) const;

  /// Mutable gradient accumulator for backward rules; allocated as zeros on first use.
  Tensor<T>& grad_buffer(Var<T> v);

  /// Seeds d loss/d loss = 1 and sweeps the tape in reverse. Grads from a previous
  /// call are cleared first.
  void backward(Var<T> loss);

  /// In checked mode every recorded value is tested for NaN/Inf.
  void set_checked(bool checked) { checked_ = checked; }
  bool checked() const { return checked_; }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    std::string op;
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  const Node& node(Var<T> v) const;
  Node& node(Var<T> v);

  std::deque<Node> nodes_;
  bool checked_ = false;
};

}  // namespace cmos
