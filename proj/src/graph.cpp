#include "cmos/graph.hpp"

namespace cmos {

template <Real T>
const typename Graph<T>::Node& Graph<T>::node(Var<T> v) const {
  if (v.graph != this || v.id >= nodes_.size()) throw Error("variable does not belong to this graph");
  return nodes_[v.id];
}

template <Real T>
typename Graph<T>::Node& Graph<T>::node(Var<T> v) {
  if (v.graph != this || v.id >= nodes_.size()) throw Error("variable does not belong to this graph");
  return nodes_[v.id];
}

template <Real T>
Var<T> Graph<T>::leaf(Tensor<T> value, bool requires_grad) {
  if (checked_ && !value.all_finite()) throw NumericError("non-finite value in leaf tensor");
  nodes_.push_back(Node{"leaf", std::move(value), {}, requires_grad, {}});
  return Var<T>{this, nodes_.size() - 1};
}

template <Real T>
Var<T> Graph<T>::record(std::string op, Tensor<T> value, const std::vector<Var<T>>& inputs,
                        BackwardFn backward) {
  if (checked_ && !value.all_finite()) throw NumericError("non-finite output from op '" + op + "'");
  bool needs = false;
  for (const auto& in : inputs) needs = needs || node(in).requires_grad;
  nodes_.push_back(Node{std::move(op), std::move(value), {}, needs,
                        needs ? std::move(backward) : BackwardFn{}});
  return Var<T>{this, nodes_.size() - 1};
}

template <Real T>
Tensor<T> Graph<T>::grad(Var<T> v) const {
  const auto& n = node(v);
  if (n.grad.empty()) return Tensor<T>::zeros(n.value.shape());
  return n.grad;
}

template <Real T>
Tensor<T>& Graph<T>::grad_buffer(Var<T> v) {
  auto& n = node(v);
  if (n.grad.empty()) n.grad = Tensor<T>::zeros(n.value.shape());
  return n.grad;
}

template <Real T>
void Graph<T>::backward(Var<T> loss) {
  auto& root = node(loss);
  if (root.value.size() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " + shape_string(root.value.shape()));
  }
  for (auto& n : nodes_) n.grad = Tensor<T>{};
  root.grad = Tensor<T>(root.value.shape(), T(1));
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
    n.backward(*this, n.grad);
    if (checked_ && !n.grad.all_finite()) {
      throw NumericError("non-finite gradient flowing out of op '" + n.op + "'");
    }
  }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace cmos
