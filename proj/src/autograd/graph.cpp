#include "maeloc/autograd/graph.hpp"

#include <cmath>

#include "maeloc/error.hpp"

namespace maeloc::ag {

template <typename T>
Var<T> Graph<T>::constant(Tensor<T> value) {
  Node n;
  n.value = std::move(value);
  n.op = "constant";
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

template <typename T>
Var<T> Graph<T>::variable(Tensor<T> value) {
  Var<T> v = constant(std::move(value));
  nodes_.back().requires_grad = true;
  nodes_.back().op = "variable";
  return v;
}

template <typename T>
Var<T> Graph<T>::param(Parameter<T>& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return {this, it->second};
  Node n;
  n.value = p.value;
  n.requires_grad = true;
  n.param = &p;
  n.op = "param";
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size() - 1);
  param_nodes_[&p] = id;
  return {this, id};
}

template <typename T>
Var<T> Graph<T>::record(const char* op, Tensor<T> value, std::initializer_list<Var<T>> parents,
                        Backward backward) {
  return record(op, std::move(value), std::vector<Var<T>>(parents), std::move(backward));
}

template <typename T>
Var<T> Graph<T>::record(const char* op, Tensor<T> value, const std::vector<Var<T>>& parents,
                        Backward backward) {
  if (check_finite)
    for (T v : value.data)
      if (!std::isfinite(v)) throw NumericalError(std::string("non-finite output from ") + op);
  Node n;
  n.value = std::move(value);
  n.op = op;
  for (const Var<T>& p : parents) {
    if (p.graph != this) throw InvalidArgument(std::string(op) + ": operand from another graph");
    n.requires_grad = n.requires_grad || requires_grad(p.id);
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

template <typename T>
Tensor<T>& Graph<T>::grad(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.empty() && !n.value.empty()) n.grad = Tensor<T>(n.value.shape);
  return n.grad;
}

template <typename T>
void Graph<T>::backward(Var<T> loss) {
  if (loss.graph != this) throw InvalidArgument("backward: loss from another graph");
  if (value(loss.id).numel() != 1) throw ShapeError("backward: loss must be a scalar");
  for (Node& n : nodes_) n.grad = Tensor<T>();
  grad(loss.id).data[0] = T(1);
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    n.backward();
  }
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    Node& n = nodes_[id];
    if (!n.param) continue;
    n.param->grad = n.grad.empty() ? Tensor<T>(n.value.shape) : n.grad;
  }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace maeloc::ag
