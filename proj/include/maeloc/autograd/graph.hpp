#pragma once

#include <deque>
#include <functional>
#include <string>
#include <unordered_map>

#include "maeloc/autograd/tensor.hpp"

namespace maeloc::ag {

/// Learnable tensor with its gradient from the latest backward pass.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
};

template <typename T>
class Graph;

/// Handle to a node of a Graph.
template <typename T>
struct Var {
  Graph<T>* graph = nullptr;
  int id = -1;

  const Tensor<T>& value() const;
  const std::vector<int>& shape() const { return value().shape; }
  int rows() const { return value().rows(); }
  int cols() const { return value().cols(); }
  bool valid() const { return graph != nullptr && id >= 0; }
};

/// Tape of operations. Nodes are appended in evaluation order, so reverse
/// creation order is a reverse topological order.
template <typename T>
class Graph {
 public:
  using Backward = std::function<void()>;

  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    Backward backward;
    bool requires_grad = false;
    Parameter<T>* param = nullptr;
    const char* op = "";
  };

  /// Training mode switches batch norm to batch statistics.
  bool training = false;
  /// Reject NaN or infinite op outputs.
  bool check_finite = true;

  Var<T> constant(Tensor<T> value);
  /// Leaf that receives a gradient (for inputs under test).
  Var<T> variable(Tensor<T> value);
  /// Leaf bound to a parameter; the same parameter maps to one node.
  Var<T> param(Parameter<T>& p);

  /// Appends an op result. `backward` runs only if some parent needs a
  /// gradient.
  Var<T> record(const char* op, Tensor<T> value, std::initializer_list<Var<T>> parents,
                Backward backward);
  Var<T> record(const char* op, Tensor<T> value, const std::vector<Var<T>>& parents,
                Backward backward);

  /// Reverse pass from a scalar. All node gradients are reset first; the
  /// gradients of bound parameters are overwritten, not accumulated.
  void backward(Var<T> loss);

  const Tensor<T>& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  Tensor<T>& mutable_value(int id) { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  /// Gradient accumulator of a node, zero-initialised on first use.
  Tensor<T>& grad(int id);
  const Tensor<T>& grad_or_empty(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  std::deque<Node> nodes_;
  std::unordered_map<Parameter<T>*, int> param_nodes_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return graph->value(id);
}

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace maeloc::ag
