#include "maeloc/autograd/tensor.hpp"

#include "maeloc/error.hpp"

namespace maeloc::ag {

std::size_t shape_numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int e : shape) {
    if (e < 0) throw ShapeError("negative extent in " + shape_string(shape));
    n *= static_cast<std::size_t>(e);
  }
  return n;
}

std::string shape_string(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <typename T>
Tensor<T>::Tensor(std::vector<int> extents, T fill)
    : shape(std::move(extents)), data(shape_numel(shape), fill) {}

template <typename T>
Tensor<T>::Tensor(std::vector<int> extents, const std::vector<T>& values)
    : shape(std::move(extents)), data(values.begin(), values.end()) {
  if (data.size() != shape_numel(shape))
    throw ShapeError("tensor data does not match shape " + shape_string(shape));
}

template <typename T>
Tensor<T>::Tensor(std::vector<int> extents, AlignedVector<T> values)
    : shape(std::move(extents)), data(std::move(values)) {
  if (data.size() != shape_numel(shape))
    throw ShapeError("tensor data does not match shape " + shape_string(shape));
}

template <typename T>
int Tensor<T>::cols() const {
  if (shape.size() <= 1) return 1;
  int c = 1;
  for (std::size_t i = 1; i < shape.size(); ++i) c *= shape[i];
  return c;
}

template struct Tensor<float>;
template struct Tensor<double>;

}  // namespace maeloc::ag
