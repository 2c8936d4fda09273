#include "maeloc/autograd/optim.hpp"

#include <cmath>

#include "maeloc/error.hpp"

namespace maeloc::ag {

template <typename T>
void adamw_step(Tensor<T>& param, const Tensor<T>& grad, AdamState<T>& state,
                const AdamWOptions& o) {
  if (grad.numel() != param.numel()) throw ShapeError("adamw: gradient size mismatch");
  if (state.m.numel() != param.numel()) {
    state.m = Tensor<T>(param.shape);
    state.v = Tensor<T>(param.shape);
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.step));
  const T decay = static_cast<T>(1.0 - o.lr * o.weight_decay);
  const T b1 = static_cast<T>(o.beta1), b2 = static_cast<T>(o.beta2);
  for (std::size_t i = 0; i < param.numel(); ++i) {
    const T g = grad.data[i];
    T& m = state.m.data[i];
    T& v = state.v.data[i];
    m = b1 * m + (T(1) - b1) * g;
    v = b2 * v + (T(1) - b2) * g * g;
    const double mh = m / c1, vh = v / c2;
    param.data[i] = param.data[i] * decay - static_cast<T>(o.lr * mh / (std::sqrt(vh) + o.eps));
  }
}

template <typename T>
AdamW<T>::AdamW(std::vector<Parameter<T>*> params, AdamWOptions options)
    : params_(std::move(params)), states_(params_.size()), options_(options) {}

template <typename T>
void AdamW<T>::step() {
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Parameter<T>& p = *params_[k];
    if (p.grad.empty()) p.grad = Tensor<T>(p.value.shape);
    adamw_step(p.value, p.grad, states_[k], options_);
  }
}

template void adamw_step<float>(Tensor<float>&, const Tensor<float>&, AdamState<float>&,
                                const AdamWOptions&);
template void adamw_step<double>(Tensor<double>&, const Tensor<double>&, AdamState<double>&,
                                 const AdamWOptions&);
template class AdamW<float>;
template class AdamW<double>;

}  // namespace maeloc::ag
