#pragma once

#include <vector>

#include "maeloc/autograd/graph.hpp"

namespace maeloc::ag {

struct AdamWOptions {
  double lr = 5e-4;
  double weight_decay = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  Tensor<T> m, v;
  long step = 0;
};

/// One AdamW update of `param` in place. The decay multiplies the weights
/// by (1 - lr * weight_decay) and never enters the moment estimates.
template <typename T>
void adamw_step(Tensor<T>& param, const Tensor<T>& grad, AdamState<T>& state,
                const AdamWOptions& options);

template <typename T>
class AdamW {
 public:
  AdamW(std::vector<Parameter<T>*> params, AdamWOptions options);
  /// Applies the current gradients of all parameters.
  void step();
  AdamWOptions& options() { return options_; }
  std::vector<AdamState<T>>& states() { return states_; }
  const std::vector<Parameter<T>*>& params() const { return params_; }

 private:
  std::vector<Parameter<T>*> params_;
  std::vector<AdamState<T>> states_;
  AdamWOptions options_;
};

extern template class AdamW<float>;
extern template class AdamW<double>;

}  // namespace maeloc::ag
