#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "maeloc/autograd/graph.hpp"

namespace maeloc::ag {

struct GradCheckResult {
  /// max |analytic - numeric| / max(|analytic|_inf, |numeric|_inf) over
  /// each checked tensor, worst tensor reported.
  double max_rel_error = 0.0;
  std::string worst;
  int checked = 0;
};

/// Builds a scalar loss from the given input leaves in a fresh graph.
using LossBuilder =
    std::function<Var<double>(Graph<double>&, const std::vector<Var<double>>& inputs)>;

/// Central finite differences against reverse mode for every element of
/// `inputs` and of `params`.
inline GradCheckResult grad_check(std::vector<Tensor<double>> inputs,
                                  const std::vector<Parameter<double>*>& params,
                                  const LossBuilder& build, bool training = false,
                                  double h = 1e-5) {
  auto evaluate = [&](bool with_grad) {
    Graph<double> g;
    g.training = training;
    std::vector<Var<double>> leaves;
    for (const auto& t : inputs) leaves.push_back(g.variable(t));
    Var<double> loss = build(g, leaves);
    const double v = loss.value().data[0];
    std::vector<Tensor<double>> grads;
    if (with_grad) {
      g.backward(loss);
      for (const auto& l : leaves) {
        const auto& gr = g.grad_or_empty(l.id);
        grads.push_back(gr.empty() ? Tensor<double>(l.value().shape) : gr);
      }
    }
    return std::make_pair(v, grads);
  };

  GradCheckResult result;
  auto [base, input_grads] = evaluate(true);
  (void)base;
  std::vector<Tensor<double>> param_grads;
  for (auto* p : params) param_grads.push_back(p->grad.empty() ? Tensor<double>(p->value.shape) : p->grad);

  struct Entry {
    std::string name;
    double diff, scale;
  };
  std::vector<Entry> entries;
  auto compare = [&](const std::string& name, AlignedVector<double>& values,
                     const Tensor<double>& analytic) {
    double diff = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double keep = values[i];
      values[i] = keep + h;
      const double up = evaluate(false).first;
      values[i] = keep - h;
      const double down = evaluate(false).first;
      values[i] = keep;
      const double numeric = (up - down) / (2.0 * h);
      diff = std::max(diff, std::abs(numeric - analytic.data[i]));
      scale = std::max({scale, std::abs(numeric), std::abs(analytic.data[i])});
    }
    entries.push_back({name, diff, scale});
  };
  for (std::size_t k = 0; k < inputs.size(); ++k)
    compare("input" + std::to_string(k), inputs[k].data, input_grads[k]);
  for (std::size_t k = 0; k < params.size(); ++k)
    compare(params[k]->name, params[k]->value.data, param_grads[k]);

  // Tensors whose true gradient is zero (a bias feeding batch norm) only see
  // finite-difference noise, so the scale is floored at 1e-6 absolute and at
  // 1e-6 of the largest gradient scale of the check.
  double largest = 0.0;
  for (const auto& e : entries) largest = std::max(largest, e.scale);
  for (const auto& e : entries) {
    const double rel = e.diff / std::max({e.scale, 1e-6, 1e-6 * largest});
    ++result.checked;
    if (rel >= result.max_rel_error) {
      result.max_rel_error = rel;
      result.worst = e.name;
    }
  }
  return result;
}

}  // namespace maeloc::ag
