#pragma once

#include <random>
#include <string>
#include <vector>

#include "maeloc/autograd/ops.hpp"

namespace maeloc::ag {

inline constexpr double kInitStd = 0.02;

/// Named tensors that make up a module's state: parameters plus buffers
/// such as batch-norm running statistics.
template <typename T>
struct StateRef {
  std::string name;
  Tensor<T>* tensor;
};

/// Normal(0, std) fill.
template <typename T>
Tensor<T> normal_tensor(std::vector<int> shape, double stddev, std::mt19937_64& rng);

template <typename T>
struct Linear {
  Parameter<T> weight;  // [out, in]
  Parameter<T> bias;    // [out], empty when disabled

  Linear() = default;
  Linear(const std::string& name, int in, int out, std::mt19937_64& rng, bool with_bias = true);
  Var<T> operator()(Graph<T>& g, Var<T> x);
  int in_features() const { return weight.value.shape.at(1); }
  int out_features() const { return weight.value.shape.at(0); }
  void collect(std::vector<Parameter<T>*>& out);
  void state(std::vector<StateRef<T>>& out);
};

template <typename T>
struct LayerNorm {
  Parameter<T> gamma, beta;

  LayerNorm() = default;
  LayerNorm(const std::string& name, int dim);
  Var<T> operator()(Graph<T>& g, Var<T> x);
  void collect(std::vector<Parameter<T>*>& out);
  void state(std::vector<StateRef<T>>& out);
};

template <typename T>
struct BatchNorm {
  Parameter<T> gamma, beta;
  BatchNormStats<T> running;
  std::string name;
  double momentum = 0.1;

  BatchNorm() = default;
  BatchNorm(const std::string& name, int dim);
  /// Uses g.training to pick batch or running statistics.
  Var<T> operator()(Graph<T>& g, Var<T> x);
  void collect(std::vector<Parameter<T>*>& out);
  void state(std::vector<StateRef<T>>& out);
};

/// in -> hidden -> out with GELU; optional batch norm before the activation.
/// A hidden width of 0 makes it a single linear map.
template <typename T>
struct Mlp {
  Linear<T> fc1, fc2;
  BatchNorm<T> norm;
  bool use_norm = false;
  bool single = false;

  Mlp() = default;
  Mlp(const std::string& name, int in, int hidden, int out, std::mt19937_64& rng,
      bool batch_norm = false);
  Var<T> operator()(Graph<T>& g, Var<T> x);
  void collect(std::vector<Parameter<T>*>& out);
  void state(std::vector<StateRef<T>>& out);
};

template <typename T>
struct SelfAttention {
  Linear<T> qkv, proj;
  int heads = 1;

  SelfAttention() = default;
  SelfAttention(const std::string& name, int dim, int heads, std::mt19937_64& rng);
  Var<T> operator()(Graph<T>& g, Var<T> x, const Segments& segments);
  void collect(std::vector<Parameter<T>*>& out);
  void state(std::vector<StateRef<T>>& out);
};

/// Pre-norm block: x + attn(ln1(x)), then x + mlp(ln2(x)).
template <typename T>
struct TransformerBlock {
  LayerNorm<T> ln1, ln2;
  SelfAttention<T> attn;
  Mlp<T> mlp;

  TransformerBlock() = default;
  TransformerBlock(const std::string& name, int dim, int heads, int expansion, std::mt19937_64& rng);
  Var<T> operator()(Graph<T>& g, Var<T> x, const Segments& segments);
  void collect(std::vector<Parameter<T>*>& out);
  void state(std::vector<StateRef<T>>& out);
};

template <typename T>
struct Transformer {
  std::vector<TransformerBlock<T>> blocks;

  Transformer() = default;
  Transformer(const std::string& name, int depth, int dim, int heads, int expansion,
              std::mt19937_64& rng);
  Var<T> operator()(Graph<T>& g, Var<T> x, const Segments& segments);
  void collect(std::vector<Parameter<T>*>& out);
  void state(std::vector<StateRef<T>>& out);
};

}  // namespace maeloc::ag
