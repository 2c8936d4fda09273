#include "maeloc/autograd/layers.hpp"

namespace maeloc::ag {

template <typename T>
Tensor<T> normal_tensor(std::vector<int> shape, double stddev, std::mt19937_64& rng) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> n(0.0, stddev);
  for (T& v : t.data) v = static_cast<T>(n(rng));
  return t;
}

template <typename T>
Linear<T>::Linear(const std::string& name, int in, int out, std::mt19937_64& rng, bool with_bias) {
  weight = {name + ".weight", normal_tensor<T>({out, in}, kInitStd, rng), {}};
  if (with_bias) bias = {name + ".bias", Tensor<T>({out}), {}};
}

template <typename T>
Var<T> Linear<T>::operator()(Graph<T>& g, Var<T> x) {
  return linear(x, g.param(weight), bias.value.empty() ? Var<T>{} : g.param(bias));
}

template <typename T>
void Linear<T>::collect(std::vector<Parameter<T>*>& out) {
  out.push_back(&weight);
  if (!bias.value.empty()) out.push_back(&bias);
}

template <typename T>
void Linear<T>::state(std::vector<StateRef<T>>& out) {
  out.push_back({weight.name, &weight.value});
  if (!bias.value.empty()) out.push_back({bias.name, &bias.value});
}

template <typename T>
LayerNorm<T>::LayerNorm(const std::string& name, int dim) {
  gamma = {name + ".gamma", Tensor<T>({dim}, T(1)), {}};
  beta = {name + ".beta", Tensor<T>({dim}), {}};
}

template <typename T>
Var<T> LayerNorm<T>::operator()(Graph<T>& g, Var<T> x) {
  return layer_norm(x, g.param(gamma), g.param(beta));
}

template <typename T>
void LayerNorm<T>::collect(std::vector<Parameter<T>*>& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
}

template <typename T>
void LayerNorm<T>::state(std::vector<StateRef<T>>& out) {
  out.push_back({gamma.name, &gamma.value});
  out.push_back({beta.name, &beta.value});
}

template <typename T>
BatchNorm<T>::BatchNorm(const std::string& n, int dim) : name(n) {
  gamma = {name + ".gamma", Tensor<T>({dim}, T(1)), {}};
  beta = {name + ".beta", Tensor<T>({dim}), {}};
  running.mean = Tensor<T>({dim}, T(0));
  running.var = Tensor<T>({dim}, T(1));
}

template <typename T>
Var<T> BatchNorm<T>::operator()(Graph<T>& g, Var<T> x) {
  return batch_norm(x, g.param(gamma), g.param(beta), running, g.training, momentum);
}

template <typename T>
void BatchNorm<T>::collect(std::vector<Parameter<T>*>& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
}

template <typename T>
void BatchNorm<T>::state(std::vector<StateRef<T>>& out) {
  out.push_back({gamma.name, &gamma.value});
  out.push_back({beta.name, &beta.value});
  out.push_back({name + ".running_mean", &running.mean});
  out.push_back({name + ".running_var", &running.var});
}

template <typename T>
Mlp<T>::Mlp(const std::string& name, int in, int hidden, int out, std::mt19937_64& rng,
            bool batch_norm)
    : use_norm(batch_norm), single(hidden == 0) {
  if (single) {
    fc1 = Linear<T>(name + ".fc", in, out, rng);
    return;
  }
  fc1 = Linear<T>(name + ".fc1", in, hidden, rng);
  if (use_norm) norm = BatchNorm<T>(name + ".bn", hidden);
  fc2 = Linear<T>(name + ".fc2", hidden, out, rng);
}

template <typename T>
Var<T> Mlp<T>::operator()(Graph<T>& g, Var<T> x) {
  Var<T> h = fc1(g, x);
  if (single) return h;
  if (use_norm) h = norm(g, h);
  return fc2(g, gelu(h));
}

template <typename T>
void Mlp<T>::collect(std::vector<Parameter<T>*>& out) {
  fc1.collect(out);
  if (single) return;
  if (use_norm) norm.collect(out);
  fc2.collect(out);
}

template <typename T>
void Mlp<T>::state(std::vector<StateRef<T>>& out) {
  fc1.state(out);
  if (single) return;
  if (use_norm) norm.state(out);
  fc2.state(out);
}

template <typename T>
SelfAttention<T>::SelfAttention(const std::string& name, int dim, int h, std::mt19937_64& rng)
    : qkv(name + ".qkv", dim, 3 * dim, rng), proj(name + ".proj", dim, dim, rng), heads(h) {}

template <typename T>
Var<T> SelfAttention<T>::operator()(Graph<T>& g, Var<T> x, const Segments& segments) {
  return proj(g, attention(qkv(g, x), heads, segments));
}

template <typename T>
void SelfAttention<T>::collect(std::vector<Parameter<T>*>& out) {
  qkv.collect(out);
  proj.collect(out);
}

template <typename T>
void SelfAttention<T>::state(std::vector<StateRef<T>>& out) {
  qkv.state(out);
  proj.state(out);
}

template <typename T>
TransformerBlock<T>::TransformerBlock(const std::string& name, int dim, int heads, int expansion,
                                      std::mt19937_64& rng)
    : ln1(name + ".ln1", dim),
      ln2(name + ".ln2", dim),
      attn(name + ".attn", dim, heads, rng),
      mlp(name + ".mlp", dim, expansion * dim, dim, rng) {}

template <typename T>
Var<T> TransformerBlock<T>::operator()(Graph<T>& g, Var<T> x, const Segments& segments) {
  x = add(x, attn(g, ln1(g, x), segments));
  return add(x, mlp(g, ln2(g, x)));
}

template <typename T>
void TransformerBlock<T>::collect(std::vector<Parameter<T>*>& out) {
  ln1.collect(out);
  attn.collect(out);
  ln2.collect(out);
  mlp.collect(out);
}

template <typename T>
void TransformerBlock<T>::state(std::vector<StateRef<T>>& out) {
  ln1.state(out);
  attn.state(out);
  ln2.state(out);
  mlp.state(out);
}

template <typename T>
Transformer<T>::Transformer(const std::string& name, int depth, int dim, int heads, int expansion,
                            std::mt19937_64& rng) {
  blocks.reserve(static_cast<std::size_t>(depth));
  for (int i = 0; i < depth; ++i)
    blocks.emplace_back(name + "." + std::to_string(i), dim, heads, expansion, rng);
}

template <typename T>
Var<T> Transformer<T>::operator()(Graph<T>& g, Var<T> x, const Segments& segments) {
  for (auto& b : blocks) x = b(g, x, segments);
  return x;
}

template <typename T>
void Transformer<T>::collect(std::vector<Parameter<T>*>& out) {
  for (auto& b : blocks) b.collect(out);
}

template <typename T>
void Transformer<T>::state(std::vector<StateRef<T>>& out) {
  for (auto& b : blocks) b.state(out);
}

template Tensor<float> normal_tensor<float>(std::vector<int>, double, std::mt19937_64&);
template Tensor<double> normal_tensor<double>(std::vector<int>, double, std::mt19937_64&);
template struct Linear<float>;
template struct Linear<double>;
template struct LayerNorm<float>;
template struct LayerNorm<double>;
template struct BatchNorm<float>;
template struct BatchNorm<double>;
template struct Mlp<float>;
template struct Mlp<double>;
template struct SelfAttention<float>;
template struct SelfAttention<double>;
template struct TransformerBlock<float>;
template struct TransformerBlock<double>;
template struct Transformer<float>;
template struct Transformer<double>;

}  // namespace maeloc::ag
