#include "maeloc/autograd/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>

#include "maeloc/error.hpp"

namespace maeloc::ag {
namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using CMap = Eigen::Map<const Mat<T>>;
template <typename T>
using MMap = Eigen::Map<Mat<T>>;

template <typename T>
CMap<T> cmat(const Tensor<T>& t, int r, int c) {
  return CMap<T>(t.data.data(), r, c);
}
template <typename T>
MMap<T> mmat(Tensor<T>& t, int r, int c) {
  return MMap<T>(t.data.data(), r, c);
}

template <typename T>
bool needs(const Var<T>& v) {
  return v.graph->requires_grad(v.id);
}

template <typename T>
int next_id(const Var<T>& v) {
  return static_cast<int>(v.graph->size());
}

void require(bool ok, const char* op, const std::string& what) {
  if (!ok) throw ShapeError(std::string(op) + ": " + what);
}

template <typename T>
void same_numel(const Var<T>& a, const Var<T>& b, const char* op) {
  require(a.value().numel() == b.value().numel(), op,
          "size mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

template <typename T>
T gelu_value(T x) {
  const T k = static_cast<T>(std::sqrt(2.0 / std::numbers::pi));
  const T u = k * (x + static_cast<T>(kGeluC) * x * x * x);
  return T(0.5) * x * (T(1) + std::tanh(u));
}

template <typename T>
T gelu_slope(T x) {
  const T k = static_cast<T>(std::sqrt(2.0 / std::numbers::pi));
  const T u = k * (x + static_cast<T>(kGeluC) * x * x * x);
  const T t = std::tanh(u);
  return T(0.5) * (T(1) + t) +
         T(0.5) * x * (T(1) - t * t) * k * (T(1) + T(3) * static_cast<T>(kGeluC) * x * x);
}

}  // namespace

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  same_numel(a, b, "add");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += b.value().data[i];
  Graph<T>* g = a.graph;
  const int self = next_id(a);
  return g->record("add", std::move(out), {a, b}, [g, a, b, self] {
    const auto& go = g->grad_or_empty(self).data;
    for (const Var<T>& p : {a, b})
      if (needs(p)) {
        auto& gp = g->grad(p.id).data;
        for (std::size_t i = 0; i < go.size(); ++i) gp[i] += go[i];
      }
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  same_numel(a, b, "sub");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] -= b.value().data[i];
  Graph<T>* g = a.graph;
  const int self = next_id(a);
  return g->record("sub", std::move(out), {a, b}, [g, a, b, self] {
    const auto& go = g->grad_or_empty(self).data;
    if (needs(a)) {
      auto& ga = g->grad(a.id).data;
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
    }
    if (needs(b)) {
      auto& gb = g->grad(b.id).data;
      for (std::size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  same_numel(a, b, "mul");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] *= b.value().data[i];
  Graph<T>* g = a.graph;
  const int self = next_id(a);
  return g->record("mul", std::move(out), {a, b}, [g, a, b, self] {
    const auto& go = g->grad_or_empty(self).data;
    const auto& av = a.value().data;
    const auto& bv = b.value().data;
    if (needs(a)) {
      auto& ga = g->grad(a.id).data;
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bv[i];
    }
    if (needs(b)) {
      auto& gb = g->grad(b.id).data;
      for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> a, double c) {
  Tensor<T> out = a.value();
  const T k = static_cast<T>(c);
  for (T& v : out.data) v *= k;
  Graph<T>* g = a.graph;
  const int self = next_id(a);
  return g->record("scale", std::move(out), {a}, [g, a, self, k] {
    const auto& go = g->grad_or_empty(self).data;
    auto& ga = g->grad(a.id).data;
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += k * go[i];
  });
}

template <typename T>
Var<T> add_row(Var<T> x, Var<T> v) {
  const int n = x.rows(), d = x.cols();
  require(static_cast<int>(v.value().numel()) == d, "add_row",
          "row vector has " + std::to_string(v.value().numel()) + " elements, expected " +
              std::to_string(d));
  Tensor<T> out = x.value();
  const auto& vv = v.value().data;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out.data[static_cast<std::size_t>(i) * d + j] += vv[static_cast<std::size_t>(j)];
  Graph<T>* g = x.graph;
  const int self = next_id(x);
  return g->record("add_row", std::move(out), {x, v}, [g, x, v, self, n, d] {
    const auto& go = g->grad_or_empty(self).data;
    if (needs(x)) {
      auto& gx = g->grad(x.id).data;
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
    }
    if (needs(v)) {
      auto& gv = g->grad(v.id).data;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) gv[static_cast<std::size_t>(j)] += go[static_cast<std::size_t>(i) * d + j];
    }
  });
}

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  const int n = a.rows(), k = a.cols(), m = b.cols();
  require(b.rows() == k, "matmul",
          "inner dimensions differ: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  Tensor<T> out({n, m});
  mmat(out, n, m).noalias() = cmat(a.value(), n, k) * cmat(b.value(), k, m);
  Graph<T>* g = a.graph;
  const int self = next_id(a);
  return g->record("matmul", std::move(out), {a, b}, [g, a, b, self, n, k, m] {
    const auto go = cmat(g->grad_or_empty(self), n, m);
    if (needs(a)) mmat(g->grad(a.id), n, k).noalias() += go * cmat(b.value(), k, m).transpose();
    if (needs(b)) mmat(g->grad(b.id), k, m).noalias() += cmat(a.value(), n, k).transpose() * go;
  });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  const int n = x.rows(), in = x.cols();
  const int out_dim = w.rows();
  require(w.cols() == in, "linear",
          "input width " + std::to_string(in) + " vs weight " + shape_string(w.shape()));
  const bool has_bias = b.valid();
  if (has_bias)
    require(static_cast<int>(b.value().numel()) == out_dim, "linear", "bias size mismatch");
  Tensor<T> out({n, out_dim});
  auto y = mmat(out, n, out_dim);
  y.noalias() = cmat(x.value(), n, in) * cmat(w.value(), out_dim, in).transpose();
  if (has_bias) {
    const auto bias = cmat(b.value(), 1, out_dim);
    y.rowwise() += bias.row(0);
  }
  Graph<T>* g = x.graph;
  const int self = next_id(x);
  std::vector<Var<T>> parents{x, w};
  if (has_bias) parents.push_back(b);
  return g->record("linear", std::move(out), parents, [g, x, w, b, has_bias, self, n, in, out_dim] {
    const auto go = cmat(g->grad_or_empty(self), n, out_dim);
    if (needs(x)) mmat(g->grad(x.id), n, in).noalias() += go * cmat(w.value(), out_dim, in);
    if (needs(w)) mmat(g->grad(w.id), out_dim, in).noalias() += go.transpose() * cmat(x.value(), n, in);
    if (has_bias && needs(b)) mmat(g->grad(b.id), 1, out_dim) += go.colwise().sum();
  });
}

template <typename T>
Var<T> gelu(Var<T> x) {
  Tensor<T> out = x.value();
  for (T& v : out.data) v = gelu_value(v);
  Graph<T>* g = x.graph;
  const int self = next_id(x);
  return g->record("gelu", std::move(out), {x}, [g, x, self] {
    const auto& go = g->grad_or_empty(self).data;
    const auto& xv = x.value().data;
    auto& gx = g->grad(x.id).data;
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * gelu_slope(xv[i]);
  });
}

template <typename T>
Var<T> relu(Var<T> x) {
  Tensor<T> out = x.value();
  for (T& v : out.data) v = std::max(v, T(0));
  Graph<T>* g = x.graph;
  const int self = next_id(x);
  return g->record("relu", std::move(out), {x}, [g, x, self] {
    const auto& go = g->grad_or_empty(self).data;
    const auto& xv = x.value().data;
    auto& gx = g->grad(x.id).data;
    for (std::size_t i = 0; i < go.size(); ++i)
      if (xv[i] > T(0)) gx[i] += go[i];
  });
}

template <typename T>
Var<T> softmax(Var<T> x) {
  const int n = x.rows(), d = x.cols();
  require(d > 0, "softmax", "empty axis");
  Tensor<T> out = x.value();
  for (int i = 0; i < n; ++i) {
    T* row = out.data.data() + static_cast<std::size_t>(i) * d;
    const T mx = *std::max_element(row, row + d);
    T s = 0;
    for (int j = 0; j < d; ++j) s += (row[j] = std::exp(row[j] - mx));
    for (int j = 0; j < d; ++j) row[j] /= s;
  }
  Graph<T>* g = x.graph;
  const int self = next_id(x);
  return g->record("softmax", std::move(out), {x}, [g, x, self, n, d] {
    const auto& go = g->grad_or_empty(self).data;
    const auto& y = g->value(self).data;
    auto& gx = g->grad(x.id).data;
    for (int i = 0; i < n; ++i) {
      const std::size_t o = static_cast<std::size_t>(i) * d;
      T dot = 0;
      for (int j = 0; j < d; ++j) dot += go[o + j] * y[o + j];
      for (int j = 0; j < d; ++j) gx[o + j] += y[o + j] * (go[o + j] - dot);
    }
  });
}

template <typename T>
Var<T> log_softmax(Var<T> x) {
  const int n = x.rows(), d = x.cols();
  require(d > 0, "log_softmax", "empty axis");
  Tensor<T> out = x.value();
  for (int i = 0; i < n; ++i) {
    T* row = out.data.data() + static_cast<std::size_t>(i) * d;
    const T mx = *std::max_element(row, row + d);
    T s = 0;
    for (int j = 0; j < d; ++j) s += std::exp(row[j] - mx);
    const T lse = mx + std::log(s);
    for (int j = 0; j < d; ++j) row[j] -= lse;
  }
  Graph<T>* g = x.graph;
  const int self = next_id(x);
  return g->record("log_softmax", std::move(out), {x}, [g, x, self, n, d] {
    const auto& go = g->grad_or_empty(self).data;
    const auto& y = g->value(self).data;
    auto& gx = g->grad(x.id).data;
    for (int i = 0; i < n; ++i) {
      const std::size_t o = static_cast<std::size_t>(i) * d;
      T s = 0;
      for (int j = 0; j < d; ++j) s += go[o + j];
      for (int j = 0; j < d; ++j) gx[o + j] += go[o + j] - std::exp(y[o + j]) * s;
    }
  });
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta) {
  const int n = x.rows(), d = x.cols();
  require(d > 0, "layer_norm", "empty axis");
  require(static_cast<int>(gamma.value().numel()) == d && static_cast<int>(beta.value().numel()) == d,
          "layer_norm", "affine size mismatch");
  auto xhat = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n) * d);
  auto inv = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n));
  Tensor<T> out({n, d});
  const auto& xv = x.value().data;
  const auto& gv = gamma.value().data;
  const auto& bv = beta.value().data;
  for (int i = 0; i < n; ++i) {
    const std::size_t o = static_cast<std::size_t>(i) * d;
    T mu = 0;
    for (int j = 0; j < d; ++j) mu += xv[o + j];
    mu /= static_cast<T>(d);
    T var = 0;
    for (int j = 0; j < d; ++j) var += (xv[o + j] - mu) * (xv[o + j] - mu);
    var /= static_cast<T>(d);
    const T is = T(1) / std::sqrt(var + static_cast<T>(kNormEps));
    (*inv)[static_cast<std::size_t>(i)] = is;
    for (int j = 0; j < d; ++j) {
      const T h = (xv[o + j] - mu) * is;
      (*xhat)[o + j] = h;
      out.data[o + j] = gv[static_cast<std::size_t>(j)] * h + bv[static_cast<std::size_t>(j)];
    }
  }
  out.shape = x.shape();
  Graph<T>* g = x.graph;
  const int self = next_id(x);
  return g->record("layer_norm", std::move(out), {x, gamma, beta},
                   [g, x, gamma, beta, self, n, d, xhat, inv] {
    const auto& go = g->grad_or_empty(self).data;
    const auto& gv = gamma.value().data;
    const auto& h = *xhat;
    if (needs(gamma) || needs(beta)) {
      std::vector<T> dg(static_cast<std::size_t>(d), T(0)), db(static_cast<std::size_t>(d), T(0));
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) {
          const std::size_t o = static_cast<std::size_t>(i) * d + j;
          dg[static_cast<std::size_t>(j)] += go[o] * h[o];
          db[static_cast<std::size_t>(j)] += go[o];
        }
      if (needs(gamma)) {
        auto& gg = g->grad(gamma.id).data;
        for (int j = 0; j < d; ++j) gg[static_cast<std::size_t>(j)] += dg[static_cast<std::size_t>(j)];
      }
      if (needs(beta)) {
        auto& gb = g->grad(beta.id).data;
        for (int j = 0; j < d; ++j) gb[static_cast<std::size_t>(j)] += db[static_cast<std::size_t>(j)];
      }
    }
    if (needs(x)) {
      auto& gx = g->grad(x.id).data;
      for (int i = 0; i < n; ++i) {
        const std::size_t o = static_cast<std::size_t>(i) * d;
        T m1 = 0, m2 = 0;
        for (int j = 0; j < d; ++j) {
          const T dh = go[o + j] * gv[static_cast<std::size_t>(j)];
          m1 += dh;
          m2 += dh * h[o + j];
        }
        m1 /= static_cast<T>(d);
        m2 /= static_cast<T>(d);
        const T is = (*inv)[static_cast<std::size_t>(i)];
        for (int j = 0; j < d; ++j) {
          const T dh = go[o + j] * gv[static_cast<std::size_t>(j)];
          gx[o + j] += is * (dh - m1 - h[o + j] * m2);
        }
      }
    }
  });
}

template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, BatchNormStats<T>& running, bool training,
                  double momentum) {
  const int n = x.rows(), d = x.cols();
  require(n > 0 && d > 0, "batch_norm", "empty input");
  require(static_cast<int>(gamma.value().numel()) == d && static_cast<int>(beta.value().numel()) == d,
          "batch_norm", "affine size mismatch");
  if (running.mean.numel() != static_cast<std::size_t>(d)) {
    running.mean = Tensor<T>({d}, T(0));
    running.var = Tensor<T>({d}, T(1));
  }
  const auto& xv = x.value().data;
  const auto& gv = gamma.value().data;
  const auto& bv = beta.value().data;
  std::vector<T> mu(static_cast<std::size_t>(d)), var(static_cast<std::size_t>(d));
  if (training) {
    for (int j = 0; j < d; ++j) {
      T m = 0;
      for (int i = 0; i < n; ++i) m += xv[static_cast<std::size_t>(i) * d + j];
      m /= static_cast<T>(n);
      T v = 0;
      for (int i = 0; i < n; ++i) {
        const T c = xv[static_cast<std::size_t>(i) * d + j] - m;
        v += c * c;
      }
      mu[static_cast<std::size_t>(j)] = m;
      var[static_cast<std::size_t>(j)] = v / static_cast<T>(n);
      const T unbiased = n > 1 ? v / static_cast<T>(n - 1) : var[static_cast<std::size_t>(j)];
      const T mom = static_cast<T>(momentum);
      running.mean.data[static_cast<std::size_t>(j)] =
          (T(1) - mom) * running.mean.data[static_cast<std::size_t>(j)] + mom * m;
      running.var.data[static_cast<std::size_t>(j)] =
          (T(1) - mom) * running.var.data[static_cast<std::size_t>(j)] + mom * unbiased;
    }
  } else {
    mu.assign(running.mean.data.begin(), running.mean.data.end());
    var.assign(running.var.data.begin(), running.var.data.end());
  }
  auto inv = std::make_shared<std::vector<T>>(static_cast<std::size_t>(d));
  auto xhat = std::make_shared<std::vector<T>>(xv.size());
  Tensor<T> out(x.shape());
  for (int j = 0; j < d; ++j)
    (*inv)[static_cast<std::size_t>(j)] =
        T(1) / std::sqrt(var[static_cast<std::size_t>(j)] + static_cast<T>(kNormEps));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) {
      const std::size_t o = static_cast<std::size_t>(i) * d + j;
      const T h = (xv[o] - mu[static_cast<std::size_t>(j)]) * (*inv)[static_cast<std::size_t>(j)];
      (*xhat)[o] = h;
      out.data[o] = gv[static_cast<std::size_t>(j)] * h + bv[static_cast<std::size_t>(j)];
    }
  Graph<T>* g = x.graph;
  const int self = next_id(x);
  return g->record("batch_norm", std::move(out), {x, gamma, beta},
                   [g, x, gamma, beta, self, n, d, xhat, inv, training] {
    const auto& go = g->grad_or_empty(self).data;
    const auto& gv = gamma.value().data;
    const auto& h = *xhat;
    std::vector<T> dg(static_cast<std::size_t>(d), T(0)), db(static_cast<std::size_t>(d), T(0));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) {
        const std::size_t o = static_cast<std::size_t>(i) * d + j;
        dg[static_cast<std::size_t>(j)] += go[o] * h[o];
        db[static_cast<std::size_t>(j)] += go[o];
      }
    if (needs(gamma)) {
      auto& gg = g->grad(gamma.id).data;
      for (int j = 0; j < d; ++j) gg[static_cast<std::size_t>(j)] += dg[static_cast<std::size_t>(j)];
    }
    if (needs(beta)) {
      auto& gb = g->grad(beta.id).data;
      for (int j = 0; j < d; ++j) gb[static_cast<std::size_t>(j)] += db[static_cast<std::size_t>(j)];
    }
    if (!needs(x)) return;
    auto& gx = g->grad(x.id).data;
    for (int j = 0; j < d; ++j) {
      const T is = (*inv)[static_cast<std::size_t>(j)];
      const T gj = gv[static_cast<std::size_t>(j)];
      if (!training) {
        for (int i = 0; i < n; ++i) {
          const std::size_t o = static_cast<std::size_t>(i) * d + j;
          gx[o] += go[o] * gj * is;
        }
        continue;
      }
      const T m1 = gj * db[static_cast<std::size_t>(j)] / static_cast<T>(n);
      const T m2 = gj * dg[static_cast<std::size_t>(j)] / static_cast<T>(n);
      for (int i = 0; i < n; ++i) {
        const std::size_t o = static_cast<std::size_t>(i) * d + j;
        gx[o] += is * (go[o] * gj - m1 - h[o] * m2);
      }
    }
  });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  require(!parts.empty(), "concat_rows", "no operands");
  const int d = parts[0].cols();
  int n = 0;
  for (const auto& p : parts) {
    require(p.cols() == d, "concat_rows", "column counts differ");
    n += p.rows();
  }
  Tensor<T> out({n, d});
  std::size_t o = 0;
  for (const auto& p : parts) {
    std::copy(p.value().data.begin(), p.value().data.end(), out.data.begin() + static_cast<long>(o));
    o += p.value().numel();
  }
  Graph<T>* g = parts[0].graph;
  const int self = next_id(parts[0]);
  return g->record("concat_rows", std::move(out), parts, [g, parts, self] {
    const auto& go = g->grad_or_empty(self).data;
    std::size_t o = 0;
    for (const auto& p : parts) {
      const std::size_t k = p.value().numel();
      if (needs(p)) {
        auto& gp = g->grad(p.id).data;
        for (std::size_t i = 0; i < k; ++i) gp[i] += go[o + i];
      }
      o += k;
    }
  });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  require(!parts.empty(), "concat_cols", "no operands");
  const int n = parts[0].rows();
  int d = 0;
  std::vector<int> widths;
  for (const auto& p : parts) {
    require(p.rows() == n, "concat_cols", "row counts differ");
    widths.push_back(p.cols());
    d += p.cols();
  }
  Tensor<T> out({n, d});
  int off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& pv = parts[k].value().data;
    const int w = widths[k];
    for (int i = 0; i < n; ++i)
      std::copy(pv.begin() + static_cast<long>(i) * w, pv.begin() + static_cast<long>(i + 1) * w,
                out.data.begin() + static_cast<long>(i) * d + off);
    off += w;
  }
  Graph<T>* g = parts[0].graph;
  const int self = next_id(parts[0]);
  return g->record("concat_cols", std::move(out), parts, [g, parts, widths, self, n, d] {
    const auto& go = g->grad_or_empty(self).data;
    int off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const int w = widths[k];
      if (needs(parts[k])) {
        auto& gp = g->grad(parts[k].id).data;
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < w; ++j)
            gp[static_cast<std::size_t>(i) * w + j] += go[static_cast<std::size_t>(i) * d + off + j];
      }
      off += w;
    }
  });
}

template <typename T>
Var<T> gather_rows(Var<T> x, std::vector<int> index) {
  const int n = x.rows(), d = x.cols();
  for (int r : index) require(r >= 0 && r < n, "gather_rows", "row index out of range");
  const int m = static_cast<int>(index.size());
  Tensor<T> out({m, d});
  const auto& xv = x.value().data;
  for (int i = 0; i < m; ++i)
    std::copy(xv.begin() + static_cast<long>(index[static_cast<std::size_t>(i)]) * d,
              xv.begin() + static_cast<long>(index[static_cast<std::size_t>(i)] + 1) * d,
              out.data.begin() + static_cast<long>(i) * d);
  Graph<T>* g = x.graph;
  const int self = next_id(x);
  return g->record("gather_rows", std::move(out), {x}, [g, x, index = std::move(index), self, d] {
    const auto& go = g->grad_or_empty(self).data;
    auto& gx = g->grad(x.id).data;
    for (std::size_t i = 0; i < index.size(); ++i)
      for (int j = 0; j < d; ++j)
        gx[static_cast<std::size_t>(index[i]) * d + j] += go[i * static_cast<std::size_t>(d) + j];
  });
}

template <typename T>
Var<T> reshape(Var<T> x, std::vector<int> shape) {
  require(shape_numel(shape) == x.value().numel(), "reshape",
          shape_string(x.shape()) + " -> " + shape_string(shape));
  Tensor<T> out(std::move(shape), x.value().data);
  Graph<T>* g = x.graph;
  const int self = next_id(x);
  return g->record("reshape", std::move(out), {x}, [g, x, self] {
    const auto& go = g->grad_or_empty(self).data;
    auto& gx = g->grad(x.id).data;
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
  });
}

template <typename T>
Var<T> flip_cols(Var<T> x) {
  const int n = x.rows(), d = x.cols();
  Tensor<T> out = x.value();
  for (int i = 0; i < n; ++i)
    std::reverse(out.data.begin() + static_cast<long>(i) * d, out.data.begin() + static_cast<long>(i + 1) * d);
  Graph<T>* g = x.graph;
  const int self = next_id(x);
  return g->record("flip_cols", std::move(out), {x}, [g, x, self, n, d] {
    const auto& go = g->grad_or_empty(self).data;
    auto& gx = g->grad(x.id).data;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j)
        gx[static_cast<std::size_t>(i) * d + j] += go[static_cast<std::size_t>(i) * d + (d - 1 - j)];
  });
}

template <typename T>
Var<T> segment_max(Var<T> x, const Segments& segments) {
  const int n = x.rows(), d = x.cols();
  const int s = static_cast<int>(segments.size());
  Tensor<T> out({s, d});
  auto arg = std::make_shared<std::vector<int>>(static_cast<std::size_t>(s) * d);
  const auto& xv = x.value().data;
  for (int k = 0; k < s; ++k) {
    const auto [start, count] = segments[static_cast<std::size_t>(k)];
    require(count > 0, "segment_max", "empty segment");
    require(start >= 0 && start + count <= n, "segment_max", "segment out of range");
    for (int j = 0; j < d; ++j) {
      int best = start;
      T v = xv[static_cast<std::size_t>(start) * d + j];
      for (int i = start + 1; i < start + count; ++i) {
        const T c = xv[static_cast<std::size_t>(i) * d + j];
        if (c > v) {
          v = c;
          best = i;
        }
      }
      out.data[static_cast<std::size_t>(k) * d + j] = v;
      (*arg)[static_cast<std::size_t>(k) * d + j] = best;
    }
  }
  Graph<T>* g = x.graph;
  const int self = next_id(x);
  return g->record("segment_max", std::move(out), {x}, [g, x, arg, self, d] {
    const auto& go = g->grad_or_empty(self).data;
    auto& gx = g->grad(x.id).data;
    for (std::size_t o = 0; o < arg->size(); ++o)
      gx[static_cast<std::size_t>((*arg)[o]) * d + o % static_cast<std::size_t>(d)] += go[o];
  });
}

template <typename T>
Var<T> attention(Var<T> qkv, int heads, const Segments& segments) {
  const int n = qkv.rows(), w = qkv.cols();
  require(w % 3 == 0, "attention", "qkv width must be 3d");
  const int d = w / 3;
  require(heads > 0 && d % heads == 0, "attention", "width not divisible by head count");
  const int dh = d / heads;
  const T sc = T(1) / std::sqrt(static_cast<T>(dh));
  // Attention weights per segment and head, row-major L x L blocks.
  auto probs = std::make_shared<std::vector<T>>();
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  int covered = 0;
  for (const auto& [start, count] : segments) {
    require(count > 0 && start >= 0 && start + count <= n, "attention", "bad segment");
    offsets.push_back(total);
    total += static_cast<std::size_t>(heads) * count * count;
    covered += count;
  }
  require(covered == n, "attention", "segments must cover every token once");
  probs->resize(total);
  Tensor<T> out({n, d});
  const auto& x = qkv.value().data;
  for (std::size_t sidx = 0; sidx < segments.size(); ++sidx) {
    const auto [start, L] = segments[sidx];
    for (int h = 0; h < heads; ++h) {
      T* p = probs->data() + offsets[sidx] + static_cast<std::size_t>(h) * L * L;
      for (int i = 0; i < L; ++i) {
        const T* q = &x[static_cast<std::size_t>(start + i) * w + h * dh];
        T mx = -std::numeric_limits<T>::infinity();
        for (int j = 0; j < L; ++j) {
          const T* k = &x[static_cast<std::size_t>(start + j) * w + d + h * dh];
          T s = 0;
          for (int e = 0; e < dh; ++e) s += q[e] * k[e];
          p[i * L + j] = s * sc;
          mx = std::max(mx, p[i * L + j]);
        }
        T z = 0;
        for (int j = 0; j < L; ++j) z += (p[i * L + j] = std::exp(p[i * L + j] - mx));
        for (int j = 0; j < L; ++j) p[i * L + j] /= z;
        T* o = &out.data[static_cast<std::size_t>(start + i) * d + h * dh];
        for (int j = 0; j < L; ++j) {
          const T* v = &x[static_cast<std::size_t>(start + j) * w + 2 * d + h * dh];
          const T pij = p[i * L + j];
          for (int e = 0; e < dh; ++e) o[e] += pij * v[e];
        }
      }
    }
  }
  Graph<T>* g = qkv.graph;
  const int self = next_id(qkv);
  return g->record("attention", std::move(out), {qkv},
                   [g, qkv, probs, offsets, segments, heads, self, w, d, dh, sc] {
    const auto& go = g->grad_or_empty(self).data;
    const auto& x = qkv.value().data;
    auto& gx = g->grad(qkv.id).data;
    std::vector<T> dp;
    for (std::size_t sidx = 0; sidx < segments.size(); ++sidx) {
      const auto [start, L] = segments[sidx];
      dp.assign(static_cast<std::size_t>(L) * L, T(0));
      for (int h = 0; h < heads; ++h) {
        const T* p = probs->data() + offsets[sidx] + static_cast<std::size_t>(h) * L * L;
        // dV = P^T dO and dP = dO V^T.
        for (int i = 0; i < L; ++i) {
          const T* gO = &go[static_cast<std::size_t>(start + i) * d + h * dh];
          for (int j = 0; j < L; ++j) {
            const T* v = &x[static_cast<std::size_t>(start + j) * w + 2 * d + h * dh];
            T* gv = &gx[static_cast<std::size_t>(start + j) * w + 2 * d + h * dh];
            const T pij = p[i * L + j];
            T s = 0;
            for (int e = 0; e < dh; ++e) {
              gv[e] += pij * gO[e];
              s += gO[e] * v[e];
            }
            dp[static_cast<std::size_t>(i) * L + j] = s;
          }
        }
        // dS = P * (dP - rowsum(dP * P)), then dQ = dS K sc, dK = dS^T Q sc.
        for (int i = 0; i < L; ++i) {
          T dot = 0;
          for (int j = 0; j < L; ++j) dot += dp[static_cast<std::size_t>(i) * L + j] * p[i * L + j];
          const T* q = &x[static_cast<std::size_t>(start + i) * w + h * dh];
          T* gq = &gx[static_cast<std::size_t>(start + i) * w + h * dh];
          for (int j = 0; j < L; ++j) {
            const T ds = p[i * L + j] * (dp[static_cast<std::size_t>(i) * L + j] - dot) * sc;
            const T* k = &x[static_cast<std::size_t>(start + j) * w + d + h * dh];
            T* gk = &gx[static_cast<std::size_t>(start + j) * w + d + h * dh];
            for (int e = 0; e < dh; ++e) {
              gq[e] += ds * k[e];
              gk[e] += ds * q[e];
            }
          }
        }
      }
    }
  });
}

template <typename T>
Var<T> sum(Var<T> x) {
  T s = 0;
  for (T v : x.value().data) s += v;
  Graph<T>* g = x.graph;
  const int self = next_id(x);
  return g->record("sum", Tensor<T>({1}, s), {x}, [g, x, self] {
    const T go = g->grad_or_empty(self).data[0];
    for (T& v : g->grad(x.id).data) v += go;
  });
}

template <typename T>
Var<T> mean(Var<T> x) {
  require(x.value().numel() > 0, "mean", "empty input");
  return scale(sum(x), 1.0 / static_cast<double>(x.value().numel()));
}

template <typename T>
Var<T> mse(Var<T> a, Var<T> b) {
  const Var<T> diff = sub(a, b);
  return mean(mul(diff, diff));
}

template <typename T>
Var<T> weighted_row_sum(Var<T> x, std::vector<double> weights) {
  const int n = x.rows(), d = x.cols();
  require(static_cast<int>(weights.size()) == n, "weighted_row_sum", "one weight per row");
  T s = 0;
  const auto& xv = x.value().data;
  for (int i = 0; i < n; ++i) {
    T r = 0;
    for (int j = 0; j < d; ++j) r += xv[static_cast<std::size_t>(i) * d + j];
    s += static_cast<T>(weights[static_cast<std::size_t>(i)]) * r;
  }
  Graph<T>* g = x.graph;
  const int self = next_id(x);
  return g->record("weighted_row_sum", Tensor<T>({1}, s), {x},
                   [g, x, weights = std::move(weights), self, n, d] {
    const T go = g->grad_or_empty(self).data[0];
    auto& gx = g->grad(x.id).data;
    for (int i = 0; i < n; ++i) {
      const T wi = go * static_cast<T>(weights[static_cast<std::size_t>(i)]);
      for (int j = 0; j < d; ++j) gx[static_cast<std::size_t>(i) * d + j] += wi;
    }
  });
}

template <typename T>
Var<T> cross_entropy(Var<T> logits, const std::vector<int>& labels) {
  const int n = logits.rows(), c = logits.cols();
  require(static_cast<int>(labels.size()) == n && n > 0, "cross_entropy", "one label per row");
  for (int y : labels) require(y >= 0 && y < c, "cross_entropy", "label out of range");
  const Var<T> lp = log_softmax(logits);
  std::vector<int> pick(labels.size());
  for (int i = 0; i < n; ++i) pick[static_cast<std::size_t>(i)] = i * c + labels[static_cast<std::size_t>(i)];
  const Var<T> flat = reshape(lp, {n * c, 1});
  return scale(sum(gather_rows(flat, pick)), -1.0 / n);
}

template <typename T>
Var<T> autocorr(Var<T> h) {
  const int c = h.rows(), l = h.cols();
  const int k = 2 * l - 1;
  Tensor<T> out({c, k});
  const auto& hv = h.value().data;
  for (int ch = 0; ch < c; ++ch) {
    const T* x = &hv[static_cast<std::size_t>(ch) * l];
    for (int s = -(l - 1); s <= l - 1; ++s) {
      T acc = 0;
      for (int i = std::max(0, -s); i < std::min(l, l - s); ++i) acc += x[i] * x[i + s];
      out.data[static_cast<std::size_t>(ch) * k + s + l - 1] = acc;
    }
  }
  Graph<T>* g = h.graph;
  const int self = next_id(h);
  return g->record("autocorr", std::move(out), {h}, [g, h, self, c, l, k] {
    const auto& go = g->grad_or_empty(self).data;
    const auto& hv = h.value().data;
    auto& gh = g->grad(h.id).data;
    for (int ch = 0; ch < c; ++ch) {
      const T* x = &hv[static_cast<std::size_t>(ch) * l];
      T* gx = &gh[static_cast<std::size_t>(ch) * l];
      for (int s = -(l - 1); s <= l - 1; ++s) {
        const T gs = go[static_cast<std::size_t>(ch) * k + s + l - 1];
        for (int i = std::max(0, -s); i < std::min(l, l - s); ++i) {
          gx[i] += gs * x[i + s];
          gx[i + s] += gs * x[i];
        }
      }
    }
  });
}

template <typename T>
Var<T> lag_filter(Var<T> win, Var<T> kern) {
  const int b = win.rows(), w = win.cols();
  const int c = kern.rows(), k = kern.cols();
  require(w >= k, "lag_filter", "window shorter than kernel");
  const int p = w - k + 1;
  Tensor<T> out({b * p, c});
  const auto& xv = win.value().data;
  const auto& kv = kern.value().data;
  for (int r = 0; r < b; ++r)
    for (int t = 0; t < p; ++t) {
      const T* x = &xv[static_cast<std::size_t>(r) * w + t];
      T* o = &out.data[(static_cast<std::size_t>(r) * p + t) * c];
      for (int ch = 0; ch < c; ++ch) {
        const T* kc = &kv[static_cast<std::size_t>(ch) * k];
        T acc = 0;
        for (int j = 0; j < k; ++j) acc += kc[j] * x[k - 1 - j];
        o[ch] = acc;
      }
    }
  Graph<T>* g = win.graph;
  const int self = next_id(win);
  return g->record("lag_filter", std::move(out), {win, kern}, [g, win, kern, self, b, w, c, k, p] {
    const auto& go = g->grad_or_empty(self).data;
    const auto& xv = win.value().data;
    const auto& kv = kern.value().data;
    const bool gw = needs(win), gk = needs(kern);
    T* dx = gw ? g->grad(win.id).data.data() : nullptr;
    T* dk = gk ? g->grad(kern.id).data.data() : nullptr;
    for (int r = 0; r < b; ++r)
      for (int t = 0; t < p; ++t) {
        const std::size_t base = static_cast<std::size_t>(r) * w + t;
        const T* o = &go[(static_cast<std::size_t>(r) * p + t) * c];
        for (int ch = 0; ch < c; ++ch) {
          const T gch = o[ch];
          if (gch == T(0)) continue;
          for (int j = 0; j < k; ++j) {
            const std::size_t xi = base + static_cast<std::size_t>(k - 1 - j);
            if (gk) dk[static_cast<std::size_t>(ch) * k + j] += gch * xv[xi];
            if (gw) dx[xi] += gch * kv[static_cast<std::size_t>(ch) * k + j];
          }
        }
      }
  });
}

#define MAELOC_INSTANTIATE(T)                                                                  \
  template Var<T> add(Var<T>, Var<T>);                                                         \
  template Var<T> sub(Var<T>, Var<T>);                                                         \
  template Var<T> mul(Var<T>, Var<T>);                                                         \
  template Var<T> scale(Var<T>, double);                                                       \
  template Var<T> add_row(Var<T>, Var<T>);                                                     \
  template Var<T> matmul(Var<T>, Var<T>);                                                      \
  template Var<T> linear(Var<T>, Var<T>, Var<T>);                                              \
  template Var<T> gelu(Var<T>);                                                                \
  template Var<T> relu(Var<T>);                                                                \
  template Var<T> softmax(Var<T>);                                                             \
  template Var<T> log_softmax(Var<T>);                                                         \
  template Var<T> layer_norm(Var<T>, Var<T>, Var<T>);                                          \
  template Var<T> batch_norm(Var<T>, Var<T>, Var<T>, BatchNormStats<T>&, bool, double);        \
  template Var<T> concat_rows(const std::vector<Var<T>>&);                                     \
  template Var<T> concat_cols(const std::vector<Var<T>>&);                                     \
  template Var<T> gather_rows(Var<T>, std::vector<int>);                                       \
  template Var<T> reshape(Var<T>, std::vector<int>);                                           \
  template Var<T> flip_cols(Var<T>);                                                           \
  template Var<T> segment_max(Var<T>, const Segments&);                                        \
  template Var<T> attention(Var<T>, int, const Segments&);                                     \
  template Var<T> sum(Var<T>);                                                                 \
  template Var<T> mean(Var<T>);                                                                \
  template Var<T> mse(Var<T>, Var<T>);                                                         \
  template Var<T> weighted_row_sum(Var<T>, std::vector<double>);                               \
  template Var<T> cross_entropy(Var<T>, const std::vector<int>&);                              \
  template Var<T> autocorr(Var<T>);                                                            \
  template Var<T> lag_filter(Var<T>, Var<T>);

MAELOC_INSTANTIATE(float)
MAELOC_INSTANTIATE(double)

}  // namespace maeloc::ag
