#pragma once

#include <utility>
#include <vector>

#include "maeloc/autograd/graph.hpp"

namespace maeloc::ag {

/// Contiguous row ranges (start, count); attention and pooling never cross
/// a range boundary.
using Segments = std::vector<std::pair<int, int>>;

inline constexpr double kGeluC = 0.044715;
inline constexpr double kNormEps = 1e-5;

// Elementwise. Operands have the same number of elements; the result takes
// the shape of the first.
template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> a, double c);
/// x[n, d] + v broadcast over rows, v with d elements.
template <typename T> Var<T> add_row(Var<T> x, Var<T> v);

template <typename T> Var<T> matmul(Var<T> a, Var<T> b);
/// x[n, in] W^T + b with W[out, in]; `b` may be invalid (no bias).
template <typename T> Var<T> linear(Var<T> x, Var<T> w, Var<T> b);

/// Tanh approximation.
template <typename T> Var<T> gelu(Var<T> x);
template <typename T> Var<T> relu(Var<T> x);
/// Along the last axis (rows of the matrix view).
template <typename T> Var<T> softmax(Var<T> x);
template <typename T> Var<T> log_softmax(Var<T> x);

/// Per-row normalisation with affine gamma, beta.
template <typename T> Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta);

template <typename T>
struct BatchNormStats {
  Tensor<T> mean;
  Tensor<T> var;
};
/// Per-column normalisation. Training mode uses batch statistics and
/// updates `running` with `momentum`; eval mode uses `running`.
template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, BatchNormStats<T>& running, bool training,
                  double momentum = 0.1);

template <typename T> Var<T> concat_rows(const std::vector<Var<T>>& parts);
template <typename T> Var<T> concat_cols(const std::vector<Var<T>>& parts);
/// Rows of x at `index` (repeats allowed).
template <typename T> Var<T> gather_rows(Var<T> x, std::vector<int> index);
template <typename T> Var<T> reshape(Var<T> x, std::vector<int> shape);
/// Reverses the column order of every row.
template <typename T> Var<T> flip_cols(Var<T> x);

/// Elementwise max over the rows of each segment: [segments, d]. Ties go
/// to the earliest row.
template <typename T> Var<T> segment_max(Var<T> x, const Segments& segments);

/// Multi-head scaled dot-product attention. qkv[n, 3d] holds queries, keys
/// and values side by side; tokens attend to all tokens of their segment.
template <typename T> Var<T> attention(Var<T> qkv, int heads, const Segments& segments);

template <typename T> Var<T> sum(Var<T> x);
template <typename T> Var<T> mean(Var<T> x);
/// Mean of (a - b)^2 over all elements.
template <typename T> Var<T> mse(Var<T> a, Var<T> b);
/// sum_i w_i * sum_j x[i, j].
template <typename T> Var<T> weighted_row_sum(Var<T> x, std::vector<double> weights);
/// Mean over rows of -log softmax(logits)[label].
template <typename T> Var<T> cross_entropy(Var<T> logits, const std::vector<int>& labels);

/// Full autocorrelation of each row of h[C, L]: [C, 2L - 1], centre at L - 1.
template <typename T> Var<T> autocorr(Var<T> h);
/// out[b * P + t, c] = sum_k kern[c, k] * win[b, t + K - 1 - k] with
/// win[B, W], kern[C, K] and P = W - K + 1 output lags per row of win.
template <typename T> Var<T> lag_filter(Var<T> win, Var<T> kern);

}  // namespace maeloc::ag
