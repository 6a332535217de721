#pragma once

#include <cstddef>
#include <limits>

#include "kgt/autograd.hpp"

// Differentiable operator set. Every operator takes and returns Var<T>; when no
// input requires a gradient nothing is recorded, so the same code serves
// inference. Instantiated for float (training/inference) and double
// (gradient checking).
namespace kgt {

/// Additive-mask value standing in for -infinity. Finite so exp() stays defined.
template <class T>
constexpr T masked_logit() {
  return std::numeric_limits<T>::lowest();
}

/// c = a·b for a[m×p], b[p×n].
template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b);

/// Applies w[p×n] to the last axis of x[...×p].
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w);

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b);

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b);

template <class T>
Var<T> scale(const Var<T>& a, T s);

/// Sum of all elements, as a one-element tensor.
template <class T>
Var<T> sum(const Var<T>& a);

template <class T>
Var<T> reshape(const Var<T>& a, Shape shape);

/// Row softmax over the last axis (leading axes flattened into rows).
template <class T>
Var<T> softmax_rows(const Var<T>& x);

/// As above with an additive mask of the same shape holding 0 or masked_logit().
/// A row whose mask is entirely masked_logit() raises DegenerateRowError.
template <class T>
Var<T> softmax_rows(const Var<T>& x, const Tensor<T>& additive_mask);

/// x·Φ(x) with the exact Gaussian CDF.
template <class T>
Var<T> gelu(const Var<T>& x);

/// Normalizes each row of x[...×n] then applies gamma[n], beta[n].
template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5));

/// 3×3 convolution with reflect padding of 1. x is [C×H×W] or [N×C×H×W];
/// w is [C_out×C_in×3×3], b is [C_out].
template <class T>
Var<T> conv2d_3x3(const Var<T>& x, const Var<T>& w, const Var<T>& b);

/// Mean absolute difference; subgradient 0 at exact ties. `target` is constant.
template <class T>
Var<T> l1_loss(const Var<T>& pred, const Tensor<T>& target);

/// Reflect (mirror, edge not repeated) index into [0, n).
inline std::size_t reflect_index(long i, std::size_t n) {
  if (n == 1) return 0;
  const long period = 2 * (static_cast<long>(n) - 1);
  i %= period;
  if (i < 0) i += period;
  return static_cast<std::size_t>(i < static_cast<long>(n) ? i : period - i);
}

namespace kernels {
/// Sums in a fixed lane order, so the result depends only on the values and
/// not on the address of the buffer.
template <class T>
inline T sum_fixed(const T* a, std::size_t n) {
  T acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (std::size_t l = 0; l < 8; ++l) acc[l] += a[i + l];
  for (std::size_t l = 0; i < n; ++i, ++l) acc[l] += a[i];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

template <class T>
inline T dot_fixed(const T* a, const T* b, std::size_t n) {
  T acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (std::size_t l = 0; l < 8; ++l) acc[l] += a[i + l] * b[i + l];
  for (std::size_t l = 0; i < n; ++i, ++l) acc[l] += a[i] * b[i];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

/// In-place stable softmax over `rows` rows of length `cols`.
template <class T>
void softmax_rows_inplace(T* data, std::size_t rows, std::size_t cols);
}  // namespace kernels

}  // namespace kgt
