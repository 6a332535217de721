#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "kgt/tensor.hpp"

namespace testing {

template <class T = float>
kgt::Tensor<T> randn(kgt::Shape shape, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  kgt::Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(g(rng));
  return t;
}

template <class T = float>
kgt::Tensor<T> uniform(kgt::Shape shape, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  kgt::Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(u(rng));
  return t;
}

// Brute-force neighbor oracle: sort every off-diagonal column by
// (value desc, index asc), keep k, return ascending.
template <class T>
std::vector<std::int32_t> topk_oracle(const T* row, std::size_t i, std::size_t hw, std::size_t k) {
  std::vector<std::int32_t> idx;
  for (std::size_t j = 0; j < hw; ++j)
    if (j != i) idx.push_back(static_cast<std::int32_t>(j));
  std::sort(idx.begin(), idx.end(), [row](std::int32_t a, std::int32_t b) {
    return row[a] > row[b] || (row[a] == row[b] && a < b);
  });
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

// Nested-loop 3×3 convolution with reflect padding on x[C×H×W].
template <class T>
kgt::Tensor<T> conv_oracle(const kgt::Tensor<T>& x, const kgt::Tensor<T>& w, const kgt::Tensor<T>& b) {
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2), Co = w.dim(0);
  auto refl = [](long i, std::size_t n) -> std::size_t {
    if (n == 1) return 0;
    if (i < 0) return static_cast<std::size_t>(-i);
    if (i >= static_cast<long>(n)) return 2 * (n - 1) - static_cast<std::size_t>(i);
    return static_cast<std::size_t>(i);
  };
  kgt::Tensor<T> out({Co, H, W});
  for (std::size_t o = 0; o < Co; ++o)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t xx = 0; xx < W; ++xx) {
        double s = b[o];
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t ky = 0; ky < 3; ++ky)
            for (std::size_t kx = 0; kx < 3; ++kx)
              s += static_cast<double>(w.at({o, c, ky, kx})) *
                   x.at({c, refl(static_cast<long>(y + ky) - 1, H), refl(static_cast<long>(xx + kx) - 1, W)});
        out.at({o, y, xx}) = static_cast<T>(s);
      }
  return out;
}

// Dense row-stochastic attention over an explicit neighbor list, in double.
template <class T>
std::vector<double> attend_oracle(const T* q, const T* K, const T* V, const std::vector<std::size_t>& keys,
                                  std::size_t d) {
  std::vector<double> logit(keys.size()), out(d, 0.0);
  double mx = -1e300;
  for (std::size_t t = 0; t < keys.size(); ++t) {
    double s = 0;
    for (std::size_t c = 0; c < d; ++c) s += static_cast<double>(q[c]) * K[keys[t] * d + c];
    logit[t] = s / std::sqrt(static_cast<double>(d));
    mx = std::max(mx, logit[t]);
  }
  double z = 0;
  for (auto& l : logit) z += (l = std::exp(l - mx));
  for (std::size_t t = 0; t < keys.size(); ++t)
    for (std::size_t c = 0; c < d; ++c) out[c] += logit[t] / z * V[keys[t] * d + c];
  return out;
}

}  // namespace testing
