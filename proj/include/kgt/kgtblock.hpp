#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "kgt/attention.hpp"
#include "kgt/autograd.hpp"

namespace kgt {

template <class T>
struct LayerNormParams {
  Var<T> gamma, beta;
};

/// One transformer layer: graph attention then a GELU feed-forward block,
/// each behind a pre-normalization and a residual connection.
template <class T>
struct KGTLayerParams {
  AttentionParams<T> attn;
  Var<T> ffn_w1;  // [c×r·c]
  Var<T> ffn_w2;  // [r·c×c]
  LayerNormParams<T> norm1, norm2;

  std::size_t channels() const { return attn.channels(); }
  std::size_t ratio() const { return ffn_w1.dim(1) / channels(); }
  void validate() const;
  std::vector<Var<T>> parameters() const;
};

/// N_layer layers sharing one graph, closed by a residual 3×3 convolution.
template <class T>
struct KGTStageParams {
  std::vector<KGTLayerParams<T>> layers;
  Var<T> tail_w;  // [C×C×3×3]
  Var<T> tail_b;  // [C]

  void validate() const;
  std::vector<Var<T>> parameters() const;
};

/// Truncated-normal(0, std) weights resampled outside ±2·std.
template <class T>
Tensor<T> trunc_normal(Shape shape, T std, std::mt19937_64& rng);

/// Layer with random projection/FFN weights, unit norms, and w_out as given
/// by `zero_out` (zero keeps the attention branch silent at start).
template <class T>
KGTLayerParams<T> init_layer(const std::string& prefix, std::size_t channels, std::size_t heads,
                             std::size_t ratio, std::mt19937_64& rng, bool zero_out = true,
                             T std = T(0.02));

template <class T>
KGTStageParams<T> init_stage(const std::string& prefix, std::size_t channels, std::size_t heads,
                             std::size_t ratio, std::size_t n_layers, std::mt19937_64& rng,
                             bool zero_tail = true, T std = T(0.02));

/// v_hat + GELU(v_hat·w1)·w2.
template <class T>
Var<T> ffn(const Var<T>& v_hat, const Var<T>& w1, const Var<T>& w2);

/// u = v + merge_heads(attention(project(norm1(v)))); out = u + GELU(norm2(u)·w1)·w2.
template <class T>
Var<T> kgt_layer_forward(const Var<T>& v, const KeyGraph& g, const KGTLayerParams<T>& p,
                         const Backend& backend);

/// Partition, build the graph once from the raw node features, run every
/// layer on it, merge, and add the tail convolution to the input. k above
/// win²−1 is clamped with a warning.
template <class T>
Var<T> kgt_stage_forward(const Var<T>& f_in, const KGTStageParams<T>& p, std::size_t k,
                         std::size_t win, const Backend& backend);

/// Neighbor count actually used for a window side.
std::size_t clamp_k(std::size_t k, std::size_t win);

}  // namespace kgt
