#pragma once

#include <cstddef>
#include <string>
#include <string_view>

#include "kgt/autograd.hpp"
#include "kgt/keygraph.hpp"

namespace kgt {

/// Projection weights of one attention block. All four matrices are [c×c];
/// heads split the channels into contiguous blocks of d = c/heads.
template <class T>
struct AttentionParams {
  Var<T> w_qry, w_key, w_val, w_out;
  std::size_t heads = 1;

  std::size_t channels() const { return w_qry.dim(0); }
  std::size_t head_dim() const { return channels() / heads; }
  void validate() const;
};

enum class BackendKind { Gather, Mask, Streaming };

/// Realization of Key-Graph attention. All three produce the same output.
struct Backend {
  BackendKind kind = BackendKind::Gather;
  std::size_t block_size = 16;  // Streaming only

  static Backend gather() { return {BackendKind::Gather, 16}; }
  static Backend mask() { return {BackendKind::Mask, 16}; }
  static Backend streaming(std::size_t block_size = 16);

  std::string name() const;
  /// Accepts "gather", "mask" or "streaming".
  static Backend parse(std::string_view name, std::size_t block_size = 16);
};

template <class T>
struct Projected {
  Var<T> q, k, v;  // each [B×heads×hw×d]
};

/// Linear projections of v[B×hw×c] followed by the head split.
template <class T>
Projected<T> project(const Var<T>& v, const AttentionParams<T>& p);

/// [B×hw×c] -> [B×heads×hw×d], contiguous channel blocks per head.
template <class T>
Var<T> split_heads(const Var<T>& x, std::size_t heads);

/// Full softmax(q·kᵀ/√d)·v over every node of the window. With
/// `exclude_self` the diagonal logits are masked out.
template <class T>
Var<T> dense_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, bool exclude_self = false);

/// Attention of every query restricted to its k graph neighbors.
template <class T>
Var<T> keygraph_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, const KeyGraph& g,
                          const Backend& backend);

/// Concatenates heads back to [B×hw×c] and applies w_out.
template <class T>
Var<T> merge_heads(const Var<T>& x, const Var<T>& w_out);

}  // namespace kgt
