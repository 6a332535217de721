#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "kgt/tensor.hpp"

namespace kgt {

/// Per-window top-k neighbor table, shared by every layer of a stage.
///
/// Row (w, i) lists the k nodes most similar to node i of window w, never i
/// itself, without duplicates, in ascending index order.
struct KeyGraph {
  std::size_t windows = 0;
  std::size_t win_nodes = 0;
  std::size_t k = 0;
  std::vector<std::int32_t> neighbors;  // [windows×win_nodes×k]

  std::span<const std::int32_t> row(std::size_t window, std::size_t node) const {
    return {neighbors.data() + (window * win_nodes + node) * k, k};
  }
  std::span<std::int32_t> row(std::size_t window, std::size_t node) {
    return {neighbors.data() + (window * win_nodes + node) * k, k};
  }

  /// Throws IntegrityError unless every invariant above holds.
  void validate() const;

  friend bool operator==(const KeyGraph&, const KeyGraph&) = default;
};

/// A[i,j] = v_i · v_j for v[hw×c]; no scaling or normalization.
template <class T>
Tensor<T> similarity(const Tensor<T>& v);

/// Single-window selection: per row the k largest off-diagonal entries of
/// a[hw×hw]. Ties go to the lower column index. Requires 1 ≤ k ≤ hw−1.
template <class T>
KeyGraph select_topk(const Tensor<T>& a, std::size_t k);

/// Batched construction over v[B×hw×c]. Counts as one graph build.
template <class T>
KeyGraph build_graph(const Tensor<T>& v, std::size_t k);

}  // namespace kgt
