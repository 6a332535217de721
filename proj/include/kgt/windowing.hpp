#pragma once

#include <cstddef>

#include "kgt/autograd.hpp"

namespace kgt {

/// A feature map re-laid-out as independent windows of win·win nodes.
///
/// Windows are ordered image-major, then row-major over the window grid;
/// nodes inside a window are row-major. `nodes` is [B×hw×C] with
/// B = images·(padded_h/win)·(padded_w/win).
template <class T>
struct WindowBatch {
  Var<T> nodes;
  std::size_t win = 0;
  std::size_t images = 1;
  std::size_t channels = 0;
  std::size_t padded_h = 0, padded_w = 0;
  std::size_t orig_h = 0, orig_w = 0;
  bool batched = false;  // source was [N×C×H×W] rather than [C×H×W]

  std::size_t win_nodes() const { return win * win; }
  std::size_t windows() const { return nodes.dim(0); }
  std::size_t grid_h() const { return padded_h / win; }
  std::size_t grid_w() const { return padded_w / win; }

  /// Throws IntegrityError when the bookkeeping fields disagree.
  void validate() const;
};

/// Splits f ([C×H×W] or [N×C×H×W]) into windows, reflect-padding the bottom
/// and right edges up to multiples of `win`. Requires win ≥ 2.
template <class T>
WindowBatch<T> partition(const Var<T>& f, std::size_t win);

/// Exact inverse of partition, cropping the padding.
template <class T>
Var<T> merge(const WindowBatch<T>& wb);

/// Padded extent for a side of length n.
inline std::size_t padded_extent(std::size_t n, std::size_t win) {
  return ((n + win - 1) / win) * win;
}

}  // namespace kgt
