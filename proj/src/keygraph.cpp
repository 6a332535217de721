#include "kgt/keygraph.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <functional>
#include <string>

#include "kgt/instrument.hpp"

namespace kgt {
namespace {

void check_k(std::size_t k, std::size_t hw) {
  if (k < 1 || hw < 2 || k > hw - 1) {
    throw ConfigError("top-k: k = " + std::to_string(k) + " outside [1, " +
                      std::to_string(hw > 0 ? hw - 1 : 0) + "]");
  }
}

template <class T>
void similarity_into(const T* v, std::size_t hw, std::size_t c, T* a) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const auto n = static_cast<Eigen::Index>(hw);
  Eigen::Map<const Mat> V(v, n, static_cast<Eigen::Index>(c));
  Eigen::Map<Mat> A(a, n, n);
  A.noalias() = V * V.transpose();
  // Mirror the upper triangle so A is exactly symmetric.
  for (std::size_t i = 0; i < hw; ++i)
    for (std::size_t j = i + 1; j < hw; ++j) a[j * hw + i] = a[i * hw + j];
}

// Writes the k chosen columns of row i (ascending) into out. The k-th
// largest value is the threshold; ties at it go to the lowest indices.
template <class T>
void topk_row(const T* row, std::size_t i, std::size_t hw, std::size_t k, std::vector<T>& scratch,
              std::int32_t* out) {
  scratch.assign(row, row + hw);
  scratch.erase(scratch.begin() + static_cast<std::ptrdiff_t>(i));
  std::nth_element(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(k - 1), scratch.end(),
                   std::greater<T>());
  const T thr = scratch[k - 1];
  std::size_t above = 0;
  for (std::size_t j = 0; j < hw; ++j) above += (j != i && row[j] > thr);
  std::size_t ties = k - above, n = 0;
  for (std::size_t j = 0; j < hw && n < k; ++j) {
    if (j == i) continue;
    if (row[j] > thr) {
      out[n++] = static_cast<std::int32_t>(j);
    } else if (row[j] == thr && ties > 0) {
      out[n++] = static_cast<std::int32_t>(j);
      --ties;
    }
  }
}

}  // namespace

void KeyGraph::validate() const {
  auto fail = [](const std::string& what) { throw IntegrityError("key graph: " + what); };
  if (win_nodes < 2 || k < 1 || k > win_nodes - 1) fail("k out of range for window");
  if (neighbors.size() != windows * win_nodes * k) fail("neighbor table size mismatch");
  for (std::size_t w = 0; w < windows; ++w)
    for (std::size_t i = 0; i < win_nodes; ++i) {
      auto r = row(w, i);
      for (std::size_t t = 0; t < k; ++t) {
        if (r[t] < 0 || static_cast<std::size_t>(r[t]) >= win_nodes) fail("index out of range");
        if (static_cast<std::size_t>(r[t]) == i) fail("self loop");
        if (t > 0 && r[t] <= r[t - 1]) fail("row not strictly ascending");
      }
    }
}

template <class T>
Tensor<T> similarity(const Tensor<T>& v) {
  if (v.rank() != 2) throw DimensionError("similarity: expected [hw×c], got " + to_string(v.shape()));
  const std::size_t hw = v.dim(0), c = v.dim(1);
  Tensor<T> a(Shape{hw, hw});
  similarity_into(v.ptr(), hw, c, a.ptr());
  return a;
}

template <class T>
KeyGraph select_topk(const Tensor<T>& a, std::size_t k) {
  if (a.rank() != 2 || a.dim(0) != a.dim(1)) {
    throw DimensionError("select_topk: expected square matrix, got " + to_string(a.shape()));
  }
  const std::size_t hw = a.dim(0);
  check_k(k, hw);
  KeyGraph g{1, hw, k, std::vector<std::int32_t>(hw * k)};
  std::vector<T> scratch;
  scratch.reserve(hw);
  for (std::size_t i = 0; i < hw; ++i) topk_row(a.ptr() + i * hw, i, hw, k, scratch, g.row(0, i).data());
  return g;
}

template <class T>
KeyGraph build_graph(const Tensor<T>& v, std::size_t k) {
  if (v.rank() != 3) throw DimensionError("build_graph: expected [B×hw×c], got " + to_string(v.shape()));
  const std::size_t B = v.dim(0), hw = v.dim(1), c = v.dim(2);
  check_k(k, hw);
  instrument::note_graph_build();
  KeyGraph g{B, hw, k, std::vector<std::int32_t>(B * hw * k)};
#pragma omp parallel
  {
    std::vector<T> a(hw * hw);
    std::vector<T> scratch;
    scratch.reserve(hw);
#pragma omp for schedule(static)
    for (std::ptrdiff_t wi = 0; wi < static_cast<std::ptrdiff_t>(B); ++wi) {
      const auto w = static_cast<std::size_t>(wi);
      similarity_into(v.ptr() + w * hw * c, hw, c, a.data());
      for (std::size_t i = 0; i < hw; ++i) topk_row(a.data() + i * hw, i, hw, k, scratch, g.row(w, i).data());
    }
  }
  return g;
}

template Tensor<float> similarity(const Tensor<float>&);
template Tensor<double> similarity(const Tensor<double>&);
template KeyGraph select_topk(const Tensor<float>&, std::size_t);
template KeyGraph select_topk(const Tensor<double>&, std::size_t);
template KeyGraph build_graph(const Tensor<float>&, std::size_t);
template KeyGraph build_graph(const Tensor<double>&, std::size_t);

}  // namespace kgt
