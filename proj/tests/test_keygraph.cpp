#include <algorithm>
#include <numeric>

#include "doctest.h"
#include "helpers.hpp"
#include "kgt/instrument.hpp"
#include "kgt/keygraph.hpp"

using namespace kgt;
using testing::randn;

namespace {
std::vector<std::int32_t> row_vec(const KeyGraph& g, std::size_t w, std::size_t i) {
  auto r = g.row(w, i);
  return {r.begin(), r.end()};
}
}  // namespace

TEST_SUITE("keygraph") {

TEST_CASE("similarity examples") {
  Tensor<double> ortho({3, 3});
  for (std::size_t i = 0; i < 3; ++i) ortho.at({i, i}) = 1;
  CHECK(similarity(ortho) == ortho);

  Tensor<double> same({4, 2}, std::vector<double>{0.6, 0.8, 0.6, 0.8, 0.6, 0.8, 0.6, 0.8});
  const auto ones = similarity(same);
  for (double v : ones.data()) CHECK(v == doctest::Approx(1.0));

  Tensor<double> v({4, 2}, std::vector<double>{1, 0, 0.9, 0.1, 0, 1, 0.1, 0.9});
  auto a = similarity(v);
  CHECK(a.at({0, 1}) == doctest::Approx(0.9));
  CHECK(a.at({2, 3}) == doctest::Approx(0.9));
  CHECK(a.at({0, 2}) == 0.0);
  CHECK(a.at({1, 3}) == doctest::Approx(0.18));

  auto g = select_topk(a, 1);
  CHECK(row_vec(g, 0, 0) == std::vector<std::int32_t>{1});
  CHECK(row_vec(g, 0, 1) == std::vector<std::int32_t>{0});
  CHECK(row_vec(g, 0, 2) == std::vector<std::int32_t>{3});
  CHECK(row_vec(g, 0, 3) == std::vector<std::int32_t>{2});
}

TEST_CASE("similarity is exactly symmetric") {
  auto a = similarity(randn({33, 7}, 3));
  for (std::size_t i = 0; i < 33; ++i)
    for (std::size_t j = 0; j < 33; ++j) CHECK(a.at({i, j}) == a.at({j, i}));
}

TEST_CASE("tie rule and exhaustion") {
  auto g = select_topk(Tensor<float>({4, 4}, 1.f), 2);
  CHECK(row_vec(g, 0, 0) == std::vector<std::int32_t>{1, 2});
  CHECK(row_vec(g, 0, 1) == std::vector<std::int32_t>{0, 2});
  CHECK(row_vec(g, 0, 2) == std::vector<std::int32_t>{0, 1});
  CHECK(row_vec(g, 0, 3) == std::vector<std::int32_t>{0, 1});

  auto full = select_topk(randn({6, 6}, 2), 5);
  for (std::size_t i = 0; i < 6; ++i) {
    auto r = row_vec(full, 0, i);
    std::vector<std::int32_t> expect;
    for (std::int32_t j = 0; j < 6; ++j)
      if (j != static_cast<std::int32_t>(i)) expect.push_back(j);
    CHECK(r == expect);
  }
}

TEST_CASE("k out of range") {
  auto a = randn({5, 5}, 1);
  CHECK_THROWS_AS(select_topk(a, 0), ConfigError);
  CHECK_THROWS_AS(select_topk(a, 5), ConfigError);
  CHECK_THROWS_AS(build_graph(randn({2, 5, 3}, 1), 5), ConfigError);
}

TEST_CASE("select_topk equals the full-sort oracle for every hw up to 64 and every k") {
  std::uint64_t seed = 0;
  for (std::size_t hw = 2; hw <= 64; ++hw) {
    // Quantized values force plenty of ties.
    auto a = randn({hw, hw}, ++seed);
    if (hw % 2 == 0)
      for (auto& v : a.data()) v = std::round(v * 2) / 2;
    for (std::size_t k = 1; k <= hw - 1; ++k) {
      auto g = select_topk(a, k);
      bool ok = true;
      for (std::size_t i = 0; i < hw; ++i) ok = ok && row_vec(g, 0, i) == testing::topk_oracle(a.ptr() + i * hw, i, hw, k);
      CHECK_MESSAGE(ok, "hw=" << hw << " k=" << k);
    }
  }
}

TEST_CASE("neighbor sets grow monotonically with k") {
  auto a = randn({24, 24}, 9);
  for (auto& v : a.data()) v = std::round(v * 3);
  for (std::size_t k = 1; k < 23; ++k) {
    auto small = select_topk(a, k), big = select_topk(a, k + 1);
    for (std::size_t i = 0; i < 24; ++i) {
      auto s = row_vec(small, 0, i), b = row_vec(big, 0, i);
      CHECK(std::includes(b.begin(), b.end(), s.begin(), s.end()));
    }
  }
}

TEST_CASE("graph invariants hold") {
  auto g = build_graph(randn({5, 16, 4}, 2), 6);
  CHECK_NOTHROW(g.validate());
  CHECK(g.windows == 5);
  CHECK(g.win_nodes == 16);
  g.row(2, 3)[0] = 3;
  CHECK_THROWS_AS(g.validate(), IntegrityError);
}

TEST_CASE("build equals per-window brute force") {
  auto v = randn({6, 16, 3}, 4);
  const auto g = build_graph(v, 5);
  for (std::size_t w = 0; w < 6; ++w) {
    Tensor<float> nodes({16, 3});
    std::copy_n(v.ptr() + w * 48, 48, nodes.ptr());
    auto a = similarity(nodes);
    for (std::size_t i = 0; i < 16; ++i) CHECK(row_vec(g, w, i) == testing::topk_oracle(a.ptr() + i * 16, i, 16, 5));
  }
}

TEST_CASE("identical windows give identical tables; constant windows pick lowest indices") {
  auto one = randn({1, 9, 2}, 8);
  Tensor<float> rep({3, 9, 2});
  for (std::size_t w = 0; w < 3; ++w) std::copy_n(one.ptr(), 18, rep.ptr() + w * 18);
  auto g = build_graph(rep, 4);
  for (std::size_t i = 0; i < 9; ++i) {
    CHECK(row_vec(g, 0, i) == row_vec(g, 1, i));
    CHECK(row_vec(g, 0, i) == row_vec(g, 2, i));
  }
  auto c = build_graph(Tensor<float>({2, 9, 2}, 0.5f), 3);
  CHECK(row_vec(c, 1, 0) == std::vector<std::int32_t>{1, 2, 3});
  CHECK(row_vec(c, 1, 5) == std::vector<std::int32_t>{0, 1, 2});
}

TEST_CASE("build is permutation equivariant when similarities are distinct") {
  const std::size_t hw = 16;
  auto v = randn({1, hw, 4}, 12);
  std::vector<std::size_t> perm(hw);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(5));
  Tensor<float> pv({1, hw, 4});
  for (std::size_t i = 0; i < hw; ++i) std::copy_n(v.ptr() + perm[i] * 4, 4, pv.ptr() + i * 4);
  std::vector<std::int32_t> inv(hw);
  for (std::size_t i = 0; i < hw; ++i) inv[perm[i]] = static_cast<std::int32_t>(i);
  for (std::size_t k : {1, 3, 7, 15}) {
    auto g = build_graph(v, k), pg = build_graph(pv, k);
    for (std::size_t i = 0; i < hw; ++i) {
      auto expect = row_vec(g, 0, perm[i]);
      for (auto& j : expect) j = inv[static_cast<std::size_t>(j)];
      std::sort(expect.begin(), expect.end());
      CHECK(row_vec(pg, 0, i) == expect);
    }
  }
}

TEST_CASE("each batched build counts once") {
  instrument::reset();
  build_graph(randn({4, 9, 2}, 1), 2);
  build_graph(randn({4, 9, 2}, 2), 2);
  CHECK(instrument::snapshot().graph_builds == 2);
}

}  // TEST_SUITE
