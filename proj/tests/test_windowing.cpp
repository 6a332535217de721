#include "doctest.h"
#include "helpers.hpp"
#include "kgt/ops.hpp"
#include "kgt/windowing.hpp"

using namespace kgt;
using testing::randn;

TEST_SUITE("windowing") {

TEST_CASE("partition arithmetic") {
  auto wb = partition(Var<float>(randn({1, 8, 8}, 1)), 4);
  CHECK(wb.windows() == 4);
  CHECK(wb.win_nodes() == 16);
  CHECK(wb.nodes.shape() == Shape{4, 16, 1});

  auto padded = partition(Var<float>(randn({3, 10, 10}, 2)), 4);
  CHECK(padded.padded_h == 12);
  CHECK(padded.padded_w == 12);
  CHECK(padded.windows() == 9);
  CHECK(padded.nodes.shape() == Shape{9, 16, 3});
  CHECK(padded.orig_h == 10);
}

TEST_CASE("window and node order") {
  // 1 channel 4x4 image holding its own flat index, window 2.
  Tensor<float> f({1, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) f[i] = static_cast<float>(i);
  auto wb = partition(Var<float>(f), 2);
  const std::vector<float> expect{0, 1, 4, 5, 2, 3, 6, 7, 8, 9, 12, 13, 10, 11, 14, 15};
  CHECK(wb.nodes.value().vector() == expect);
}

TEST_CASE("constant image gives identical nodes") {
  auto wb = partition(Var<float>(Tensor<float>({2, 9, 7}, 0.3f)), 4);
  for (float v : wb.nodes.value().data()) CHECK(v == 0.3f);
}

TEST_CASE("window below 2 is rejected") {
  CHECK_THROWS_AS(partition(Var<float>(randn({1, 4, 4}, 1)), 1), ConfigError);
  CHECK_THROWS_AS(partition(Var<float>(randn({1, 4, 4}, 1)), 0), ConfigError);
}

TEST_CASE("round trip for all small extents") {
  std::uint64_t seed = 0;
  for (std::size_t win : {2, 4, 8})
    for (std::size_t H = 1; H <= 32; H += 3)
      for (std::size_t W = 1; W <= 32; W += 5) {
        auto f = randn({2, H, W}, ++seed);
        auto wb = partition(Var<float>(f), win);
        CHECK(wb.padded_h % win == 0);
        CHECK(wb.windows() == (wb.padded_h / win) * (wb.padded_w / win));
        CHECK(merge(wb).value() == f);
      }
  for (std::size_t H : {7, 8, 10})
    for (std::size_t W : {7, 8, 10}) {
      auto f = randn({3, H, W}, ++seed);
      CHECK(merge(partition(Var<float>(f), 4)).value() == f);
    }
}

TEST_CASE("batched round trip") {
  auto f = randn({3, 2, 9, 6}, 5);
  auto wb = partition(Var<float>(f), 4);
  CHECK(wb.images == 3);
  CHECK(wb.windows() == 3 * 3 * 2);
  CHECK(merge(wb).value() == f);
}

TEST_CASE("reflect padding introduces no new extremes") {
  for (std::uint64_t s = 0; s < 10; ++s) {
    auto f = randn({1, 5 + s, 11 - s / 2}, s);
    auto wb = partition(Var<float>(f), 4);
    auto [lo, hi] = std::minmax_element(f.data().begin(), f.data().end());
    auto [plo, phi] = std::minmax_element(wb.nodes.value().data().begin(), wb.nodes.value().data().end());
    CHECK(*plo == *lo);
    CHECK(*phi == *hi);
  }
}

TEST_CASE("padding values follow reflection") {
  Tensor<float> f({1, 3, 3});
  for (std::size_t i = 0; i < 9; ++i) f[i] = static_cast<float>(i);
  auto wb = partition(Var<float>(f), 2);  // padded to 4x4
  // Window (1,1) covers padded rows 2..3, cols 2..3; row 3 reflects to row 1, col 3 to col 1.
  const auto& n = wb.nodes.value();
  const std::size_t w = 3;
  CHECK(n.at({w, 0, 0}) == f.at({0, 2, 2}));
  CHECK(n.at({w, 1, 0}) == f.at({0, 2, 1}));
  CHECK(n.at({w, 2, 0}) == f.at({0, 1, 2}));
  CHECK(n.at({w, 3, 0}) == f.at({0, 1, 1}));
}

TEST_CASE("single window merge is a reshape") {
  auto f = randn({1, 4, 4}, 3);
  auto wb = partition(Var<float>(f), 4);
  CHECK(wb.windows() == 1);
  CHECK(wb.nodes.value().vector() == f.vector());
}

TEST_CASE("relocating node content moves exactly those pixels") {
  auto f = randn({2, 8, 8}, 4);
  auto wb = partition(Var<float>(f), 4);
  Tensor<float> nodes = wb.nodes.value();
  // Swap node 0 of window 0 with node 5 of window 3.
  for (std::size_t c = 0; c < 2; ++c) std::swap(nodes.at({0, 0, c}), nodes.at({3, 5, c}));
  wb.nodes = Var<float>(nodes);
  auto g = merge(wb).value();
  auto expect = f;
  // Window 3 is grid (1,1); node 5 is local (1,1) -> pixel (5,5).
  for (std::size_t c = 0; c < 2; ++c) std::swap(expect.at({c, 0, 0}), expect.at({c, 5, 5}));
  CHECK(g == expect);
}

TEST_CASE("inconsistent bookkeeping is an integrity error") {
  auto wb = partition(Var<float>(randn({1, 8, 8}, 1)), 4);
  wb.padded_h = 12;
  CHECK_THROWS_AS(merge(wb), IntegrityError);
  auto wb2 = partition(Var<float>(randn({1, 8, 8}, 1)), 4);
  wb2.orig_w = 9;
  CHECK_THROWS_AS(merge(wb2), IntegrityError);
}

}  // TEST_SUITE
