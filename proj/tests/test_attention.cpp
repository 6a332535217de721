#include <cmath>
#include <numeric>

#include "doctest.h"
#include "helpers.hpp"
#include "kgt/attention.hpp"
#include "kgt/bench.hpp"
#include "kgt/instrument.hpp"
#include "kgt/ops.hpp"

using namespace kgt;
using testing::randn;

namespace {

template <class T>
AttentionParams<T> identity_params(std::size_t c, std::size_t heads) {
  Tensor<T> eye({c, c});
  for (std::size_t i = 0; i < c; ++i) eye.at({i, i}) = 1;
  return {Var<T>(eye), Var<T>(eye), Var<T>(eye), Var<T>(eye), heads};
}

KeyGraph random_graph(std::size_t B, std::size_t hw, std::size_t k, std::uint64_t seed) {
  return build_graph(randn({B, hw, 3}, seed), k);
}

std::vector<Backend> all_backends(std::size_t block = 5) {
  return {Backend::gather(), Backend::mask(), Backend::streaming(block)};
}

}  // namespace

TEST_SUITE("attention") {

TEST_CASE("identity projection with one head") {
  auto v = randn({2, 9, 4}, 1);
  auto p = project(Var<float>(v), identity_params<float>(4, 1));
  const auto expect = v.reshaped({2, 1, 9, 4});
  CHECK(p.q.value() == expect);
  CHECK(p.k.value() == expect);
  CHECK(p.v.value() == expect);
}

TEST_CASE("projection equals matmul oracle with contiguous head blocks") {
  auto v = randn({3, 5, 6}, 2);
  auto params = identity_params<float>(6, 3);
  params.w_key = Var<float>(randn({6, 6}, 3));
  auto p = project(Var<float>(v), params);
  CHECK(p.k.shape() == Shape{3, 3, 5, 2});
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t o = 0; o < 6; ++o) {
        double s = 0;
        for (std::size_t c = 0; c < 6; ++c) s += v.at({b, i, c}) * params.w_key.value().at({c, o});
        CHECK(p.k.value().at({b, o / 2, i, o % 2}) == doctest::Approx(s).epsilon(1e-5));
      }
}

TEST_CASE("heads must divide channels") {
  auto params = identity_params<float>(6, 4);
  CHECK_THROWS_AS(project(Var<float>(randn({1, 4, 6}, 1)), params), ConfigError);
}

TEST_CASE("zero query weights give uniform attention") {
  auto v = randn({1, 6, 4}, 5);
  auto params = identity_params<float>(4, 1);
  params.w_qry = Var<float>(Tensor<float>({4, 4}));
  auto p = project(Var<float>(v), params);
  auto out = dense_attention(p.q, p.k, p.v).value();
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t c = 0; c < 4; ++c) {
      double mean = 0;
      for (std::size_t j = 0; j < 6; ++j) mean += v.at({0, j, c});
      CHECK(out.at({0, 0, i, c}) == doctest::Approx(mean / 6).epsilon(1e-5));
    }
}

TEST_CASE("dense attention closed-form weights") {
  // d = 1, so the scale is 1. Row 0 logits [0, ln3], row 1 logits [0, 0].
  Tensor<double> q({1, 1, 2, 1}, std::vector<double>{1, 0});
  Tensor<double> k({1, 1, 2, 1}, std::vector<double>{0, std::log(3.0)});
  Tensor<double> v({1, 1, 2, 1}, std::vector<double>{1, 0});
  auto out = dense_attention(Var<double>(q), Var<double>(k), Var<double>(v)).value();
  CHECK(out[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(out[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("dense attention with equal keys averages values; logit shifts do not matter") {
  auto q = randn({1, 2, 5, 3}, 1);
  Tensor<float> k({1, 2, 5, 3}, 0.7f);
  auto v = randn({1, 2, 5, 3}, 2);
  auto out = dense_attention(Var<float>(q), Var<float>(k), Var<float>(v)).value();
  for (std::size_t h = 0; h < 2; ++h)
    for (std::size_t c = 0; c < 3; ++c) {
      double mean = 0;
      for (std::size_t j = 0; j < 5; ++j) mean += v.at({0, h, j, c});
      CHECK(out.at({0, h, 2, c}) == doctest::Approx(mean / 5).epsilon(1e-5));
    }

  // Adding u to every key adds q_i·u to every logit of row i.
  auto kr = randn({1, 2, 5, 3}, 3);
  auto shifted = kr;
  for (std::size_t h = 0; h < 2; ++h)
    for (std::size_t j = 0; j < 5; ++j)
      for (std::size_t c = 0; c < 3; ++c) shifted.at({0, h, j, c}) += 0.5f * static_cast<float>(c + 1);
  auto a = dense_attention(Var<float>(q), Var<float>(kr), Var<float>(v)).value();
  auto b = keygraph_attention(Var<float>(q), Var<float>(shifted), Var<float>(v), random_graph(1, 5, 4, 1),
                              Backend::gather())
               .value();
  auto c = keygraph_attention(Var<float>(q), Var<float>(kr), Var<float>(v), random_graph(1, 5, 4, 1),
                              Backend::gather())
               .value();
  CHECK(max_abs_diff(b, c) <= 1e-5);
  CHECK(a.shape() == b.shape());
}

TEST_CASE("k = 1 copies the single neighbor's value row") {
  auto q = randn({2, 2, 9, 4}, 1), k = randn({2, 2, 9, 4}, 2), v = randn({2, 2, 9, 4}, 3);
  auto g = random_graph(2, 9, 1, 4);
  for (const auto& be : all_backends()) {
    auto out = keygraph_attention(Var<float>(q), Var<float>(k), Var<float>(v), g, be).value();
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t h = 0; h < 2; ++h)
        for (std::size_t i = 0; i < 9; ++i) {
          const auto j = static_cast<std::size_t>(g.row(b, i)[0]);
          for (std::size_t c = 0; c < 4; ++c) CHECK(out.at({b, h, i, c}) == v.at({b, h, j, c}));
        }
  }
}

TEST_CASE("output equals a per-row double-precision oracle") {
  auto q = randn({3, 2, 16, 4}, 5), k = randn({3, 2, 16, 4}, 6), v = randn({3, 2, 16, 4}, 7);
  auto g = random_graph(3, 16, 6, 8);
  for (const auto& be : all_backends(4)) {
    auto out = keygraph_attention(Var<float>(q), Var<float>(k), Var<float>(v), g, be).value();
    double worst = 0;
    for (std::size_t b = 0; b < 3; ++b)
      for (std::size_t h = 0; h < 2; ++h) {
        const std::size_t base = (b * 2 + h) * 64;
        for (std::size_t i = 0; i < 16; ++i) {
          std::vector<std::size_t> keys;
          for (auto j : g.row(b, i)) keys.push_back(static_cast<std::size_t>(j));
          auto ref = testing::attend_oracle(q.ptr() + base + i * 4, k.ptr() + base, v.ptr() + base, keys, 4);
          for (std::size_t c = 0; c < 4; ++c) worst = std::max(worst, std::abs(ref[c] - out[base + i * 4 + c]));
        }
      }
    CHECK_MESSAGE(worst <= 1e-5, be.name());
  }
}

TEST_CASE("weights are row-stochastic and zero off-graph") {
  // With d = hw and V = I, each output row is the weight vector itself.
  const std::size_t hw = 12;
  Tensor<double> eye({1, 1, hw, hw});
  for (std::size_t i = 0; i < hw; ++i) eye.at({0, 0, i, i}) = 1;
  auto q = randn<double>({1, 1, hw, hw}, 1), k = randn<double>({1, 1, hw, hw}, 2);
  auto g = random_graph(1, hw, 5, 3);
  for (const auto& be : all_backends(5)) {
    auto w = keygraph_attention(Var<double>(q), Var<double>(k), Var<double>(eye), g, be).value();
    for (std::size_t i = 0; i < hw; ++i) {
      auto nb = g.row(0, i);
      double s = 0;
      for (std::size_t j = 0; j < hw; ++j) {
        const double x = w.at({0, 0, i, j});
        if (std::find(nb.begin(), nb.end(), static_cast<std::int32_t>(j)) == nb.end()) {
          CHECK(x <= 1e-12);
        }
        s += x;
      }
      CHECK(std::abs(s - 1.0) <= 1e-6);
    }
  }
}

TEST_CASE("backends agree in 32 and 64 bit") {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t hw = std::vector<std::size_t>{4, 16, 64}[trial % 3];
    const std::size_t k = std::uniform_int_distribution<std::size_t>(1, hw - 1)(rng);
    const std::size_t d = std::vector<std::size_t>{4, 8, 16}[(trial / 3) % 3];
    const std::size_t heads = 1 + trial % 2;
    const Shape s{2, heads, hw, d};
    auto g = random_graph(2, hw, k, 100 + trial);
    auto q = randn<double>(s, 1 + trial), kk = randn<double>(s, 2 + trial), v = randn<double>(s, 3 + trial);
    std::vector<Tensor<double>> outs64;
    std::vector<Tensor<float>> outs32;
    for (const auto& be : all_backends(7)) {
      outs64.push_back(keygraph_attention(Var<double>(q), Var<double>(kk), Var<double>(v), g, be).value());
      outs32.push_back(keygraph_attention(Var<float>(q.cast<float>()), Var<float>(kk.cast<float>()),
                                          Var<float>(v.cast<float>()), g, be)
                           .value());
    }
    for (std::size_t a = 0; a < 3; ++a)
      for (std::size_t b = a + 1; b < 3; ++b) {
        CHECK(max_abs_diff(outs64[a], outs64[b]) <= 1e-10);
        CHECK(max_abs_diff(outs32[a], outs32[b]) <= 1e-5);
      }
  }
}

TEST_CASE("streaming output does not depend on block size") {
  const std::size_t hw = 16;
  auto q = randn<double>({2, 2, hw, 4}, 1), k = randn<double>({2, 2, hw, 4}, 2), v = randn<double>({2, 2, hw, 4}, 3);
  auto g = random_graph(2, hw, 7, 4);
  auto ref = keygraph_attention(Var<double>(q), Var<double>(k), Var<double>(v), g, Backend::streaming(hw)).value();
  for (std::size_t bs : {1, 3, 64}) {
    auto out = keygraph_attention(Var<double>(q), Var<double>(k), Var<double>(v), g, Backend::streaming(bs)).value();
    CHECK(max_abs_diff(out, ref) <= 1e-12);
  }
  CHECK_THROWS_AS(Backend::streaming(0), ConfigError);
}

TEST_CASE("k = hw - 1 equals diagonal-masked dense attention") {
  for (std::size_t hw : {4, 16, 64}) {
    auto q = randn({2, 2, hw, 8}, hw), k = randn({2, 2, hw, 8}, hw + 1), v = randn({2, 2, hw, 8}, hw + 2);
    auto dense = dense_attention(Var<float>(q), Var<float>(k), Var<float>(v), true).value();
    auto g = random_graph(2, hw, hw - 1, hw + 3);
    for (const auto& be : all_backends())
      CHECK(max_abs_diff(keygraph_attention(Var<float>(q), Var<float>(k), Var<float>(v), g, be).value(), dense) <= 1e-5);
  }
}

TEST_CASE("permutation equivariance") {
  const std::size_t hw = 16, d = 4;
  auto q = randn<double>({1, 2, hw, d}, 1), k = randn<double>({1, 2, hw, d}, 2), v = randn<double>({1, 2, hw, d}, 3);
  auto g = random_graph(1, hw, 5, 4);
  std::vector<std::size_t> perm(hw);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(9));
  std::vector<std::int32_t> inv(hw);
  for (std::size_t i = 0; i < hw; ++i) inv[perm[i]] = static_cast<std::int32_t>(i);
  auto permute = [&](const Tensor<double>& x) {
    Tensor<double> y(x.shape());
    for (std::size_t h = 0; h < 2; ++h)
      for (std::size_t i = 0; i < hw; ++i)
        for (std::size_t c = 0; c < d; ++c) y.at({0, h, i, c}) = x.at({0, h, perm[i], c});
    return y;
  };
  KeyGraph pg = g;
  for (std::size_t i = 0; i < hw; ++i) {
    auto src = g.row(0, perm[i]);
    std::vector<std::int32_t> r;
    for (auto j : src) r.push_back(inv[static_cast<std::size_t>(j)]);
    std::sort(r.begin(), r.end());
    std::copy(r.begin(), r.end(), pg.row(0, i).begin());
  }
  for (const auto& be : all_backends()) {
    auto out = keygraph_attention(Var<double>(q), Var<double>(k), Var<double>(v), g, be).value();
    auto pout = keygraph_attention(Var<double>(permute(q)), Var<double>(permute(k)), Var<double>(permute(v)), pg, be).value();
    CHECK(max_abs_diff(pout, permute(out)) <= 1e-6);
  }
}

TEST_CASE("graph that does not fit the input is an integrity error") {
  auto q = randn({2, 1, 9, 4}, 1);
  auto g = random_graph(3, 9, 2, 1);
  CHECK_THROWS_AS(keygraph_attention(Var<float>(q), Var<float>(q), Var<float>(q), g, Backend::gather()), IntegrityError);
  auto g16 = random_graph(2, 16, 2, 1);
  CHECK_THROWS_AS(keygraph_attention(Var<float>(q), Var<float>(q), Var<float>(q), g16, Backend::mask()), IntegrityError);
}

TEST_CASE("merge_heads examples") {
  auto x = randn({2, 1, 5, 4}, 1);
  Tensor<float> eye({4, 4});
  for (std::size_t i = 0; i < 4; ++i) eye.at({i, i}) = 1;
  CHECK(merge_heads(Var<float>(x), Var<float>(eye)).value() == x.reshaped({2, 5, 4}));
  const auto zero = merge_heads(Var<float>(x), Var<float>(Tensor<float>({4, 4}))).value();
  for (float v : zero.data()) CHECK(v == 0.f);

  auto xh = randn({1, 2, 3, 2}, 2);
  auto w = randn({4, 4}, 3);
  auto out = merge_heads(Var<float>(xh), Var<float>(w)).value();
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t o = 0; o < 4; ++o) {
      double s = 0;
      for (std::size_t c = 0; c < 4; ++c) s += xh.at({0, c / 2, i, c % 2}) * w.at({c, o});
      CHECK(out.at({0, i, o}) == doctest::Approx(s).epsilon(1e-5));
    }
}

TEST_CASE("backend names parse") {
  CHECK(Backend::parse("gather").kind == BackendKind::Gather);
  CHECK(Backend::parse("mask").kind == BackendKind::Mask);
  CHECK(Backend::parse("streaming", 7).block_size == 7);
  CHECK_THROWS_AS(Backend::parse("fused"), ConfigError);
}

TEST_CASE("instrumented counters equal the cost models") {
  for (std::size_t hw : {16, 64})
    for (std::size_t k : {1, 5, 15})
      for (std::size_t d : {4, 8}) {
        const std::size_t heads = 2, B = 3;
        auto q = randn({B, heads, hw, d}, hw + k), kk = randn({B, heads, hw, d}, d), v = randn({B, heads, hw, d}, k);
        auto g = random_graph(B, hw, k, 1);
        const std::pair<Backend, CostBackend> cases[] = {{Backend::gather(), CostBackend::Gather},
                                                         {Backend::mask(), CostBackend::Mask},
                                                         {Backend::streaming(6), CostBackend::Streaming}};
        for (const auto& [be, cb] : cases) {
          NoGradGuard ng;
          instrument::reset();
          keygraph_attention(Var<float>(q), Var<float>(kk), Var<float>(v), g, be);
          const auto snap = instrument::snapshot();
          CHECK(snap.attention_flops == B * attention_flops(hw, k, d, heads, cb));
          CHECK(snap.peak_aux_bytes == attention_peak_bytes(hw, k, d, heads, cb, sizeof(float), 6));
        }
        NoGradGuard ng;
        instrument::reset();
        dense_attention(Var<float>(q), Var<float>(kk), Var<float>(v));
        CHECK(instrument::snapshot().attention_flops == B * attention_flops(hw, hw, d, heads, CostBackend::Dense));
        CHECK(instrument::snapshot().peak_aux_bytes ==
              attention_peak_bytes(hw, hw, d, heads, CostBackend::Dense, sizeof(float)));
      }
}

}  // TEST_SUITE
