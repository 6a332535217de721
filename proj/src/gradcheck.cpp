#include "kgt/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "kgt/attention.hpp"
#include "kgt/keygraph.hpp"
#include "kgt/kgtblock.hpp"
#include "kgt/ops.hpp"
#include "kgt/windowing.hpp"

namespace kgt {

namespace {

void check_h(double h) {
  if (!(h >= 1e-7 && h <= 1e-4)) {
    throw ConfigError("grad_check: h = " + std::to_string(h) + " outside [1e-7, 1e-4]");
  }
}

double eval_scalar(const std::function<Var<double>()>& f) {
  double y;
  try {
    const Var<double> out = f();
    if (out.value().numel() != 1) {
      throw DimensionError("grad_check: function must return one element, got " +
                           to_string(out.shape()));
    }
    y = out.value()[0];
  } catch (const NumericError& e) {
    throw EvaluationError(std::string("grad_check: ") + e.what());
  }
  if (!std::isfinite(y)) throw EvaluationError("grad_check: f(x) is not finite");
  return y;
}

}  // namespace

double grad_check_leaf(const std::function<Var<double>()>& f, Var<double> leaf, double h) {
  check_h(h);
  if (!leaf.requires_grad()) throw ConfigError("grad_check: leaf does not require a gradient");
  leaf.zero_grad();
  Var<double> out;
  try {
    out = f();
  } catch (const NumericError& e) {
    throw EvaluationError(std::string("grad_check: ") + e.what());
  }
  if (out.value().numel() != 1 || !std::isfinite(out.value()[0])) {
    throw EvaluationError("grad_check: f(x) must be one finite value");
  }
  out.backward();
  const Tensor<double> analytic = leaf.grad();

  NoGradGuard guard;
  Tensor<double>& x = leaf.mutable_value();
  double worst = 0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double fp = eval_scalar(f);
    x[i] = x0 - h;
    const double fm = eval_scalar(f);
    x[i] = x0;
    const double numeric = (fp - fm) / (2 * h);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i])));
  }
  return worst;
}

double grad_check(const std::function<Var<double>(const Var<double>&)>& f, const Tensor<double>& x,
                  double h) {
  check_h(h);
  Var<double> leaf(x, true, "x");
  return grad_check_leaf([&] { return f(leaf); }, leaf, h);
}

// ---- suite ----

namespace {

using V = Var<double>;
using T = Tensor<double>;

struct Suite {
  std::mt19937_64 rng;
  std::vector<GradCheckResult> results;

  T randn(Shape s, double scale = 1.0) {
    std::normal_distribution<double> g(0.0, scale);
    T t(std::move(s));
    for (auto& v : t.data()) v = g(rng);
    return t;
  }
  V leaf(Shape s, const std::string& name, double scale = 1.0) { return V(randn(std::move(s), scale), true, name); }

  /// Σ out ⊙ R for a fixed random R, so every output coordinate matters.
  V probe(const V& out) {
    V r(randn(out.shape()));
    return sum(mul(out, r));
  }

  void check(const std::string& name, const std::function<V()>& f, const std::vector<V>& leaves,
             double tol) {
    double err = 0;
    for (const auto& l : leaves) err = std::max(err, grad_check_leaf(f, l, 1e-5));
    results.push_back({name, err, tol, err <= tol});
  }
};

constexpr double kOpTol = 1e-6;
constexpr double kCompositeTol = 1e-4;

}  // namespace

std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed) {
  Suite s{std::mt19937_64(seed), {}};

  {
    V a = s.leaf({3, 4}, "a"), b = s.leaf({4, 5}, "b");
    V r(s.randn({3, 5}));
    s.check("matmul", [&] { return sum(mul(matmul(a, b), r)); }, {a, b}, kOpTol);
  }
  {
    V x = s.leaf({2, 3, 4}, "x"), w = s.leaf({4, 6}, "w");
    V r(s.randn({2, 3, 6}));
    s.check("linear", [&] { return sum(mul(linear(x, w), r)); }, {x, w}, kOpTol);
  }
  {
    V a = s.leaf({2, 5}, "a"), b = s.leaf({2, 5}, "b");
    V r(s.randn({2, 5}));
    s.check("add", [&] { return sum(mul(add(a, b), r)); }, {a, b}, kOpTol);
    s.check("mul", [&] { return sum(mul(mul(a, b), r)); }, {a, b}, kOpTol);
    s.check("scale", [&] { return sum(mul(scale(a, 0.7), r)); }, {a}, kOpTol);
    s.check("sum", [&] { return sum(a); }, {a}, kOpTol);
    V r2(s.randn({5, 2}));
    s.check("reshape", [&] { return sum(mul(reshape(a, {5, 2}), r2)); }, {a}, kOpTol);
  }
  {
    V x = s.leaf({4, 6}, "x");
    V r(s.randn({4, 6}));
    s.check("softmax_rows", [&] { return sum(mul(softmax_rows(x), r)); }, {x}, kOpTol);
    T m({4, 6});
    for (std::size_t i = 0; i < 4; ++i) m.at({i, (i + 2) % 6}) = masked_logit<double>();
    s.check("softmax_rows_masked", [&] { return sum(mul(softmax_rows(x, m), r)); }, {x}, kOpTol);
  }
  {
    V x = s.leaf({3, 7}, "x", 2.0);
    V r(s.randn({3, 7}));
    s.check("gelu", [&] { return sum(mul(gelu(x), r)); }, {x}, kOpTol);
  }
  {
    V x = s.leaf({2, 3, 8}, "x"), g = s.leaf({8}, "gamma"), b = s.leaf({8}, "beta");
    V r(s.randn({2, 3, 8}));
    s.check("layer_norm", [&] { return sum(mul(layer_norm(x, g, b), r)); }, {x, g, b}, kOpTol);
  }
  {
    V x = s.leaf({2, 5, 6}, "x"), w = s.leaf({3, 2, 3, 3}, "w"), b = s.leaf({3}, "b");
    V r(s.randn({3, 5, 6}));
    s.check("conv2d_3x3", [&] { return sum(mul(conv2d_3x3(x, w, b), r)); }, {x, w, b}, kOpTol);
    V xb = s.leaf({2, 2, 4, 3}, "xb");
    V rb(s.randn({2, 3, 4, 3}));
    s.check("conv2d_3x3_batched", [&] { return sum(mul(conv2d_3x3(xb, w, b), rb)); }, {xb, w, b}, kOpTol);
  }
  {
    V p = s.leaf({2, 3, 4}, "pred");
    const T target = s.randn({2, 3, 4});
    s.check("l1_loss", [&] { return l1_loss(p, target); }, {p}, kOpTol);
  }
  {
    V f = s.leaf({2, 5, 7}, "f");
    V r(s.randn({2, 5, 7}));
    s.check("partition_merge", [&] {
      auto wb = partition(f, 3);
      V r2(T(wb.nodes.shape(), 0.5));
      wb.nodes = add(wb.nodes, mul(wb.nodes, r2));
      return sum(mul(merge(wb), r));
    }, {f}, kOpTol);
  }
  {
    V x = s.leaf({2, 5, 4}, "x"), w = s.leaf({4, 4}, "w_out");
    V r(s.randn({2, 5, 4}));
    s.check("split_merge_heads", [&] { return sum(mul(merge_heads(split_heads(x, 2), w), r)); }, {x, w},
            kOpTol);
  }

  // Attention: B=2 windows, heads=2, hw=9, d=3.
  {
    V q = s.leaf({2, 2, 9, 3}, "q"), k = s.leaf({2, 2, 9, 3}, "k"), v = s.leaf({2, 2, 9, 3}, "v");
    V r(s.randn({2, 2, 9, 3}));
    s.check("dense_attention", [&] { return sum(mul(dense_attention(q, k, v), r)); }, {q, k, v},
            kCompositeTol);
    s.check("dense_attention_no_self", [&] { return sum(mul(dense_attention(q, k, v, true), r)); },
            {q, k, v}, kCompositeTol);
    const KeyGraph g = build_graph(s.randn({2, 9, 4}), 4);
    const T target = s.randn({2, 2, 9, 3});
    for (const Backend& be : {Backend::gather(), Backend::mask(), Backend::streaming(4)}) {
      s.check("keygraph_attention_" + be.name(),
              [&] { return l1_loss(keygraph_attention(q, k, v, g, be), target); }, {q, k, v},
              kCompositeTol);
    }

    // Gather and Mask must produce the same gradients.
    auto grads = [&](const Backend& be) {
      for (auto* x : {&q, &k, &v}) x->zero_grad();
      l1_loss(keygraph_attention(q, k, v, g, be), target).backward();
      return std::vector<T>{q.grad(), k.grad(), v.grad()};
    };
    const auto ga = grads(Backend::gather());
    const auto gm = grads(Backend::mask());
    double diff = 0;
    for (std::size_t i = 0; i < ga.size(); ++i) diff = std::max(diff, max_abs_diff(ga[i], gm[i]));
    s.results.push_back({"gather_mask_grad_agreement", diff, 1e-8, diff <= 1e-8});
  }

  std::mt19937_64 init_rng(seed + 1);
  {
    V x = s.leaf({2, 6, 4}, "x");
    V w1 = s.leaf({4, 8}, "w1", 0.5), w2 = s.leaf({8, 4}, "w2", 0.5);
    V r(s.randn({2, 6, 4}));
    s.check("ffn", [&] { return sum(mul(ffn(x, w1, w2), r)); }, {x, w1, w2}, kCompositeTol);
  }
  {
    auto layer = init_layer<double>("layer.", 4, 2, 2, init_rng, false, 0.5);
    for (auto* p : {&layer.norm1.beta, &layer.norm2.beta}) p->mutable_value() = s.randn({4}, 0.5);
    for (auto* p : {&layer.norm1.gamma, &layer.norm2.gamma}) {
      p->mutable_value() = s.randn({4}, 0.5);
      for (auto& e : p->mutable_value().data()) e += 1.0;
    }
    V x = s.leaf({2, 9, 4}, "x");
    const KeyGraph g = build_graph(s.randn({2, 9, 4}), 3);
    const T target = s.randn({2, 9, 4});
    for (const Backend& be : {Backend::gather(), Backend::mask(), Backend::streaming(4)}) {
      std::vector<V> leaves{x};
      for (const auto& p : layer.parameters()) leaves.push_back(p);
      s.check("kgt_layer_" + be.name(), [&] { return l1_loss(kgt_layer_forward(x, g, layer, be), target); },
              leaves, kCompositeTol);
    }
  }
  {
    auto stage = init_stage<double>("stage.", 4, 2, 2, 2, init_rng, false, 0.5);
    for (auto& l : stage.layers) {
      l.attn.w_out.mutable_value() = s.randn({4, 4}, 0.5);
    }
    V x = s.leaf({4, 5, 6}, "f_in");
    const T target = s.randn({4, 5, 6});
    std::vector<V> leaves{x};
    for (const auto& p : stage.parameters()) leaves.push_back(p);
    s.check("kgt_stage_gather", [&] { return l1_loss(kgt_stage_forward(x, stage, 3, 3, Backend::gather()), target); },
            leaves, kCompositeTol);
  }
  return s.results;
}

}  // namespace kgt
