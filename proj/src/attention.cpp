#include "kgt/attention.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "kgt/instrument.hpp"
#include "kgt/ops.hpp"

namespace kgt {
namespace {

template <class T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapM = Eigen::Map<Mat<T>>;
template <class T>
using CMapM = Eigen::Map<const Mat<T>>;

inline Eigen::Index ix(std::size_t n) { return static_cast<Eigen::Index>(n); }

template <class T>
inline T dot(const T* a, const T* b, std::size_t d) {
  return kernels::dot_fixed(a, b, d);
}

template <class T>
inline void axpy(T alpha, const T* x, T* y, std::size_t d) {
  for (std::size_t t = 0; t < d; ++t) y[t] += alpha * x[t];
}

struct Dims {
  std::size_t B, H, hw, d;
  std::size_t head_stride() const { return hw * d; }
  std::size_t window_stride() const { return H * hw * d; }
};

template <class T>
Dims check_qkv(const Var<T>& q, const Var<T>& k, const Var<T>& v, const char* op) {
  if (q.rank() != 4 || k.shape() != q.shape() || v.shape() != q.shape()) {
    throw DimensionError(std::string(op) + ": q, k, v must share a [B×heads×hw×d] shape, got " +
                         to_string(q.shape()) + ", " + to_string(k.shape()) + ", " +
                         to_string(v.shape()));
  }
  return {q.dim(0), q.dim(1), q.dim(2), q.dim(3)};
}

template <class T>
bool needs_grad(const Var<T>& q, const Var<T>& k, const Var<T>& v) {
  return grad_enabled() && (q.requires_grad() || k.requires_grad() || v.requires_grad());
}

// Gradient pointers (null when untracked), fetched before any parallel region.
template <class T>
struct GradPtrs {
  T* q;
  T* k;
  T* v;
  GradPtrs(Node<T>& qn, Node<T>& kn, Node<T>& vn)
      : q(qn.requires_grad ? qn.grad_buffer().ptr() : nullptr),
        k(kn.requires_grad ? kn.grad_buffer().ptr() : nullptr),
        v(vn.requires_grad ? vn.grad_buffer().ptr() : nullptr) {}
};

// Softmax-attention backward for one query row given its weights over a key list.
// keys(t) returns the key index of the t-th weight.
template <class T, class KeyAt>
void row_backward(const T* p, std::size_t n, KeyAt keys, const T* go, const T* qi, const T* K,
                  const T* V, std::size_t d, T scale, T* gqi, T* gK, T* gV, std::vector<T>& dp) {
  dp.resize(n);
  T D = 0;
  for (std::size_t t = 0; t < n; ++t) {
    dp[t] = dot(go, V + keys(t) * d, d);
    D += p[t] * dp[t];
  }
  for (std::size_t t = 0; t < n; ++t) {
    const std::size_t j = keys(t);
    const T ds = p[t] * (dp[t] - D);
    if (gqi) axpy(scale * ds, K + j * d, gqi, d);
    if (gK) axpy(scale * ds, qi, gK + j * d, d);
    if (gV) axpy(p[t], go, gV + j * d, d);
  }
}

// Backward shared by dense attention and the Mask backend: full hw×hw weights.
template <class T>
void full_weights_backward(const Dims& dm, const Tensor<T>& P, const Tensor<T>& go,
                           const Node<T>& qn, const Node<T>& kn, const Node<T>& vn,
                           const GradPtrs<T>& gp, T scale) {
  const std::size_t hw = dm.hw, d = dm.d;
#pragma omp parallel
  {
    Mat<T> dS(ix(hw), ix(hw));
#pragma omp for schedule(static)
    for (std::ptrdiff_t bi = 0; bi < static_cast<std::ptrdiff_t>(dm.B); ++bi) {
      const auto b = static_cast<std::size_t>(bi);
      for (std::size_t h = 0; h < dm.H; ++h) {
        const std::size_t base = b * dm.window_stride() + h * dm.head_stride();
        CMapM<T> Q(qn.value.ptr() + base, ix(hw), ix(d));
        CMapM<T> K(kn.value.ptr() + base, ix(hw), ix(d));
        CMapM<T> V(vn.value.ptr() + base, ix(hw), ix(d));
        CMapM<T> G(go.ptr() + base, ix(hw), ix(d));
        CMapM<T> Pw(P.ptr() + (b * dm.H + h) * hw * hw, ix(hw), ix(hw));
        if (gp.v) MapM<T>(gp.v + base, ix(hw), ix(d)).noalias() += Pw.transpose() * G;
        if (!gp.q && !gp.k) continue;
        dS.noalias() = G * V.transpose();
        Vec<T> D(ix(hw));
        for (std::size_t i = 0; i < hw; ++i) D[ix(i)] = kernels::dot_fixed(Pw.data() + i * hw, dS.data() + i * hw, hw);
        dS = Pw.array() * (dS.colwise() - D).array() * scale;
        if (gp.q) MapM<T>(gp.q + base, ix(hw), ix(d)).noalias() += dS * K;
        if (gp.k) MapM<T>(gp.k + base, ix(hw), ix(d)).noalias() += dS.transpose() * Q;
      }
    }
  }
}

// Full hw×hw logits of one (window, head), an in-place row edit, row softmax,
// then out = P·V. Returns the FLOPs performed by the score and aggregate core.
template <class T, class RowEdit>
std::uint64_t full_forward(const T* Q, const T* K, const T* V, std::size_t hw, std::size_t d, T scale, T* lg,
                           T* out, RowEdit edit) {
  MapM<T> L(lg, ix(hw), ix(hw));
  L.noalias() = scale * (CMapM<T>(Q, ix(hw), ix(d)) * CMapM<T>(K, ix(hw), ix(d)).transpose());
  for (std::size_t i = 0; i < hw; ++i) {
    edit(i, lg + i * hw);
    kernels::softmax_rows_inplace(lg + i * hw, 1, hw);
  }
  MapM<T>(out, ix(hw), ix(d)).noalias() = L * CMapM<T>(V, ix(hw), ix(d));
  return 4 * hw * hw * d;
}

void check_graph(const KeyGraph& g, const Dims& dm) {
  if (g.windows != dm.B || g.win_nodes != dm.hw) {
    throw IntegrityError("keygraph_attention: graph covers " + std::to_string(g.windows) +
                         " windows of " + std::to_string(g.win_nodes) + " nodes, input has " +
                         std::to_string(dm.B) + " windows of " + std::to_string(dm.hw));
  }
  if (g.k < 1 || g.k > dm.hw - 1 || g.neighbors.size() != g.windows * g.win_nodes * g.k) {
    throw IntegrityError("keygraph_attention: malformed graph (k = " + std::to_string(g.k) + ")");
  }
}

// ---- Gather: materialize K̂, V̂ [hw×k×d] by index, then hw×k logits. ----

template <class T>
Var<T> gather_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, const KeyGraph& g,
                        const Dims& dm) {
  const std::size_t hw = dm.hw, d = dm.d, kk = g.k;
  const T scale = T(1) / std::sqrt(static_cast<T>(d));
  const bool keep = needs_grad(q, k, v);
  auto P = std::make_shared<Tensor<T>>(keep ? Shape{dm.B, dm.H, hw, kk} : Shape{0});
  Tensor<T> out(q.shape());
  std::uint64_t flops = 0;

#pragma omp parallel for schedule(static) reduction(+ : flops)
  for (std::ptrdiff_t bi = 0; bi < static_cast<std::ptrdiff_t>(dm.B); ++bi) {
    const auto b = static_cast<std::size_t>(bi);
    instrument::ScratchArena<T> arena;
    T* khat = arena.alloc(dm.H * hw * kk * d);
    T* vhat = arena.alloc(dm.H * hw * kk * d);
    T* logits = arena.alloc(dm.H * hw * kk);
    for (std::size_t h = 0; h < dm.H; ++h) {
      const std::size_t base = b * dm.window_stride() + h * dm.head_stride();
      const T* Q = q.value().ptr() + base;
      const T* K = k.value().ptr() + base;
      const T* V = v.value().ptr() + base;
      T* kh = khat + h * hw * kk * d;
      T* vh = vhat + h * hw * kk * d;
      T* lg = logits + h * hw * kk;
      for (std::size_t i = 0; i < hw; ++i) {
        auto nb = g.row(b, i);
        for (std::size_t t = 0; t < kk; ++t) {
          std::copy_n(K + static_cast<std::size_t>(nb[t]) * d, d, kh + (i * kk + t) * d);
          std::copy_n(V + static_cast<std::size_t>(nb[t]) * d, d, vh + (i * kk + t) * d);
        }
        T* row = lg + i * kk;
        CMapM<T> Kh(kh + i * kk * d, ix(kk), ix(d)), Vh(vh + i * kk * d, ix(kk), ix(d));
        Eigen::Map<Vec<T>> r(row, ix(kk));
        r.noalias() = scale * (Kh * Eigen::Map<const Vec<T>>(Q + i * d, ix(d)));
        kernels::softmax_rows_inplace(row, 1, kk);
        Eigen::Map<Vec<T>>(out.ptr() + base + i * d, ix(d)).noalias() = Vh.transpose() * r;
        flops += 4 * kk * d;
      }
      if (keep) std::copy_n(lg, hw * kk, P->ptr() + (b * dm.H + h) * hw * kk);
    }
  }
  instrument::add_attention_flops(flops);

  auto qn = q.node(), kn = k.node(), vn = v.node();
  auto graph = std::make_shared<const KeyGraph>(g);
  return record<T>(
      std::move(out), {q, k, v},
      [qn, kn, vn, P, graph, dm, scale](const Tensor<T>& go) {
        const GradPtrs<T> gp(*qn, *kn, *vn);
        const std::size_t hw = dm.hw, d = dm.d, kk = graph->k;
#pragma omp parallel
        {
          std::vector<T> dp;
#pragma omp for schedule(static)
          for (std::ptrdiff_t bi = 0; bi < static_cast<std::ptrdiff_t>(dm.B); ++bi) {
            const auto b = static_cast<std::size_t>(bi);
            for (std::size_t h = 0; h < dm.H; ++h) {
              const std::size_t base = b * dm.window_stride() + h * dm.head_stride();
              const T* Pw = P->ptr() + (b * dm.H + h) * hw * kk;
              for (std::size_t i = 0; i < hw; ++i) {
                auto nb = graph->row(b, i);
                row_backward<T>(Pw + i * kk, kk,
                                [&nb](std::size_t t) { return static_cast<std::size_t>(nb[t]); },
                                go.ptr() + base + i * d, qn->value.ptr() + base + i * d,
                                kn->value.ptr() + base, vn->value.ptr() + base, d, scale,
                                gp.q ? gp.q + base + i * d : nullptr, gp.k ? gp.k + base : nullptr,
                                gp.v ? gp.v + base : nullptr, dp);
              }
            }
          }
        }
      },
      "keygraph_attention[gather]");
}

// ---- Mask: full hw×hw logits, masked_logit() off-graph, row softmax. ----

template <class T>
Var<T> mask_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, const KeyGraph& g,
                      const Dims& dm) {
  const std::size_t hw = dm.hw, d = dm.d;
  const T scale = T(1) / std::sqrt(static_cast<T>(d));
  const bool keep = needs_grad(q, k, v);
  auto P = std::make_shared<Tensor<T>>(keep ? Shape{dm.B, dm.H, hw, hw} : Shape{0});
  Tensor<T> out(q.shape());
  std::uint64_t flops = 0;

#pragma omp parallel for schedule(static) reduction(+ : flops)
  for (std::ptrdiff_t bi = 0; bi < static_cast<std::ptrdiff_t>(dm.B); ++bi) {
    const auto b = static_cast<std::size_t>(bi);
    instrument::ScratchArena<T> arena;
    T* logits = arena.alloc(dm.H * hw * hw);
    for (std::size_t h = 0; h < dm.H; ++h) {
      const std::size_t base = b * dm.window_stride() + h * dm.head_stride();
      const T* Q = q.value().ptr() + base;
      const T* K = k.value().ptr() + base;
      const T* V = v.value().ptr() + base;
      T* lg = logits + h * hw * hw;
      flops += full_forward(Q, K, V, hw, d, scale, lg, out.ptr() + base, [&](std::size_t i, T* row) {
        // Neighbor rows are ascending, so a single cursor marks membership.
        auto nb = g.row(b, i);
        std::size_t t = 0;
        for (std::size_t j = 0; j < hw; ++j) {
          if (t < nb.size() && static_cast<std::size_t>(nb[t]) == j) {
            ++t;
          } else {
            row[j] += masked_logit<T>();
          }
        }
      });
      if (keep) std::copy_n(lg, hw * hw, P->ptr() + (b * dm.H + h) * hw * hw);
    }
  }
  instrument::add_attention_flops(flops);

  auto qn = q.node(), kn = k.node(), vn = v.node();
  return record<T>(
      std::move(out), {q, k, v},
      [qn, kn, vn, P, dm, scale](const Tensor<T>& go) {
        const GradPtrs<T> gp(*qn, *kn, *vn);
        full_weights_backward(dm, *P, go, *qn, *kn, *vn, gp, scale);
      },
      "keygraph_attention[mask]");
}

// ---- Streaming: key blocks with online-softmax rescaling. ----

template <class T>
Var<T> streaming_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, const KeyGraph& g,
                           const Dims& dm, std::size_t block_size) {
  const std::size_t hw = dm.hw, d = dm.d;
  const std::size_t blk = std::min(block_size, hw);
  const std::size_t words = (blk + 63) / 64;
  const T scale = T(1) / std::sqrt(static_cast<T>(d));
  const bool keep = needs_grad(q, k, v);
  auto lse = std::make_shared<Tensor<T>>(keep ? Shape{dm.B, dm.H, hw} : Shape{0});
  Tensor<T> out(q.shape());
  std::uint64_t flops = 0;

#pragma omp parallel reduction(+ : flops)
  {
    std::vector<std::uint64_t> member(words);
#pragma omp for schedule(static)
    for (std::ptrdiff_t bi = 0; bi < static_cast<std::ptrdiff_t>(dm.B); ++bi) {
      const auto b = static_cast<std::size_t>(bi);
      instrument::ScratchArena<T> arena;
      T* block_logits = arena.alloc(dm.H * hw * blk);
      T* run_max = arena.alloc(dm.H * hw);
      T* run_sum = arena.alloc(dm.H * hw);
      for (std::size_t h = 0; h < dm.H; ++h) {
        const std::size_t base = b * dm.window_stride() + h * dm.head_stride();
        const T* Q = q.value().ptr() + base;
        const T* K = k.value().ptr() + base;
        const T* V = v.value().ptr() + base;
        T* acc = out.ptr() + base;
        T* m = run_max + h * hw;
        T* s = run_sum + h * hw;
        T* buf = block_logits + h * hw * blk;
        std::fill_n(m, hw, std::numeric_limits<T>::lowest());
        std::fill_n(s, hw, T(0));
        for (std::size_t kb = 0; kb < hw; kb += blk) {
          const std::size_t kend = std::min(kb + blk, hw);
          for (std::size_t i = 0; i < hw; ++i) {
            auto nb = g.row(b, i);
            std::fill(member.begin(), member.end(), 0);
            bool any = false;
            for (auto it = std::lower_bound(nb.begin(), nb.end(), static_cast<std::int32_t>(kb));
                 it != nb.end() && static_cast<std::size_t>(*it) < kend; ++it) {
              const std::size_t bit = static_cast<std::size_t>(*it) - kb;
              member[bit / 64] |= std::uint64_t{1} << (bit % 64);
              any = true;
            }
            if (!any) continue;
            T* lrow = buf + i * blk;
            T m_blk = std::numeric_limits<T>::lowest();
            for (std::size_t t = 0; t < kend - kb; ++t) {
              if (!(member[t / 64] >> (t % 64) & 1)) continue;
              lrow[t] = scale * dot(Q + i * d, K + (kb + t) * d, d);
              m_blk = std::max(m_blk, lrow[t]);
              flops += 2 * d;
            }
            T s_blk = 0;
            for (std::size_t t = 0; t < kend - kb; ++t)
              if (member[t / 64] >> (t % 64) & 1) s_blk += std::exp(lrow[t] - m_blk);
            const T m_new = std::max(m[i], m_blk);
            const T alpha = s[i] > 0 ? std::exp(m[i] - m_new) : T(0);
            s[i] = s[i] * alpha + s_blk * std::exp(m_blk - m_new);
            T* a = acc + i * d;
            for (std::size_t t = 0; t < d; ++t) a[t] *= alpha;
            for (std::size_t t = 0; t < kend - kb; ++t) {
              if (!(member[t / 64] >> (t % 64) & 1)) continue;
              axpy(std::exp(lrow[t] - m_new), V + (kb + t) * d, a, d);
              flops += 2 * d;
            }
            m[i] = m_new;
          }
        }
        for (std::size_t i = 0; i < hw; ++i) {
          const T inv = T(1) / s[i];
          for (std::size_t t = 0; t < d; ++t) acc[i * d + t] *= inv;
          if (keep) (*lse)[(b * dm.H + h) * hw + i] = m[i] + std::log(s[i]);
        }
      }
    }
  }
  instrument::add_attention_flops(flops);

  auto qn = q.node(), kn = k.node(), vn = v.node();
  auto graph = std::make_shared<const KeyGraph>(g);
  return record<T>(
      std::move(out), {q, k, v},
      [qn, kn, vn, lse, graph, dm, scale](const Tensor<T>& go) {
        // Recompute the weights from the saved log-sum-exp instead of storing them.
        const GradPtrs<T> gp(*qn, *kn, *vn);
        const std::size_t hw = dm.hw, d = dm.d, kk = graph->k;
#pragma omp parallel
        {
          std::vector<T> p(kk), dp;
#pragma omp for schedule(static)
          for (std::ptrdiff_t bi = 0; bi < static_cast<std::ptrdiff_t>(dm.B); ++bi) {
            const auto b = static_cast<std::size_t>(bi);
            for (std::size_t h = 0; h < dm.H; ++h) {
              const std::size_t base = b * dm.window_stride() + h * dm.head_stride();
              const T* Q = qn->value.ptr() + base;
              const T* K = kn->value.ptr() + base;
              for (std::size_t i = 0; i < hw; ++i) {
                auto nb = graph->row(b, i);
                const T L = (*lse)[(b * dm.H + h) * hw + i];
                for (std::size_t t = 0; t < kk; ++t)
                  p[t] = std::exp(scale * dot(Q + i * d, K + static_cast<std::size_t>(nb[t]) * d, d) - L);
                row_backward<T>(p.data(), kk,
                                [&nb](std::size_t t) { return static_cast<std::size_t>(nb[t]); },
                                go.ptr() + base + i * d, Q + i * d, K, vn->value.ptr() + base, d,
                                scale, gp.q ? gp.q + base + i * d : nullptr,
                                gp.k ? gp.k + base : nullptr, gp.v ? gp.v + base : nullptr, dp);
              }
            }
          }
        }
      },
      "keygraph_attention[streaming]");
}

template <class T>
Var<T> permute_heads(const Var<T>& x, std::size_t B, std::size_t hw, std::size_t H, std::size_t d,
                     bool split) {
  // split:  [B×hw×H×d] -> [B×H×hw×d];  merge: the reverse.
  Tensor<T> out(split ? Shape{B, H, hw, d} : Shape{B, hw, H * d});
  const T* xp = x.value().ptr();
  auto src_index = [=](std::size_t b, std::size_t h, std::size_t i) {
    return split ? ((b * hw + i) * H + h) * d : ((b * H + h) * hw + i) * d;
  };
  auto dst_index = [=](std::size_t b, std::size_t h, std::size_t i) {
    return split ? ((b * H + h) * hw + i) * d : ((b * hw + i) * H + h) * d;
  };
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t i = 0; i < hw; ++i)
        std::copy_n(xp + src_index(b, h, i), d, out.ptr() + dst_index(b, h, i));
  auto xn = x.node();
  return record<T>(std::move(out), {x},
                   [xn, B, H, hw, d, src_index, dst_index](const Tensor<T>& g) {
                     T* gx = xn->grad_buffer().ptr();
                     for (std::size_t b = 0; b < B; ++b)
                       for (std::size_t h = 0; h < H; ++h)
                         for (std::size_t i = 0; i < hw; ++i) {
                           const T* src = g.ptr() + dst_index(b, h, i);
                           T* dst = gx + src_index(b, h, i);
                           for (std::size_t t = 0; t < d; ++t) dst[t] += src[t];
                         }
                   },
                   split ? "split_heads" : "merge_heads");
}

}  // namespace

template <class T>
void AttentionParams<T>::validate() const {
  if (heads < 1) throw ConfigError("attention: heads must be >= 1");
  if (w_qry.rank() != 2 || w_qry.dim(0) != w_qry.dim(1)) {
    throw DimensionError("attention: w_qry must be square, got " + to_string(w_qry.shape()));
  }
  const std::size_t c = w_qry.dim(0);
  for (const Var<T>* w : {&w_key, &w_val, &w_out}) {
    if (w->shape() != Shape{c, c}) {
      throw DimensionError("attention: projection " + to_string(w->shape()) + " expected " +
                           to_string(Shape{c, c}));
    }
  }
  if (c % heads != 0) {
    throw ConfigError("attention: " + std::to_string(c) + " channels not divisible by " +
                      std::to_string(heads) + " heads");
  }
}

Backend Backend::streaming(std::size_t block_size) {
  if (block_size < 1) throw ConfigError("streaming backend: block_size must be >= 1");
  return {BackendKind::Streaming, block_size};
}

std::string Backend::name() const {
  switch (kind) {
    case BackendKind::Gather: return "gather";
    case BackendKind::Mask: return "mask";
    case BackendKind::Streaming: return "streaming";
  }
  return "?";
}

Backend Backend::parse(std::string_view name, std::size_t block_size) {
  if (name == "gather") return gather();
  if (name == "mask") return mask();
  if (name == "streaming") return streaming(block_size);
  throw ConfigError("unknown attention backend '" + std::string(name) +
                    "' (expected gather, mask or streaming)");
}

template <class T>
Var<T> split_heads(const Var<T>& x, std::size_t heads) {
  if (x.rank() != 3 || heads == 0 || x.dim(2) % heads != 0) {
    throw ConfigError("split_heads: cannot split " + to_string(x.shape()) + " into " +
                      std::to_string(heads) + " heads");
  }
  return permute_heads(x, x.dim(0), x.dim(1), heads, x.dim(2) / heads, true);
}

template <class T>
Projected<T> project(const Var<T>& v, const AttentionParams<T>& p) {
  p.validate();
  if (v.rank() != 3 || v.dim(2) != p.channels()) {
    throw DimensionError("project: nodes " + to_string(v.shape()) + " for " +
                         std::to_string(p.channels()) + "-channel weights");
  }
  return {split_heads(linear(v, p.w_qry), p.heads), split_heads(linear(v, p.w_key), p.heads),
          split_heads(linear(v, p.w_val), p.heads)};
}

template <class T>
Var<T> merge_heads(const Var<T>& x, const Var<T>& w_out) {
  if (x.rank() != 4) throw DimensionError("merge_heads: expected [B×heads×hw×d], got " + to_string(x.shape()));
  const std::size_t B = x.dim(0), H = x.dim(1), hw = x.dim(2), d = x.dim(3);
  return linear(permute_heads(x, B, hw, H, d, false), w_out);
}

template <class T>
Var<T> dense_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, bool exclude_self) {
  const Dims dm = check_qkv(q, k, v, "dense_attention");
  const std::size_t hw = dm.hw, d = dm.d;
  if (exclude_self && hw < 2) throw DegenerateRowError(0);
  const T scale = T(1) / std::sqrt(static_cast<T>(d));
  const bool keep = needs_grad(q, k, v);
  auto P = std::make_shared<Tensor<T>>(keep ? Shape{dm.B, dm.H, hw, hw} : Shape{0});
  Tensor<T> out(q.shape());
  std::uint64_t flops = 0;

#pragma omp parallel for schedule(static) reduction(+ : flops)
  for (std::ptrdiff_t bi = 0; bi < static_cast<std::ptrdiff_t>(dm.B); ++bi) {
    const auto b = static_cast<std::size_t>(bi);
    instrument::ScratchArena<T> arena;
    T* logits = arena.alloc(dm.H * hw * hw);
    for (std::size_t h = 0; h < dm.H; ++h) {
      const std::size_t base = b * dm.window_stride() + h * dm.head_stride();
      const T* Q = q.value().ptr() + base;
      const T* K = k.value().ptr() + base;
      const T* V = v.value().ptr() + base;
      T* lg = logits + h * hw * hw;
      flops += full_forward(Q, K, V, hw, d, scale, lg, out.ptr() + base, [&](std::size_t i, T* row) {
        if (exclude_self) row[i] += masked_logit<T>();
      });
      if (keep) std::copy_n(lg, hw * hw, P->ptr() + (b * dm.H + h) * hw * hw);
    }
  }
  instrument::add_attention_flops(flops);

  auto qn = q.node(), kn = k.node(), vn = v.node();
  return record<T>(
      std::move(out), {q, k, v},
      [qn, kn, vn, P, dm, scale](const Tensor<T>& go) {
        const GradPtrs<T> gp(*qn, *kn, *vn);
        full_weights_backward(dm, *P, go, *qn, *kn, *vn, gp, scale);
      },
      "dense_attention");
}

template <class T>
Var<T> keygraph_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, const KeyGraph& g,
                          const Backend& backend) {
  const Dims dm = check_qkv(q, k, v, "keygraph_attention");
  check_graph(g, dm);
  switch (backend.kind) {
    case BackendKind::Gather: return gather_attention(q, k, v, g, dm);
    case BackendKind::Mask: return mask_attention(q, k, v, g, dm);
    case BackendKind::Streaming:
      if (backend.block_size < 1) throw ConfigError("streaming backend: block_size must be >= 1");
      return streaming_attention(q, k, v, g, dm, backend.block_size);
  }
  throw ConfigError("keygraph_attention: unknown backend");
}

#define KGT_INSTANTIATE_ATTENTION(T)                                                           \
  template struct AttentionParams<T>;                                                          \
  template Var<T> split_heads(const Var<T>&, std::size_t);                                     \
  template Projected<T> project(const Var<T>&, const AttentionParams<T>&);                     \
  template Var<T> merge_heads(const Var<T>&, const Var<T>&);                                   \
  template Var<T> dense_attention(const Var<T>&, const Var<T>&, const Var<T>&, bool);          \
  template Var<T> keygraph_attention(const Var<T>&, const Var<T>&, const Var<T>&,              \
                                     const KeyGraph&, const Backend&);

KGT_INSTANTIATE_ATTENTION(float)
KGT_INSTANTIATE_ATTENTION(double)

}  // namespace kgt
