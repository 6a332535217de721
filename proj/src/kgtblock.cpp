#include "kgt/kgtblock.hpp"

#include <string>

#include "kgt/instrument.hpp"
#include "kgt/keygraph.hpp"
#include "kgt/ops.hpp"
#include "kgt/windowing.hpp"

namespace kgt {

template <class T>
Tensor<T> trunc_normal(Shape shape, T std, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) {
    double z;
    do {
      z = dist(rng);
    } while (z < -2.0 || z > 2.0);
    v = static_cast<T>(z * static_cast<double>(std));
  }
  return t;
}

template <class T>
void KGTLayerParams<T>::validate() const {
  attn.validate();
  const std::size_t c = channels();
  if (ffn_w1.rank() != 2 || ffn_w1.dim(0) != c || ffn_w1.dim(1) % c != 0 || ffn_w1.dim(1) == 0) {
    throw DimensionError("ffn_w1 " + to_string(ffn_w1.shape()) + " for " + std::to_string(c) +
                         " channels");
  }
  if (ffn_w2.shape() != Shape{ffn_w1.dim(1), c}) {
    throw DimensionError("ffn_w2 " + to_string(ffn_w2.shape()) + " does not mirror ffn_w1 " +
                         to_string(ffn_w1.shape()));
  }
  for (const auto* ln : {&norm1, &norm2}) {
    if (ln->gamma.shape() != Shape{c} || ln->beta.shape() != Shape{c}) {
      throw DimensionError("layer norm affine must be [" + std::to_string(c) + "]");
    }
  }
}

template <class T>
std::vector<Var<T>> KGTLayerParams<T>::parameters() const {
  return {attn.w_qry, attn.w_key, attn.w_val, attn.w_out, ffn_w1, ffn_w2,
          norm1.gamma, norm1.beta, norm2.gamma, norm2.beta};
}

template <class T>
void KGTStageParams<T>::validate() const {
  if (layers.empty()) throw ConfigError("stage needs at least one layer");
  for (const auto& l : layers) l.validate();
  const std::size_t c = layers.front().channels();
  if (tail_w.shape() != Shape{c, c, 3, 3} || tail_b.shape() != Shape{c}) {
    throw DimensionError("tail conv " + to_string(tail_w.shape()) + " for " + std::to_string(c) +
                         " channels");
  }
}

template <class T>
std::vector<Var<T>> KGTStageParams<T>::parameters() const {
  std::vector<Var<T>> out;
  for (const auto& l : layers) {
    auto lp = l.parameters();
    out.insert(out.end(), lp.begin(), lp.end());
  }
  out.push_back(tail_w);
  out.push_back(tail_b);
  return out;
}

template <class T>
KGTLayerParams<T> init_layer(const std::string& prefix, std::size_t c, std::size_t heads,
                             std::size_t ratio, std::mt19937_64& rng, bool zero_out, T std) {
  if (heads == 0 || c % heads != 0) {
    throw ConfigError(std::to_string(c) + " channels not divisible by " + std::to_string(heads) +
                      " heads");
  }
  if (ratio == 0) throw ConfigError("ffn ratio must be >= 1");
  KGTLayerParams<T> p;
  p.attn.heads = heads;
  p.attn.w_qry = make_parameter(prefix + "attn.w_qry", trunc_normal<T>({c, c}, std, rng));
  p.attn.w_key = make_parameter(prefix + "attn.w_key", trunc_normal<T>({c, c}, std, rng));
  p.attn.w_val = make_parameter(prefix + "attn.w_val", trunc_normal<T>({c, c}, std, rng));
  p.attn.w_out = make_parameter(prefix + "attn.w_out",
                                zero_out ? Tensor<T>({c, c}) : trunc_normal<T>({c, c}, std, rng));
  p.ffn_w1 = make_parameter(prefix + "ffn.w1", trunc_normal<T>({c, ratio * c}, std, rng));
  p.ffn_w2 = make_parameter(prefix + "ffn.w2", trunc_normal<T>({ratio * c, c}, std, rng));
  p.norm1 = {make_parameter(prefix + "norm1.gamma", Tensor<T>({c}, T(1))),
             make_parameter(prefix + "norm1.beta", Tensor<T>({c}))};
  p.norm2 = {make_parameter(prefix + "norm2.gamma", Tensor<T>({c}, T(1))),
             make_parameter(prefix + "norm2.beta", Tensor<T>({c}))};
  return p;
}

template <class T>
KGTStageParams<T> init_stage(const std::string& prefix, std::size_t c, std::size_t heads,
                             std::size_t ratio, std::size_t n_layers, std::mt19937_64& rng,
                             bool zero_tail, T std) {
  if (n_layers == 0) throw ConfigError("stage needs at least one layer");
  KGTStageParams<T> s;
  for (std::size_t i = 0; i < n_layers; ++i) {
    s.layers.push_back(init_layer<T>(prefix + "layers." + std::to_string(i) + ".", c, heads, ratio,
                                     rng, zero_tail, std));
  }
  s.tail_w = make_parameter(prefix + "tail.weight",
                            zero_tail ? Tensor<T>({c, c, 3, 3}) : trunc_normal<T>({c, c, 3, 3}, std, rng));
  s.tail_b = make_parameter(prefix + "tail.bias", Tensor<T>({c}));
  return s;
}

template <class T>
Var<T> ffn(const Var<T>& v_hat, const Var<T>& w1, const Var<T>& w2) {
  return add(v_hat, linear(gelu(linear(v_hat, w1)), w2));
}

template <class T>
Var<T> kgt_layer_forward(const Var<T>& v, const KeyGraph& g, const KGTLayerParams<T>& p,
                         const Backend& backend) {
  auto qkv = project(layer_norm(v, p.norm1.gamma, p.norm1.beta), p.attn);
  auto attended = keygraph_attention(qkv.q, qkv.k, qkv.v, g, backend);
  auto u = add(v, merge_heads(attended, p.attn.w_out));
  auto hidden = gelu(linear(layer_norm(u, p.norm2.gamma, p.norm2.beta), p.ffn_w1));
  return add(u, linear(hidden, p.ffn_w2));
}

std::size_t clamp_k(std::size_t k, std::size_t win) {
  const std::size_t max_k = win * win - 1;
  return std::max<std::size_t>(1, std::min(k, max_k));
}

template <class T>
Var<T> kgt_stage_forward(const Var<T>& f_in, const KGTStageParams<T>& p, std::size_t k,
                         std::size_t win, const Backend& backend) {
  p.validate();
  if (k < 1) throw ConfigError("stage: k must be >= 1");
  const std::size_t k_used = clamp_k(k, win);
  if (k_used != k) {
    warn("k = " + std::to_string(k) + " exceeds window capacity, clamped to " +
         std::to_string(k_used));
  }
  auto wb = partition(f_in, win);
  const KeyGraph g = build_graph(wb.nodes.value(), k_used);
  Var<T> z = wb.nodes;
  for (const auto& layer : p.layers) z = kgt_layer_forward(z, g, layer, backend);
  wb.nodes = z;
  return add(f_in, conv2d_3x3(merge(wb), p.tail_w, p.tail_b));
}

#define KGT_INSTANTIATE_BLOCK(T)                                                                 \
  template struct KGTLayerParams<T>;                                                             \
  template struct KGTStageParams<T>;                                                             \
  template Tensor<T> trunc_normal(Shape, T, std::mt19937_64&);                                   \
  template KGTLayerParams<T> init_layer(const std::string&, std::size_t, std::size_t,            \
                                        std::size_t, std::mt19937_64&, bool, T);                 \
  template KGTStageParams<T> init_stage(const std::string&, std::size_t, std::size_t,            \
                                        std::size_t, std::size_t, std::mt19937_64&, bool, T);    \
  template Var<T> ffn(const Var<T>&, const Var<T>&, const Var<T>&);                              \
  template Var<T> kgt_layer_forward(const Var<T>&, const KeyGraph&, const KGTLayerParams<T>&,    \
                                    const Backend&);                                             \
  template Var<T> kgt_stage_forward(const Var<T>&, const KGTStageParams<T>&, std::size_t,        \
                                    std::size_t, const Backend&);

KGT_INSTANTIATE_BLOCK(float)
KGT_INSTANTIATE_BLOCK(double)

}  // namespace kgt
