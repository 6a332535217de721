#include "kgt/ops.hpp"

#include <Eigen/Core>
#include <unsupported/Eigen/SpecialFunctions>
#include <cmath>
#include <numbers>
#include <string>

namespace kgt {
namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

template <class T>
CMapMat<T> view(const Tensor<T>& t, std::size_t rows, std::size_t cols) {
  return CMapMat<T>(t.ptr(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <class T>
MapMat<T> view(Tensor<T>& t, std::size_t rows, std::size_t cols) {
  return MapMat<T>(t.ptr(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " +
                         to_string(b));
  }
}

}  // namespace

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + to_string(a.shape()) + " by " +
                         to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), p = a.dim(1), n = b.dim(1);
  Tensor<T> out(Shape{m, n});
  view(out, m, n).noalias() = view(a.value(), m, p) * view(b.value(), p, n);
  auto an = a.node(), bn = b.node();
  return record<T>(std::move(out), {a, b},
                   [an, bn, m, p, n](const Tensor<T>& g) {
                     if (an->requires_grad) {
                       view(an->grad_buffer(), m, p).noalias() +=
                           view(g, m, n) * view(bn->value, p, n).transpose();
                     }
                     if (bn->requires_grad) {
                       view(bn->grad_buffer(), p, n).noalias() +=
                           view(an->value, m, p).transpose() * view(g, m, n);
                     }
                   },
                   "matmul");
}

template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w) {
  if (x.rank() < 1 || w.rank() != 2 || x.shape().back() != w.dim(0)) {
    throw DimensionError("linear: cannot apply " + to_string(w.shape()) + " to " +
                         to_string(x.shape()));
  }
  const std::size_t p = w.dim(0), n = w.dim(1);
  const std::size_t rows = x.value().numel() / p;
  Shape out_shape = x.shape();
  out_shape.back() = n;
  Tensor<T> out(out_shape);
  view(out, rows, n).noalias() = view(x.value(), rows, p) * view(w.value(), p, n);
  auto xn = x.node(), wn = w.node();
  return record<T>(std::move(out), {x, w},
                   [xn, wn, rows, p, n](const Tensor<T>& g) {
                     if (xn->requires_grad) {
                       view(xn->grad_buffer(), rows, p).noalias() +=
                           view(g, rows, n) * view(wn->value, p, n).transpose();
                     }
                     if (wn->requires_grad) {
                       view(wn->grad_buffer(), p, n).noalias() +=
                           view(xn->value, rows, p).transpose() * view(g, rows, n);
                     }
                   },
                   "linear");
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out = a.value();
  const T* bp = b.value().ptr();
  T* op = out.ptr();
  for (std::size_t i = 0; i < out.numel(); ++i) op[i] += bp[i];
  auto an = a.node(), bn = b.node();
  return record<T>(std::move(out), {a, b},
                   [an, bn](const Tensor<T>& g) {
                     accumulate(an, g);
                     accumulate(bn, g);
                   },
                   "add");
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
  auto an = a.node(), bn = b.node();
  return record<T>(std::move(out), {a, b},
                   [an, bn](const Tensor<T>& g) {
                     if (an->requires_grad) {
                       auto& ga = an->grad_buffer();
                       for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * bn->value[i];
                     }
                     if (bn->requires_grad) {
                       auto& gb = bn->grad_buffer();
                       for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * an->value[i];
                     }
                   },
                   "mul");
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v *= s;
  auto an = a.node();
  return record<T>(std::move(out), {a},
                   [an, s](const Tensor<T>& g) {
                     auto& ga = an->grad_buffer();
                     for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += s * g[i];
                   },
                   "scale");
}

template <class T>
Var<T> sum(const Var<T>& a) {
  T total = 0;
  for (T v : a.value().data()) total += v;
  auto an = a.node();
  return record<T>(Tensor<T>::scalar(total), {a},
                   [an](const Tensor<T>& g) {
                     auto& ga = an->grad_buffer();
                     for (auto& v : ga.data()) v += g[0];
                   },
                   "sum");
}

template <class T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  Tensor<T> out = a.value().reshaped(std::move(shape));
  auto an = a.node();
  return record<T>(std::move(out), {a},
                   [an](const Tensor<T>& g) {
                     auto& ga = an->grad_buffer();
                     for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
                   },
                   "reshape");
}

namespace kernels {
template <class T>
void softmax_rows_inplace(T* data, std::size_t rows, std::size_t cols) {
  // Work on an aligned copy: vectorized exp rounds differently from the
  // scalar fallback, so the peel must not depend on the caller's address.
  Eigen::Array<T, Eigen::Dynamic, 1> row(static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows; ++r) {
    T* src = data + r * cols;
    std::copy_n(src, cols, row.data());
    const T mx = row.maxCoeff();
    row = (row - mx).exp();
    row *= T{1} / sum_fixed(row.data(), cols);
    std::copy_n(row.data(), cols, src);
  }
}
}  // namespace kernels

namespace {
template <class T>
Var<T> softmax_impl(const Var<T>& x, const Tensor<T>* mask) {
  if (x.rank() < 1 || x.shape().back() == 0) {
    throw DimensionError("softmax_rows: empty rows in " + to_string(x.shape()));
  }
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.value().numel() / cols;
  Tensor<T> out = x.value();
  if (mask) {
    require_same_shape(x.shape(), mask->shape(), "softmax_rows mask");
    for (std::size_t r = 0; r < rows; ++r) {
      bool any_open = false;
      for (std::size_t j = 0; j < cols; ++j) {
        const T m = (*mask)[r * cols + j];
        any_open = any_open || m != masked_logit<T>();
        out[r * cols + j] += m;
      }
      if (!any_open) throw DegenerateRowError(r);
    }
  }
  kernels::softmax_rows_inplace(out.ptr(), rows, cols);
  auto xn = x.node();
  auto yn = std::make_shared<Tensor<T>>(out);
  return record<T>(std::move(out), {x},
                   [xn, yn, rows, cols](const Tensor<T>& g) {
                     auto& gx = xn->grad_buffer();
                     const Tensor<T>& y = *yn;
                     for (std::size_t r = 0; r < rows; ++r) {
                       const std::size_t o = r * cols;
                       T dot = 0;
                       for (std::size_t j = 0; j < cols; ++j) dot += g[o + j] * y[o + j];
                       for (std::size_t j = 0; j < cols; ++j) gx[o + j] += y[o + j] * (g[o + j] - dot);
                     }
                   },
                   "softmax_rows");
}
}  // namespace

template <class T>
Var<T> softmax_rows(const Var<T>& x) {
  return softmax_impl<T>(x, nullptr);
}

template <class T>
Var<T> softmax_rows(const Var<T>& x, const Tensor<T>& additive_mask) {
  return softmax_impl<T>(x, &additive_mask);
}

template <class T>
Var<T> gelu(const Var<T>& x) {
  using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
  static constexpr Eigen::Index kChunk = 1024;
  const auto n = static_cast<Eigen::Index>(x.value().numel());
  const T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  Tensor<T> out(x.shape());
  {
    Arr v(kChunk);
    for (Eigen::Index s = 0; s < n; s += kChunk) {
      const Eigen::Index m = std::min(kChunk, n - s);
      auto c = v.head(m);
      c = Eigen::Map<const Arr>(x.value().ptr() + s, m);
      c = c * T(0.5) * (T(1) + (c * inv_sqrt2).erf());
      std::copy_n(c.data(), m, out.ptr() + s);
    }
  }
  auto xn = x.node();
  return record<T>(std::move(out), {x},
                   [xn, n, inv_sqrt2](const Tensor<T>& g) {
                     const T inv_sqrt_2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
                     T* gx = xn->grad_buffer().ptr();
                     Arr v(kChunk), d(kChunk);
                     for (Eigen::Index s = 0; s < n; s += kChunk) {
                       const Eigen::Index m = std::min(kChunk, n - s);
                       auto cv = v.head(m);
                       auto cd = d.head(m);
                       cv = Eigen::Map<const Arr>(xn->value.ptr() + s, m);
                       cd = Eigen::Map<const Arr>(g.ptr() + s, m);
                       cd *= T(0.5) * (T(1) + (cv * inv_sqrt2).erf()) +
                             cv * inv_sqrt_2pi * (T(-0.5) * cv.square()).exp();
                       for (Eigen::Index i = 0; i < m; ++i) gx[s + i] += cd[i];
                     }
                   },
                   "gelu");
}

template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  if (!(eps > 0)) throw ConfigError("layer_norm: eps must be positive");
  if (x.rank() < 1) throw DimensionError("layer_norm: scalar input");
  const std::size_t n = x.shape().back();
  if (gamma.shape() != Shape{n} || beta.shape() != Shape{n}) {
    throw DimensionError("layer_norm: affine shapes " + to_string(gamma.shape()) + ", " +
                         to_string(beta.shape()) + " for rows of " + std::to_string(n));
  }
  const std::size_t rows = x.value().numel() / n;
  auto xhat = std::make_shared<Tensor<T>>(x.shape());
  auto rstd = std::make_shared<std::vector<T>>(rows);
  Tensor<T> out(x.shape());
  const T* xp = x.value().ptr();
  const T* gp = gamma.value().ptr();
  const T* bp = beta.value().ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xp + r * n;
    T mean = 0;
    for (std::size_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<T>(n);
    T var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<T>(n);
    const T rs = T(1) / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t j = 0; j < n; ++j) {
      const T h = (row[j] - mean) * rs;
      (*xhat)[r * n + j] = h;
      out[r * n + j] = gp[j] * h + bp[j];
    }
  }
  auto xn = x.node(), gn = gamma.node(), bn = beta.node();
  return record<T>(std::move(out), {x, gamma, beta},
                   [xn, gn, bn, xhat, rstd, rows, n](const Tensor<T>& g) {
                     if (gn->requires_grad || bn->requires_grad) {
                       auto& gg = gn->grad_buffer();
                       auto& gb = bn->grad_buffer();
                       for (std::size_t r = 0; r < rows; ++r) {
                         for (std::size_t j = 0; j < n; ++j) {
                           gg[j] += g[r * n + j] * (*xhat)[r * n + j];
                           gb[j] += g[r * n + j];
                         }
                       }
                     }
                     if (!xn->requires_grad) return;
                     auto& gx = xn->grad_buffer();
                     const T* gam = gn->value.ptr();
                     for (std::size_t r = 0; r < rows; ++r) {
                       T mean_d = 0, mean_dh = 0;
                       for (std::size_t j = 0; j < n; ++j) {
                         const T d = g[r * n + j] * gam[j];
                         mean_d += d;
                         mean_dh += d * (*xhat)[r * n + j];
                       }
                       mean_d /= static_cast<T>(n);
                       mean_dh /= static_cast<T>(n);
                       for (std::size_t j = 0; j < n; ++j) {
                         const T d = g[r * n + j] * gam[j];
                         gx[r * n + j] +=
                             (*rstd)[r] * (d - mean_d - (*xhat)[r * n + j] * mean_dh);
                       }
                     }
                   },
                   "layer_norm");
}

namespace {
// col[(c*9 + ky*3 + kx), y*W + x] = img[c, reflect(y+ky-1), reflect(x+kx-1)]
template <class T>
void im2col(const T* img, std::size_t C, std::size_t H, std::size_t W, T* col) {
  const std::size_t hw = H * W;
  const std::size_t x_lo = W > 1 ? reflect_index(-1, W) : 0, x_hi = W > 1 ? reflect_index(static_cast<long>(W), W) : 0;
  for (std::size_t c = 0; c < C; ++c) {
    const T* plane = img + c * hw;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        T* dst = col + (c * 9 + ky * 3 + kx) * hw;
        for (std::size_t y = 0; y < H; ++y) {
          const T* src = plane + reflect_index(static_cast<long>(y) + ky - 1, H) * W;
          T* d = dst + y * W;
          if (W == 1) {
            d[0] = src[0];
          } else if (kx == 0) {
            d[0] = src[x_lo];
            std::copy_n(src, W - 1, d + 1);
          } else if (kx == 1) {
            std::copy_n(src, W, d);
          } else {
            std::copy_n(src + 1, W - 1, d);
            d[W - 1] = src[x_hi];
          }
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* col, std::size_t C, std::size_t H, std::size_t W, T* img) {
  const std::size_t hw = H * W;
  const std::size_t x_lo = W > 1 ? reflect_index(-1, W) : 0, x_hi = W > 1 ? reflect_index(static_cast<long>(W), W) : 0;
  for (std::size_t c = 0; c < C; ++c) {
    T* plane = img + c * hw;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const T* src = col + (c * 9 + ky * 3 + kx) * hw;
        for (std::size_t y = 0; y < H; ++y) {
          T* dst = plane + reflect_index(static_cast<long>(y) + ky - 1, H) * W;
          const T* s = src + y * W;
          if (W == 1) {
            dst[0] += s[0];
          } else if (kx == 0) {
            dst[x_lo] += s[0];
            for (std::size_t x = 1; x < W; ++x) dst[x - 1] += s[x];
          } else if (kx == 1) {
            for (std::size_t x = 0; x < W; ++x) dst[x] += s[x];
          } else {
            for (std::size_t x = 0; x + 1 < W; ++x) dst[x + 1] += s[x];
            dst[x_hi] += s[W - 1];
          }
        }
      }
    }
  }
}
}  // namespace

template <class T>
Var<T> conv2d_3x3(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  if (x.rank() != 3 && x.rank() != 4) {
    throw DimensionError("conv2d_3x3: input must be [C×H×W] or [N×C×H×W], got " +
                         to_string(x.shape()));
  }
  if (w.rank() != 4 || w.dim(2) != 3 || w.dim(3) != 3) {
    throw DimensionError("conv2d_3x3: kernel must be [C_out×C_in×3×3], got " +
                         to_string(w.shape()));
  }
  const bool batched = x.rank() == 4;
  const std::size_t N = batched ? x.dim(0) : 1;
  const std::size_t C = x.dim(batched ? 1 : 0);
  const std::size_t H = x.dim(batched ? 2 : 1);
  const std::size_t W = x.dim(batched ? 3 : 2);
  const std::size_t Co = w.dim(0);
  if (w.dim(1) != C) {
    throw DimensionError("conv2d_3x3: kernel " + to_string(w.shape()) + " expects " +
                         std::to_string(w.dim(1)) + " input channels, input " +
                         to_string(x.shape()) + " has " + std::to_string(C));
  }
  if (b.shape() != Shape{Co}) {
    throw DimensionError("conv2d_3x3: bias " + to_string(b.shape()) + " for " +
                         std::to_string(Co) + " output channels");
  }
  const std::size_t hw = H * W, K = C * 9;
  Shape out_shape = batched ? Shape{N, Co, H, W} : Shape{Co, H, W};
  Tensor<T> out(out_shape);
  const T* xp = x.value().ptr();
  const T* bp = b.value().ptr();

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ni = 0; ni < static_cast<std::ptrdiff_t>(N); ++ni) {
    const auto n = static_cast<std::size_t>(ni);
    std::vector<T> col(K * hw);
    im2col(xp + n * C * hw, C, H, W, col.data());
    MapMat<T> o(out.ptr() + n * Co * hw, static_cast<Eigen::Index>(Co),
                static_cast<Eigen::Index>(hw));
    o.noalias() = view(w.value(), Co, K) * CMapMat<T>(col.data(), static_cast<Eigen::Index>(K),
                                                       static_cast<Eigen::Index>(hw));
    for (std::size_t co = 0; co < Co; ++co) o.row(static_cast<Eigen::Index>(co)).array() += bp[co];
  }

  auto xn = x.node(), wn = w.node(), bn = b.node();
  return record<T>(
      std::move(out), {x, w, b},
      [xn, wn, bn, N, C, H, W, Co, hw, K](const Tensor<T>& g) {
        if (bn->requires_grad) {
          auto& gb = bn->grad_buffer();
          for (std::size_t n = 0; n < N; ++n)
            for (std::size_t co = 0; co < Co; ++co) {
              const T* row = g.ptr() + (n * Co + co) * hw;
              T s = 0;
              for (std::size_t i = 0; i < hw; ++i) s += row[i];
              gb[co] += s;
            }
        }
        if (!xn->requires_grad && !wn->requires_grad) return;
        // Per-image weight gradients are reduced in image order for determinism.
        std::vector<RowMat<T>> dw(wn->requires_grad ? N : 0);
        T* gx = xn->requires_grad ? xn->grad_buffer().ptr() : nullptr;
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t ni = 0; ni < static_cast<std::ptrdiff_t>(N); ++ni) {
          const auto n = static_cast<std::size_t>(ni);
          CMapMat<T> gn(g.ptr() + n * Co * hw, static_cast<Eigen::Index>(Co),
                        static_cast<Eigen::Index>(hw));
          if (wn->requires_grad) {
            std::vector<T> col(K * hw);
            im2col(xn->value.ptr() + n * C * hw, C, H, W, col.data());
            dw[n].noalias() = gn * CMapMat<T>(col.data(), static_cast<Eigen::Index>(K),
                                              static_cast<Eigen::Index>(hw))
                                       .transpose();
          }
          if (gx) {
            RowMat<T> dcol = view(wn->value, Co, K).transpose() * gn;
            col2im_add(dcol.data(), C, H, W, gx + n * C * hw);
          }
        }
        if (wn->requires_grad) {
          auto gw = view(wn->grad_buffer(), Co, K);
          for (std::size_t n = 0; n < N; ++n) gw += dw[n];
        }
      },
      "conv2d_3x3");
}

template <class T>
Var<T> l1_loss(const Var<T>& pred, const Tensor<T>& target) {
  require_same_shape(pred.shape(), target.shape(), "l1_loss");
  const std::size_t n = target.numel();
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) total += std::abs(pred.value()[i] - target[i]);
  auto pn = pred.node();
  auto tgt = std::make_shared<Tensor<T>>(target);
  return record<T>(Tensor<T>::scalar(total / static_cast<T>(n)), {pred},
                   [pn, tgt, n](const Tensor<T>& g) {
                     auto& gp = pn->grad_buffer();
                     const T s = g[0] / static_cast<T>(n);
                     for (std::size_t i = 0; i < n; ++i) {
                       const T d = pn->value[i] - (*tgt)[i];
                       gp[i] += d > 0 ? s : (d < 0 ? -s : T(0));
                     }
                   },
                   "l1_loss");
}

#define KGT_INSTANTIATE_OPS(T)                                                         \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                                \
  template Var<T> linear(const Var<T>&, const Var<T>&);                                \
  template Var<T> add(const Var<T>&, const Var<T>&);                                   \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                   \
  template Var<T> scale(const Var<T>&, T);                                             \
  template Var<T> sum(const Var<T>&);                                                  \
  template Var<T> reshape(const Var<T>&, Shape);                                       \
  template Var<T> softmax_rows(const Var<T>&);                                         \
  template Var<T> softmax_rows(const Var<T>&, const Tensor<T>&);                       \
  template Var<T> gelu(const Var<T>&);                                                 \
  template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, T);          \
  template Var<T> conv2d_3x3(const Var<T>&, const Var<T>&, const Var<T>&);             \
  template Var<T> l1_loss(const Var<T>&, const Tensor<T>&);                            \
  template void kernels::softmax_rows_inplace(T*, std::size_t, std::size_t);

KGT_INSTANTIATE_OPS(float)
KGT_INSTANTIATE_OPS(double)

}  // namespace kgt
