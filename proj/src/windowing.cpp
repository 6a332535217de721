#include "kgt/windowing.hpp"

#include <string>
#include <vector>

#include "kgt/ops.hpp"

namespace kgt {
namespace {

// Flat source offset in the [N×C×H×W] map for every (window, node) pair, per channel 0.
std::vector<std::size_t> window_sources(std::size_t images, std::size_t C, std::size_t H,
                                        std::size_t W, std::size_t win, std::size_t ph,
                                        std::size_t pw) {
  const std::size_t gh = ph / win, gw = pw / win, hw = win * win;
  std::vector<std::size_t> src(images * gh * gw * hw);
  std::size_t idx = 0;
  for (std::size_t n = 0; n < images; ++n)
    for (std::size_t wy = 0; wy < gh; ++wy)
      for (std::size_t wx = 0; wx < gw; ++wx)
        for (std::size_t py = 0; py < win; ++py)
          for (std::size_t px = 0; px < win; ++px) {
            const std::size_t y = reflect_index(static_cast<long>(wy * win + py), H);
            const std::size_t x = reflect_index(static_cast<long>(wx * win + px), W);
            src[idx++] = n * C * H * W + y * W + x;
          }
  return src;
}

}  // namespace

template <class T>
void WindowBatch<T>::validate() const {
  auto fail = [](const std::string& what) { throw IntegrityError("window batch: " + what); };
  if (win < 2) fail("window side " + std::to_string(win) + " < 2");
  if (nodes.rank() != 3) fail("nodes must be [B×hw×C], got " + to_string(nodes.shape()));
  if (padded_h % win || padded_w % win) fail("padded extents not divisible by window");
  if (padded_h != padded_extent(orig_h, win) || padded_w != padded_extent(orig_w, win)) {
    fail("padded extents inconsistent with original extents");
  }
  if (nodes.dim(1) != win_nodes()) fail("node count per window != win²");
  if (nodes.dim(2) != channels) fail("channel count mismatch");
  if (nodes.dim(0) != images * grid_h() * grid_w()) fail("window count mismatch");
  if (!batched && images != 1) fail("unbatched source with several images");
}

template <class T>
WindowBatch<T> partition(const Var<T>& f, std::size_t win) {
  if (win < 2) {
    throw ConfigError("partition: window side must be >= 2, got " + std::to_string(win));
  }
  if (f.rank() != 3 && f.rank() != 4) {
    throw DimensionError("partition: expected [C×H×W] or [N×C×H×W], got " + to_string(f.shape()));
  }
  WindowBatch<T> wb;
  wb.batched = f.rank() == 4;
  const std::size_t off = wb.batched ? 1 : 0;
  wb.images = wb.batched ? f.dim(0) : 1;
  wb.channels = f.dim(off);
  wb.orig_h = f.dim(off + 1);
  wb.orig_w = f.dim(off + 2);
  if (wb.orig_h == 0 || wb.orig_w == 0) throw DimensionError("partition: empty feature map");
  wb.win = win;
  wb.padded_h = padded_extent(wb.orig_h, win);
  wb.padded_w = padded_extent(wb.orig_w, win);

  const std::size_t C = wb.channels, H = wb.orig_h, W = wb.orig_w, plane = H * W;
  auto src = std::make_shared<std::vector<std::size_t>>(
      window_sources(wb.images, C, H, W, win, wb.padded_h, wb.padded_w));
  const std::size_t hw = win * win;
  const std::size_t B = src->size() / hw;
  Tensor<T> out(Shape{B, hw, C});
  const T* fp = f.value().ptr();
  T* op = out.ptr();
  for (std::size_t i = 0; i < src->size(); ++i)
    for (std::size_t c = 0; c < C; ++c) op[i * C + c] = fp[(*src)[i] + c * plane];

  auto fn = f.node();
  wb.nodes = record<T>(std::move(out), {f},
                       [fn, src, C, plane](const Tensor<T>& g) {
                         T* gf = fn->grad_buffer().ptr();
                         for (std::size_t i = 0; i < src->size(); ++i)
                           for (std::size_t c = 0; c < C; ++c)
                             gf[(*src)[i] + c * plane] += g[i * C + c];
                       },
                       "partition");
  return wb;
}

template <class T>
Var<T> merge(const WindowBatch<T>& wb) {
  wb.validate();
  const std::size_t C = wb.channels, H = wb.orig_h, W = wb.orig_w, win = wb.win;
  const std::size_t gh = wb.grid_h(), gw = wb.grid_w(), hw = wb.win_nodes();
  // dst pixel (n, y, x) <- node (b, p)
  auto map = std::make_shared<std::vector<std::size_t>>(wb.images * H * W);
  for (std::size_t n = 0; n < wb.images; ++n)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const std::size_t b = (n * gh + y / win) * gw + x / win;
        const std::size_t p = (y % win) * win + x % win;
        (*map)[(n * H + y) * W + x] = b * hw + p;
      }
  Shape out_shape = wb.batched ? Shape{wb.images, C, H, W} : Shape{C, H, W};
  Tensor<T> out(out_shape);
  const T* np = wb.nodes.value().ptr();
  const std::size_t plane = H * W;
  for (std::size_t n = 0; n < wb.images; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < plane; ++i)
        out[(n * C + c) * plane + i] = np[(*map)[n * plane + i] * C + c];

  auto nn = wb.nodes.node();
  const std::size_t images = wb.images;
  return record<T>(std::move(out), {wb.nodes},
                   [nn, map, images, C, plane](const Tensor<T>& g) {
                     T* gn = nn->grad_buffer().ptr();
                     for (std::size_t n = 0; n < images; ++n)
                       for (std::size_t c = 0; c < C; ++c)
                         for (std::size_t i = 0; i < plane; ++i)
                           gn[(*map)[n * plane + i] * C + c] += g[(n * C + c) * plane + i];
                   },
                   "merge");
}

template struct WindowBatch<float>;
template struct WindowBatch<double>;
template WindowBatch<float> partition(const Var<float>&, std::size_t);
template WindowBatch<double> partition(const Var<double>&, std::size_t);
template Var<float> merge(const WindowBatch<float>&);
template Var<double> merge(const WindowBatch<double>&);

}  // namespace kgt
