#include "kgt/bench.hpp"

#include <algorithm>
#include <chrono>
#include <new>
#include <ostream>
#include <random>

#include "kgt/attention.hpp"
#include "kgt/instrument.hpp"
#include "kgt/keygraph.hpp"

namespace kgt {

std::string cost_backend_name(CostBackend b) {
  switch (b) {
    case CostBackend::Dense: return "dense";
    case CostBackend::Gather: return "gather";
    case CostBackend::Mask: return "mask";
    case CostBackend::Streaming: return "streaming";
  }
  return "?";
}

CostBackend parse_cost_backend(std::string_view name) {
  if (name == "dense") return CostBackend::Dense;
  if (name == "gather") return CostBackend::Gather;
  if (name == "mask") return CostBackend::Mask;
  if (name == "streaming") return CostBackend::Streaming;
  throw ConfigError("unknown backend '" + std::string(name) + "' (dense, gather, mask, streaming)");
}

std::uint64_t attention_flops(std::size_t hw, std::size_t k, std::size_t d, std::size_t heads,
                              CostBackend backend) {
  const std::uint64_t keys = (backend == CostBackend::Dense || backend == CostBackend::Mask) ? hw : k;
  return static_cast<std::uint64_t>(heads) * (2 * hw * keys * d + 2 * hw * keys * d);
}

std::size_t attention_peak_bytes(std::size_t hw, std::size_t k, std::size_t d, std::size_t heads,
                                 CostBackend backend, std::size_t bytes_per_real,
                                 std::size_t block_size) {
  switch (backend) {
    case CostBackend::Gather: return heads * (2 * hw * k * d + hw * k) * bytes_per_real;
    case CostBackend::Dense:
    case CostBackend::Mask: return heads * hw * hw * bytes_per_real;
    case CostBackend::Streaming:
      return heads * hw * std::min(block_size, hw) * bytes_per_real + heads * 2 * hw * bytes_per_real;
  }
  return 0;
}

std::size_t CostReport::completed() const {
  return static_cast<std::size_t>(std::count_if(rows.begin(), rows.end(), [](const CostRow& r) { return !r.skipped; }));
}

void CostReport::write_csv(std::ostream& os) const {
  os << "n_nodes,k,d,heads,backend,flops,peak_aux_bytes,wall_ms,skipped\n";
  for (const auto& r : rows) {
    os << r.cfg.hw << ',' << r.cfg.k << ',' << r.cfg.d << ',' << r.cfg.heads << ','
       << cost_backend_name(r.cfg.backend) << ',' << r.flops << ',' << r.peak_aux_bytes << ',' << r.wall_ms
       << ',' << (r.skipped ? 1 : 0) << '\n';
  }
}

std::vector<ScalingConfig> default_grid() {
  std::vector<ScalingConfig> grid;
  for (std::size_t hw : {64, 256, 1024}) {
    grid.push_back({hw, hw, 16, 2, CostBackend::Dense, 16});
    std::vector<std::size_t> ks{4, 8, 16, 32, hw - 1};
    for (std::size_t k : ks) {
      for (auto b : {CostBackend::Gather, CostBackend::Mask, CostBackend::Streaming}) {
        grid.push_back({hw, k, 16, 2, b, 16});
      }
    }
  }
  return grid;
}

namespace {

struct ThreadPin {
  int prev;
  ThreadPin() : prev(thread_count()) { set_threads(1); }
  ~ThreadPin() { set_threads(prev); }
};

Tensor<float> random_tensor(Shape s, std::mt19937_64& rng) {
  std::normal_distribution<float> g(0.f, 1.f);
  Tensor<float> t(std::move(s));
  for (auto& v : t.data()) v = g(rng);
  return t;
}

}  // namespace

CostReport run_scaling(const std::vector<ScalingConfig>& grid, std::size_t repeats,
                       std::size_t byte_budget, std::uint64_t seed) {
  if (repeats < 3) throw ConfigError("run_scaling: repeats must be >= 3");
  ThreadPin pin;
  NoGradGuard no_grad;
  std::mt19937_64 rng(seed);
  CostReport report;
  for (const auto& c : grid) {
    const bool dense = c.backend == CostBackend::Dense;
    if (c.hw < 2 || c.d < 1 || c.heads < 1 || (!dense && (c.k < 1 || c.k > c.hw - 1))) {
      throw ConfigError("run_scaling: invalid cell hw=" + std::to_string(c.hw) + " k=" + std::to_string(c.k));
    }
    CostRow row;
    row.cfg = c;
    row.flops = attention_flops(c.hw, c.k, c.d, c.heads, c.backend);
    row.peak_aux_bytes = attention_peak_bytes(c.hw, c.k, c.d, c.heads, c.backend, sizeof(float), c.block_size);
    if (row.peak_aux_bytes > byte_budget) {
      row.skipped = true;
      report.rows.push_back(row);
      continue;
    }
    try {
      const Shape s{1, c.heads, c.hw, c.d};
      const Var<float> q(random_tensor(s, rng)), k(random_tensor(s, rng)), v(random_tensor(s, rng));
      KeyGraph g;
      if (!dense) g = build_graph(random_tensor({1, c.hw, c.d}, rng), c.k);
      const Backend be = c.backend == CostBackend::Gather ? Backend::gather()
                         : c.backend == CostBackend::Mask ? Backend::mask()
                                                          : Backend::streaming(c.block_size);
      std::vector<double> times;
      for (std::size_t r = 0; r < repeats; ++r) {
        instrument::reset();
        const auto t0 = std::chrono::steady_clock::now();
        auto out = dense ? dense_attention(q, k, v) : keygraph_attention(q, k, v, g, be);
        const auto t1 = std::chrono::steady_clock::now();
        times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
        const auto snap = instrument::snapshot();
        row.measured_flops = snap.attention_flops;
        row.measured_peak_bytes = snap.peak_aux_bytes;
      }
      std::nth_element(times.begin(), times.begin() + static_cast<std::ptrdiff_t>(times.size() / 2), times.end());
      row.wall_ms = times[times.size() / 2];
    } catch (const std::bad_alloc&) {
      row.skipped = true;
    }
    report.rows.push_back(row);
  }
  return report;
}

}  // namespace kgt
