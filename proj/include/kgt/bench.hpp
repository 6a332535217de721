#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace kgt {

/// Attention variants covered by the cost models. Dense is plain full
/// attention; the other three are the Key-Graph backends.
enum class CostBackend { Dense, Gather, Mask, Streaming };

std::string cost_backend_name(CostBackend b);
CostBackend parse_cost_backend(std::string_view name);

/// Score + aggregate FLOPs (two per multiply-accumulate), projections excluded.
/// Dense and Mask evaluate every logit; Gather and Streaming only the k neighbors.
std::uint64_t attention_flops(std::size_t hw, std::size_t k, std::size_t d, std::size_t heads,
                              CostBackend backend);

/// Per-window auxiliary storage of the forward pass.
std::size_t attention_peak_bytes(std::size_t hw, std::size_t k, std::size_t d, std::size_t heads,
                                 CostBackend backend, std::size_t bytes_per_real = 4,
                                 std::size_t block_size = 16);

struct ScalingConfig {
  std::size_t hw = 64;
  std::size_t k = 8;
  std::size_t d = 16;
  std::size_t heads = 2;
  CostBackend backend = CostBackend::Gather;
  std::size_t block_size = 16;
};

struct CostRow {
  ScalingConfig cfg;
  std::uint64_t flops = 0;         // model
  std::size_t peak_aux_bytes = 0;  // model
  double wall_ms = 0;              // median over repeats
  bool skipped = false;
  std::uint64_t measured_flops = 0;
  std::size_t measured_peak_bytes = 0;
};

struct CostReport {
  std::vector<CostRow> rows;  // skipped cells included, flagged

  std::size_t completed() const;
  /// Header n_nodes,k,d,heads,backend,flops,peak_aux_bytes,wall_ms,skipped.
  void write_csv(std::ostream& os) const;
};

/// hw ∈ {64, 256, 1024}; k over {4, 8, 16, 32, hw−1}; d = 16; heads = 2;
/// all three backends plus one dense cell per hw.
std::vector<ScalingConfig> default_grid();

/// Single-threaded timing of one forward per repeat (repeats ≥ 3). Cells
/// whose modeled scratch exceeds `byte_budget`, or whose allocation fails,
/// are recorded as skipped.
CostReport run_scaling(const std::vector<ScalingConfig>& grid, std::size_t repeats,
                       std::size_t byte_budget = std::size_t{1} << 30, std::uint64_t seed = 0);

}  // namespace kgt
