#include <cmath>
#include <sstream>

#include "doctest.h"
#include "kgt/bench.hpp"
#include "kgt/error.hpp"

using namespace kgt;

namespace {
const CostBackend kAll[] = {CostBackend::Dense, CostBackend::Gather, CostBackend::Mask, CostBackend::Streaming};

double wall(const CostReport& r, std::size_t hw, std::size_t k, CostBackend b) {
  for (const auto& row : r.rows)
    if (row.cfg.hw == hw && row.cfg.k == k && row.cfg.backend == b && !row.skipped) return row.wall_ms;
  return -1;
}
}  // namespace

TEST_SUITE("bench") {

TEST_CASE("flop model examples") {
  CHECK(attention_flops(64, 8, 16, 1, CostBackend::Dense) == 262144);
  CHECK(attention_flops(64, 8, 16, 1, CostBackend::Gather) == 32768);
  CHECK(attention_flops(64, 8, 16, 1, CostBackend::Streaming) == 32768);
  CHECK(attention_flops(64, 8, 16, 1, CostBackend::Mask) == 262144);
  CHECK(attention_flops(64, 64, 16, 1, CostBackend::Gather) == attention_flops(64, 64, 16, 1, CostBackend::Dense));
  CHECK(attention_flops(64, 8, 16, 3, CostBackend::Gather) == 3 * 32768);
}

TEST_CASE("dense over sparse equals hw over k") {
  for (std::size_t hw : {4, 16, 64, 256, 1024})
    for (std::size_t k = 1; k < hw; k += (hw > 64 ? 37 : 1))
      for (std::size_t d : {4, 16}) {
        const auto dense = attention_flops(hw, k, d, 2, CostBackend::Dense);
        const auto sparse = attention_flops(hw, k, d, 2, CostBackend::Gather);
        CHECK(dense * k == sparse * hw);
      }
}

TEST_CASE("flop scaling laws") {
  CHECK(attention_flops(128, 8, 16, 2, CostBackend::Dense) == 4 * attention_flops(64, 8, 16, 2, CostBackend::Dense));
  CHECK(attention_flops(128, 8, 16, 2, CostBackend::Gather) == 2 * attention_flops(64, 8, 16, 2, CostBackend::Gather));
}

TEST_CASE("byte model examples") {
  CHECK(attention_peak_bytes(64, 8, 16, 1, CostBackend::Gather) == (2 * 64 * 8 * 16 + 64 * 8) * 4);
  CHECK(attention_peak_bytes(64, 8, 16, 2, CostBackend::Mask) == 2 * 64 * 64 * 4);
  CHECK(attention_peak_bytes(64, 8, 16, 2, CostBackend::Dense) == 2 * 64 * 64 * 4);
  CHECK(attention_peak_bytes(64, 8, 16, 2, CostBackend::Streaming, 4, 16) == 2 * 64 * 16 * 4 + 2 * 2 * 64 * 4);
  CHECK(attention_peak_bytes(64, 8, 16, 1, CostBackend::Gather, 8) == 2 * attention_peak_bytes(64, 8, 16, 1, CostBackend::Gather, 4));
}

TEST_CASE("byte scaling laws") {
  CHECK(attention_peak_bytes(128, 8, 16, 2, CostBackend::Mask) == 4 * attention_peak_bytes(64, 8, 16, 2, CostBackend::Mask));
  const double ratio = static_cast<double>(attention_peak_bytes(256, 16, 16, 2, CostBackend::Gather)) /
                       static_cast<double>(attention_peak_bytes(256, 8, 16, 2, CostBackend::Gather));
  CHECK(ratio == doctest::Approx(2.0));
  for (std::size_t k : {4, 8, 32, 255})
    CHECK(attention_peak_bytes(256, k, 16, 2, CostBackend::Streaming) ==
          attention_peak_bytes(256, 1, 16, 2, CostBackend::Streaming));
  CHECK(attention_peak_bytes(4096, 32, 32, 1, CostBackend::Mask) > attention_peak_bytes(4096, 32, 32, 1, CostBackend::Gather));
}

TEST_CASE("backend names round trip") {
  for (auto b : kAll) CHECK(parse_cost_backend(cost_backend_name(b)) == b);
  CHECK_THROWS_AS(parse_cost_backend("sparse"), std::exception);
}

TEST_CASE("default grid shape") {
  const auto g = default_grid();
  CHECK(g.size() == 3 * (1 + 5 * 3));
  for (const auto& c : g) {
    CHECK(c.k >= 1);
    CHECK((c.backend == CostBackend::Dense ? c.k == c.hw : c.k <= c.hw - 1));
  }
}

TEST_CASE("scaling run fills rows with model and measured counters") {
  std::vector<ScalingConfig> grid;
  for (std::size_t hw : {16, 64}) {
    grid.push_back({hw, hw, 8, 2, CostBackend::Dense, 8});
    for (auto b : {CostBackend::Gather, CostBackend::Mask, CostBackend::Streaming}) grid.push_back({hw, 4, 8, 2, b, 8});
  }
  auto r = run_scaling(grid, 3);
  CHECK(r.rows.size() == grid.size());
  CHECK(r.completed() == grid.size());
  for (const auto& row : r.rows) {
    CHECK(row.wall_ms >= 0);
    CHECK(row.flops == attention_flops(row.cfg.hw, row.cfg.k, row.cfg.d, row.cfg.heads, row.cfg.backend));
    CHECK(row.measured_flops == row.flops);
    CHECK(row.peak_aux_bytes ==
          attention_peak_bytes(row.cfg.hw, row.cfg.k, row.cfg.d, row.cfg.heads, row.cfg.backend, 4, row.cfg.block_size));
    if (row.cfg.backend != CostBackend::Streaming) CHECK(row.measured_peak_bytes == row.peak_aux_bytes);
    else CHECK(row.measured_peak_bytes <= row.peak_aux_bytes);
  }
  std::ostringstream os;
  r.write_csv(os);
  std::istringstream in(os.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == "n_nodes,k,d,heads,backend,flops,peak_aux_bytes,wall_ms,skipped");
  std::size_t n = 0;
  while (std::getline(in, line)) ++n;
  CHECK(n == grid.size());
  CHECK_THROWS_AS(run_scaling(grid, 2), ConfigError);
}

TEST_CASE("over-budget cells are skipped, not fatal") {
  std::vector<ScalingConfig> grid{{64, 4, 8, 1, CostBackend::Gather, 8}, {1024, 4, 8, 1, CostBackend::Mask, 8}};
  auto r = run_scaling(grid, 3, 1 << 16);
  REQUIRE(r.rows.size() == 2);
  CHECK_FALSE(r.rows[0].skipped);
  CHECK(r.rows[1].skipped);
  CHECK(r.completed() == 1);
  std::ostringstream os;
  r.write_csv(os);
  CHECK(os.str().find("mask") != std::string::npos);
}

TEST_CASE("measured wall time trends") {
  std::vector<ScalingConfig> grid;
  for (std::size_t hw : {256, 1024}) {
    grid.push_back({hw, hw, 16, 2, CostBackend::Dense, 16});
    grid.push_back({hw, 8, 16, 2, CostBackend::Gather, 16});
    grid.push_back({hw, 8, 16, 2, CostBackend::Mask, 16});
  }
  auto r = run_scaling(grid, 3);
  const double mask_growth = wall(r, 1024, 8, CostBackend::Mask) / wall(r, 256, 8, CostBackend::Mask);
  const double gather_growth = wall(r, 1024, 8, CostBackend::Gather) / wall(r, 256, 8, CostBackend::Gather);
  MESSAGE("mask x" << mask_growth << ", gather x" << gather_growth);
  CHECK(mask_growth > gather_growth);
}

TEST_CASE("gather at k = hw-1 stays within 3x of dense wall time") {
  std::vector<ScalingConfig> grid{{256, 256, 16, 2, CostBackend::Dense, 16}, {256, 255, 16, 2, CostBackend::Gather, 16}};
  auto r = run_scaling(grid, 5);
  const double dense = wall(r, 256, 256, CostBackend::Dense), gather = wall(r, 256, 255, CostBackend::Gather);
  MESSAGE("dense " << dense << " ms, gather " << gather << " ms");
  CHECK(gather <= 3 * dense);
}

}  // TEST_SUITE
