#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>

#include "CLI11.hpp"
#include "kgt/bench.hpp"
#include "kgt/gradcheck.hpp"
#include "kgt/instrument.hpp"
#include "kgt/keygraph.hpp"
#include "kgt/model.hpp"
#include "kgt/pgm.hpp"
#include "kgt/training.hpp"
#include "kgt/windowing.hpp"

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;

// Option values that parse but make no sense are usage errors.
struct UsageError : kgt::Error {
  using kgt::Error::Error;
};

void flush_warnings() {
  for (const auto& w : kgt::drain_warnings()) std::cerr << "warning: " << w << "\n";
}

class Output {
 public:
  explicit Output(const std::string& path) {
    if (path.empty() || path == "-") return;
    file_ = std::make_unique<std::ofstream>(path, std::ios::trunc);
    if (!*file_) throw kgt::IoError("cannot write '" + path + "'");
  }
  std::ostream& stream() { return file_ ? *file_ : std::cout; }

 private:
  std::unique_ptr<std::ofstream> file_;
};

int build_graph_cmd(const std::string& in, std::size_t window, std::size_t k, const std::string& out) {
  if (window < 2) throw UsageError("--window must be >= 2");
  if (k < 1 || k > window * window - 1) {
    throw UsageError("--k must lie in [1, " + std::to_string(window * window - 1) + "]");
  }
  const auto img = kgt::to_tensor(kgt::read_pgm(in));
  const auto wb = kgt::partition(kgt::Var<float>(img), window);
  const auto g = kgt::build_graph(wb.nodes.value(), k);
  Output o(out);
  auto& os = o.stream();
  os << "window,row,rank,neighbor\n";
  for (std::size_t w = 0; w < g.windows; ++w)
    for (std::size_t i = 0; i < g.win_nodes; ++i) {
      auto row = g.row(w, i);
      for (std::size_t r = 0; r < row.size(); ++r) os << w << ',' << i << ',' << r << ',' << row[r] << '\n';
    }
  return 0;
}

std::vector<kgt::ScalingConfig> named_grid(const std::string& name) {
  if (name == "default") return kgt::default_grid();
  if (name == "quick") {
    std::vector<kgt::ScalingConfig> grid;
    for (std::size_t hw : {16, 64}) {
      grid.push_back({hw, hw, 8, 1, kgt::CostBackend::Dense, 8});
      for (std::size_t k : {std::size_t{4}, hw - 1})
        for (auto b : {kgt::CostBackend::Gather, kgt::CostBackend::Mask, kgt::CostBackend::Streaming})
          grid.push_back({hw, k, 8, 1, b, 8});
    }
    return grid;
  }
  throw UsageError("unknown grid '" + name + "' (default, quick)");
}

int attn_bench_cmd(const std::string& grid, std::size_t repeats, const std::string& out) {
  if (repeats < 3) throw UsageError("--repeats must be >= 3");
  const auto report = kgt::run_scaling(named_grid(grid), repeats);
  Output o(out);
  report.write_csv(o.stream());
  return 0;
}

int gradcheck_cmd(std::uint64_t seed) {
  const auto results = kgt::run_gradcheck_suite(seed);
  bool ok = true;
  for (const auto& r : results) {
    std::printf("%-30s err=%.3e tol=%.0e %s\n", r.name.c_str(), r.error, r.tolerance, r.passed ? "PASS" : "FAIL");
    ok = ok && r.passed;
  }
  std::printf("%s: %zu checks\n", ok ? "all passed" : "FAILED", results.size());
  return ok ? 0 : kExitData;
}

int train_cmd(const std::string& config_path, const std::string& out) {
  const kgt::Config cfg = config_path.empty() ? kgt::Config() : kgt::load_config(config_path);
  const auto net_cfg = kgt::KGTNetConfig::from_config(cfg);
  const auto train_cfg = kgt::TrainConfig::from_config(cfg);
  auto net = kgt::KGTNet::init(net_cfg, net_cfg.seed);
  const auto result = kgt::train(net, train_cfg, &std::cout);
  flush_warnings();
  kgt::save(net, out);
  std::cerr << "held-out PSNR: noisy " << result.final_eval.psnr_noisy << " dB, output "
            << result.final_eval.psnr_output << " dB\n";
  return 0;
}

int denoise_cmd(const std::string& model, const std::string& in, const std::string& out, std::size_t k,
                const std::string& backend, std::size_t block_size) {
  if (k < 1) throw UsageError("--k must be >= 1");
  if (block_size < 1) throw UsageError("--block-size must be >= 1");
  kgt::Backend be;
  try {
    be = kgt::Backend::parse(backend, block_size);
  } catch (const kgt::ConfigError& e) {
    throw UsageError(e.what());
  }
  const auto net = kgt::load(model);
  const auto img = kgt::read_pgm(in);
  const auto y = net.run(kgt::to_tensor(img), k, be);
  flush_warnings();
  kgt::write_pgm(kgt::from_tensor(y), out);
  return 0;
}

int flops_cmd(std::size_t hw, std::size_t k, std::size_t d, std::size_t heads, std::size_t block_size,
              std::size_t bytes) {
  if (hw < 2 || d < 1 || heads < 1 || block_size < 1 || bytes < 1) throw UsageError("extents must be positive, hw >= 2");
  if (k < 1 || k > hw - 1) throw UsageError("--k must lie in [1, hw-1]");
  std::printf("%-10s %16s %16s\n", "backend", "flops", "peak_aux_bytes");
  for (auto b : {kgt::CostBackend::Dense, kgt::CostBackend::Gather, kgt::CostBackend::Mask,
                 kgt::CostBackend::Streaming}) {
    std::printf("%-10s %16llu %16zu\n", kgt::cost_backend_name(b).c_str(),
                static_cast<unsigned long long>(kgt::attention_flops(hw, k, d, heads, b)),
                kgt::attention_peak_bytes(hw, k, d, heads, b, bytes, block_size));
  }
  std::printf("dense/sparse = %.6g (hw/k = %.6g)\n",
              static_cast<double>(kgt::attention_flops(hw, k, d, heads, kgt::CostBackend::Dense)) /
                  static_cast<double>(kgt::attention_flops(hw, k, d, heads, kgt::CostBackend::Gather)),
              static_cast<double>(hw) / static_cast<double>(k));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  kgt::configure_runtime();
  CLI::App app{"Key-Graph Transformer toolkit"};
  app.require_subcommand(1);

  std::string in, out, model, config, grid = "default", backend = "streaming";
  std::size_t window = 8, k = 8, repeats = 5, d = 16, heads = 2, hw = 64, block_size = 16, bytes = 4;
  std::uint64_t seed = 0;

  auto* bg = app.add_subcommand("build-graph", "Dump the Key-Graph of an image as CSV");
  bg->add_option("--in", in, "Input PGM")->required();
  bg->add_option("--window", window, "Window side")->capture_default_str();
  bg->add_option("--k", k, "Neighbors per node")->capture_default_str();
  bg->add_option("--out", out, "Output CSV (stdout if omitted)");

  auto* ab = app.add_subcommand("attn-bench", "Measure attention cost across a grid");
  ab->add_option("--grid", grid, "Grid name: default or quick")->capture_default_str();
  ab->add_option("--repeats", repeats, "Timed repeats per cell")->capture_default_str();
  ab->add_option("--out", out, "Output CSV (stdout if omitted)");

  auto* gc = app.add_subcommand("gradcheck", "Run the 64-bit gradient suite");
  gc->add_option("--seed", seed, "Random seed")->capture_default_str();

  auto* tr = app.add_subcommand("train", "Train the denoiser; CSV log on stdout");
  tr->add_option("--config", config, "Config file (defaults if omitted)");
  tr->add_option("--out", out, "Checkpoint path")->required();

  auto* dn = app.add_subcommand("denoise", "Denoise a PGM with a checkpoint");
  dn->add_option("--model", model, "Checkpoint")->required();
  dn->add_option("--in", in, "Noisy PGM")->required();
  dn->add_option("--out", out, "Output PGM")->required();
  dn->add_option("--k", k, "Neighbors per node")->capture_default_str();
  dn->add_option("--backend", backend, "gather, mask or streaming")->capture_default_str();
  dn->add_option("--block-size", block_size, "Streaming key block")->capture_default_str();

  auto* fl = app.add_subcommand("flops", "Print the cost models for every backend");
  fl->add_option("--hw", hw, "Nodes per window")->capture_default_str();
  fl->add_option("--k", k, "Neighbors per node")->capture_default_str();
  fl->add_option("--d", d, "Head dimension")->capture_default_str();
  fl->add_option("--heads", heads, "Heads")->capture_default_str();
  fl->add_option("--block-size", block_size, "Streaming key block")->capture_default_str();
  fl->add_option("--bytes", bytes, "Bytes per real")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    int rc = 0;
    if (*bg) rc = build_graph_cmd(in, window, k, out);
    else if (*ab) rc = attn_bench_cmd(grid, repeats, out);
    else if (*gc) rc = gradcheck_cmd(seed);
    else if (*tr) rc = train_cmd(config, out);
    else if (*dn) rc = denoise_cmd(model, in, out, k, backend, block_size);
    else if (*fl) rc = flops_cmd(hw, k, d, heads, block_size, bytes);
    flush_warnings();
    return rc;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    flush_warnings();
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
}
