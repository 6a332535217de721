#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "kgt/attention.hpp"
#include "kgt/bench.hpp"
#include "kgt/gradcheck.hpp"
#include "kgt/instrument.hpp"
#include "kgt/keygraph.hpp"
#include "kgt/model.hpp"
#include "kgt/pgm.hpp"
#include "kgt/training.hpp"

namespace py = pybind11;
using namespace kgt;

namespace {

using FArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using IArray = py::array_t<std::int32_t, py::array::c_style | py::array::forcecast>;

Tensor<float> to_tensor(const FArray& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor<float>(shape, std::vector<float>(a.data(), a.data() + a.size()));
}

FArray to_array(const Tensor<float>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  FArray out(shape);
  std::copy(t.ptr(), t.ptr() + t.numel(), out.mutable_data());
  return out;
}

IArray graph_to_array(const KeyGraph& g) {
  IArray out({g.windows, g.win_nodes, g.k});
  std::copy(g.neighbors.begin(), g.neighbors.end(), out.mutable_data());
  return out;
}

KeyGraph graph_from_array(const IArray& a) {
  if (a.ndim() != 3) throw DimensionError("neighbors must be [windows, nodes, k]");
  KeyGraph g{static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)),
             static_cast<std::size_t>(a.shape(2)), std::vector<std::int32_t>(a.data(), a.data() + a.size())};
  g.validate();
  return g;
}

CostBackend cost_backend(const std::string& name) { return parse_cost_backend(name); }

}  // namespace

PYBIND11_MODULE(_kgt, m) {
  m.doc() = "Key-graph attention and the toy denoiser";
  configure_runtime();

  auto base = py::register_exception<Error>(m, "KgtError", PyExc_RuntimeError);
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<IntegrityError>(m, "IntegrityError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<InputError>(m, "InputError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<LoadError>(m, "LoadError", base.ptr());

  m.def("similarity", [](const FArray& v) { return to_array(similarity(to_tensor(v))); }, py::arg("nodes"),
        "Gram matrix of [hw, c] node features.");
  m.def("select_topk", [](const FArray& a, std::size_t k) {
          auto g = select_topk(to_tensor(a), k);
          return graph_to_array(g).attr("reshape")(g.win_nodes, g.k);
        },
        py::arg("scores"), py::arg("k"), "Top-k off-diagonal columns per row, ascending index order.");
  m.def("build_graph", [](const FArray& v, std::size_t k) { return graph_to_array(build_graph(to_tensor(v), k)); },
        py::arg("nodes"), py::arg("k"), "Neighbor table [B, hw, k] for nodes [B, hw, c].");

  m.def("keygraph_attention",
        [](const FArray& q, const FArray& k, const FArray& v, const IArray& neighbors, const std::string& backend,
           std::size_t block_size) {
          const auto g = graph_from_array(neighbors);
          const auto out = keygraph_attention(Var<float>(to_tensor(q)), Var<float>(to_tensor(k)),
                                              Var<float>(to_tensor(v)), g, Backend::parse(backend, block_size));
          return to_array(out.value());
        },
        py::arg("q"), py::arg("k"), py::arg("v"), py::arg("neighbors"), py::arg("backend") = "gather",
        py::arg("block_size") = 16, "Sparse attention over [B, heads, hw, d] inputs.");
  m.def("dense_attention",
        [](const FArray& q, const FArray& k, const FArray& v, bool exclude_self) {
          return to_array(dense_attention(Var<float>(to_tensor(q)), Var<float>(to_tensor(k)),
                                          Var<float>(to_tensor(v)), exclude_self)
                              .value());
        },
        py::arg("q"), py::arg("k"), py::arg("v"), py::arg("exclude_self") = false);

  m.def("attention_flops",
        [](std::size_t hw, std::size_t k, std::size_t d, std::size_t heads, const std::string& b) {
          return attention_flops(hw, k, d, heads, cost_backend(b));
        },
        py::arg("hw"), py::arg("k"), py::arg("d"), py::arg("heads"), py::arg("backend"));
  m.def("attention_peak_bytes",
        [](std::size_t hw, std::size_t k, std::size_t d, std::size_t heads, const std::string& b,
           std::size_t bytes_per_real, std::size_t block_size) {
          return attention_peak_bytes(hw, k, d, heads, cost_backend(b), bytes_per_real, block_size);
        },
        py::arg("hw"), py::arg("k"), py::arg("d"), py::arg("heads"), py::arg("backend"),
        py::arg("bytes_per_real") = 4, py::arg("block_size") = 16);

  m.def("counters", [] {
    const auto s = instrument::snapshot();
    py::dict d;
    d["attention_flops"] = s.attention_flops;
    d["graph_builds"] = s.graph_builds;
    d["peak_aux_bytes"] = s.peak_aux_bytes;
    return d;
  });
  m.def("reset_counters", &instrument::reset);

  m.def("synth_patch", [](std::uint64_t seed, std::size_t size) { return to_array(synth_patch(seed, size)); },
        py::arg("seed"), py::arg("size"));
  m.def("add_noise", [](const FArray& x, double sigma, std::uint64_t seed) {
          return to_array(add_noise(to_tensor(x), sigma, seed));
        },
        py::arg("image"), py::arg("sigma"), py::arg("seed"));
  m.def("psnr", [](const FArray& pred, const FArray& target) { return psnr(to_tensor(pred), to_tensor(target)); },
        py::arg("pred"), py::arg("target"));

  m.def("read_pgm", [](const std::string& path) {
    const auto img = read_pgm(path);
    py::array_t<std::uint8_t> out({img.height, img.width});
    std::copy(img.samples.begin(), img.samples.end(), out.mutable_data());
    return out;
  });
  m.def("write_pgm", [](const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& a,
                        const std::string& path) {
    if (a.ndim() != 2) throw DimensionError("PGM image must be [height, width]");
    GrayImage img{static_cast<std::size_t>(a.shape(1)), static_cast<std::size_t>(a.shape(0)),
                  std::vector<std::uint8_t>(a.data(), a.data() + a.size())};
    write_pgm(img, path);
  });

  m.def("gradcheck", [](std::uint64_t seed) {
    py::list out;
    for (const auto& r : run_gradcheck_suite(seed))
      out.append(py::dict(py::arg("name") = r.name, py::arg("error") = r.error, py::arg("tolerance") = r.tolerance,
                          py::arg("passed") = r.passed));
    return out;
  },
        py::arg("seed") = 0);

  py::class_<KGTNet>(m, "KGTNet")
      .def_static("init",
                  [](const std::string& config_text, std::uint64_t seed) {
                    return KGTNet::init(KGTNetConfig::from_config(parse_config(config_text)), seed);
                  },
                  py::arg("config") = "", py::arg("seed") = 0, "New network from `key = value` config text.")
      .def_static("load", &load, py::arg("path"))
      .def("save", [](const KGTNet& n, const std::string& path) { save(n, path); }, py::arg("path"))
      .def_property_readonly("parameter_count", &KGTNet::parameter_count)
      .def_property_readonly("config_text", [](const KGTNet& n) { return n.config().to_text(); })
      .def("run",
           [](const KGTNet& n, const FArray& image, std::size_t k, const std::string& backend) {
             Tensor<float> out;
             {
               py::gil_scoped_release release;
               out = n.run(to_tensor(image), k, Backend::parse(backend));
             }
             return to_array(out);
           },
           py::arg("image"), py::arg("k"), py::arg("backend") = "gather", "Denoise [1, H, W] or [N, 1, H, W].")
      .def("train",
           [](KGTNet& n, const std::string& config_text) {
             const auto cfg = TrainConfig::from_config(parse_config(config_text));
             std::ostringstream log;
             const auto r = train(n, cfg, &log);
             return py::make_tuple(r.losses, r.final_eval.psnr_noisy, r.final_eval.psnr_output, log.str());
           },
           py::arg("config") = "", "Train in place; returns (losses, psnr_noisy, psnr_output, csv_log).");
}
