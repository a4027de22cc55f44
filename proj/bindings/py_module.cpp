// Python bindings for the mosfit core: model registry, graph evaluation,
// AD/ND gradients, synthetic data, extraction, and initialization.
//
// Datasets cross the boundary as plain dicts:
//   {"kind": "iv", "points": [(vgs, vds, value), ...]}

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <map>
#include <string>
#include <vector>

#include "mosfit/bench.hpp"
#include "mosfit/data.hpp"
#include "mosfit/gradcalc.hpp"
#include "mosfit/graph.hpp"
#include "mosfit/initparams.hpp"
#include "mosfit/models.hpp"
#include "mosfit/optimize.hpp"

namespace py = pybind11;
using namespace mosfit;

namespace {

Dataset dataset_from_py(const py::dict& d) {
  Dataset ds;
  ds.kind = kind_from_name(d["kind"].cast<std::string>());
  for (const auto& item : d["points"]) {
    auto t = item.cast<std::tuple<double, double, double>>();
    ds.points.push_back({std::get<0>(t), std::get<1>(t), std::get<2>(t)});
  }
  if (d.contains("device")) ds.device = d["device"].cast<std::string>();
  if (d.contains("temperature")) {
    ds.temperature = d["temperature"].cast<double>();
  }
  return ds;
}

py::dict dataset_to_py(const Dataset& ds) {
  py::list points;
  for (const DataPoint& p : ds.points) {
    points.append(py::make_tuple(p.vgs, p.vds, p.value));
  }
  py::dict d;
  d["kind"] = kind_name(ds.kind);
  d["points"] = points;
  d["device"] = ds.device;
  d["temperature"] = ds.temperature;
  return d;
}

SweepSpec sweep_from_py(const py::object& sweep) {
  if (py::isinstance<py::str>(sweep)) {
    return parse_sweep(sweep.cast<std::string>());
  }
  auto t = sweep.cast<
      std::pair<std::tuple<double, double, double>,
                std::tuple<double, double, double>>>();
  return SweepSpec{{std::get<0>(t.first), std::get<1>(t.first),
                    std::get<2>(t.first)},
                   {std::get<0>(t.second), std::get<1>(t.second),
                    std::get<2>(t.second)}};
}

py::dict grad_to_py(const GradResult& r) {
  py::dict d;
  d["cost"] = r.cost;
  d["names"] = r.names;
  d["grad"] = r.grad;
  d["model_eval_count"] = r.model_eval_count;
  d["graph_traversal_count"] = r.graph_traversal_count;
  return d;
}

py::dict report_to_py(const FitReport& rep) {
  py::dict d;
  d["final_params"] = rep.final_params;
  d["terminated_by"] = std::string(terminated_by_name(rep.terminated_by));
  d["error_message"] = rep.error_message;
  py::list iters;
  for (const IterRecord& it : rep.iterations) {
    py::dict rec;
    rec["iter"] = it.iter;
    rec["cost"] = it.cost;
    rec["elapsed_seconds"] = it.elapsed_seconds;
    rec["model_eval_count"] = it.model_eval_count;
    rec["graph_traversal_count"] = it.graph_traversal_count;
    iters.append(rec);
  }
  d["iterations"] = iters;
  return d;
}

Normalization norm_from_string(const std::string& s) {
  if (s == "none") return Normalization::None;
  if (s == "per-point") return Normalization::PerPoint;
  throw Error("normalization must be none or per-point");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "MOSFET compact-model parameter extraction with reverse-mode AD";

  py::register_exception<Error>(m, "MosfitError");

  m.def("model_names", &model_names, "Registered compact-model names");

  m.def(
      "model_info",
      [](const std::string& name) {
        const ModelInfo& info = model_info(name);
        py::dict d;
        d["name"] = info.name;
        d["params"] = info.params;
        d["inputs"] = info.inputs;
        d["dataset_kinds"] = info.dataset_kinds;
        py::list bounds;
        for (const auto& b : info.bounds) {
          bounds.append(py::make_tuple(b.lo, b.hi));
        }
        d["bounds"] = bounds;
        return d;
      },
      py::arg("name"), "Parameter names, inputs, characteristics, and bounds");

  py::class_<Graph>(m, "Graph", "Compiled computational graph of a model")
      .def_property_readonly("param_names", &Graph::param_names)
      .def_property_readonly("input_names", &Graph::input_names)
      .def_property_readonly("n_outputs",
                             [](const Graph& g) { return g.outputs().size(); })
      .def("stats",
           [](const Graph& g) {
             GraphStats s = g.stats();
             return py::make_tuple(s.vertices, s.edges);
           })
      .def("dump", &Graph::dump);

  m.def(
      "build",
      [](const std::string& name) {
        return model_info(name).build(PhysicalConstants{});
      },
      py::arg("model"), "Build the computational graph of a model");

  m.def(
      "eval",
      [](const Graph& g, const std::vector<double>& params,
         const std::vector<double>& inputs) { return eval(g, params, inputs); },
      py::arg("graph"), py::arg("params"), py::arg("inputs"),
      "First model output at one bias point");

  m.def(
      "outputs",
      [](const Graph& g, const std::vector<double>& params,
         const std::vector<double>& inputs) {
        Tape tape;
        forward(g, params, inputs, tape);
        return tape.outputs;
      },
      py::arg("graph"), py::arg("params"), py::arg("inputs"),
      "All model outputs at one bias point");

  m.def(
      "ad_gradient",
      [](const Graph& g, const std::vector<double>& params,
         const py::dict& dataset, const std::string& normalization,
         std::size_t output) {
        Dataset ds = dataset_from_py(dataset);
        return grad_to_py(
            ad_gradient(g, params, ds, norm_from_string(normalization), output));
      },
      py::arg("graph"), py::arg("params"), py::arg("dataset"),
      py::arg("normalization") = "none", py::arg("output") = 0,
      "RMSE and its gradient via one forward plus one backward pass per point");

  m.def(
      "nd_gradient",
      [](const Graph& g, const std::vector<double>& params,
         const py::dict& dataset, const std::string& normalization,
         std::size_t output) {
        Dataset ds = dataset_from_py(dataset);
        auto deltas = default_deltas(g.param_names(), params);
        return grad_to_py(
            nd_gradient(g, params, deltas, ds, norm_from_string(normalization),
                        output));
      },
      py::arg("graph"), py::arg("params"), py::arg("dataset"),
      py::arg("normalization") = "none", py::arg("output") = 0,
      "RMSE and its forward-difference gradient ((1+n) evals per point)");

  m.def(
      "synth",
      [](const std::string& model, const std::vector<double>& params,
         const py::object& sweep, double noise_rel, std::uint64_t seed) {
        return dataset_to_py(
            synth(model, params, sweep_from_py(sweep), noise_rel, seed));
      },
      py::arg("model"), py::arg("params"), py::arg("sweep") = "paper",
      py::arg("noise_rel") = 0.0, py::arg("seed") = 1,
      "Synthesize a dataset from a model at the given parameters");

  m.def("load_csv",
        [](const std::string& path) { return dataset_to_py(load_csv(path)); },
        py::arg("path"));
  m.def(
      "save_csv",
      [](const py::dict& dataset, const std::string& path) {
        save_csv(dataset_from_py(dataset), path);
      },
      py::arg("dataset"), py::arg("path"));

  m.def(
      "extract",
      [](const std::string& model,
         const std::vector<py::dict>& datasets,
         const std::map<std::string, double>& init,
         const std::string& optimizer, const std::string& engine,
         std::size_t n_max, double e_target,
         const std::map<std::string, double>& eta,
         const std::map<std::string, std::pair<double, double>>& bounds,
         const std::string& normalization) {
        const ModelInfo& info = model_info(model);
        Graph g = info.build(PhysicalConstants{});
        std::vector<Dataset> owned;
        owned.reserve(datasets.size());
        for (const py::dict& d : datasets) owned.push_back(dataset_from_py(d));

        CostSpec spec;
        spec.normalization = norm_from_string(normalization);
        for (const Dataset& ds : owned) {
          Objective obj;
          obj.graph = &g;
          obj.dataset = &ds;
          obj.output = output_for_kind(info, ds.kind);
          spec.objectives.push_back(obj);
        }

        ParamSet start;
        start.values = init;
        for (const auto& [k, v] : eta) start.eta[k] = v;
        for (const auto& [k, b] : bounds) start.bounds[k] = {b.first, b.second};

        StopRule stop;
        stop.n_max = n_max;
        stop.e_target = e_target;
        OptimizeOptions opts;
        opts.engine = parse_engine(engine);
        FitReport rep = run_extraction(parse_optimizer_kind(optimizer), spec,
                                       info.params, start, stop, opts);
        return report_to_py(rep);
      },
      py::arg("model"), py::arg("datasets"), py::arg("init"),
      py::arg("optimizer") = "gd-adagrad", py::arg("engine") = "ad",
      py::arg("n_max") = 1000, py::arg("e_target") = 0.0,
      py::arg("eta") = std::map<std::string, double>{},
      py::arg("bounds") = std::map<std::string, std::pair<double, double>>{},
      py::arg("normalization") = "none",
      "Fit model parameters to one or more datasets");

  m.def(
      "estimate_all",
      [](const py::dict& iv, const py::dict& cgs, const py::dict& cgd,
         const py::dict& cds, double vbi) {
        InitEstimate est =
            estimate_all(dataset_from_py(iv), dataset_from_py(cgs),
                         dataset_from_py(cgd), dataset_from_py(cds),
                         PhysicalConstants{}, vbi);
        py::dict d;
        d["params"] = est.params;
        py::dict prov;
        for (const auto& [k, p] : est.provenance) {
          prov[py::str(k)] = std::string(provenance_name(p));
        }
        d["provenance"] = prov;
        return d;
      },
      py::arg("iv"), py::arg("cgs"), py::arg("cgd"), py::arg("cds"),
      py::arg("vbi") = 2.5,
      "Measurement-driven initial parameter estimates for the SP models");

  m.def(
      "bench_gradient",
      [](const std::string& model,
         const std::map<std::string, double>& params, const py::dict& dataset,
         std::size_t repetitions) {
        Dataset ds = dataset_from_py(dataset);
        auto [ad, nd] = bench_gradient(model, params, ds, repetitions);
        auto row = [](const BenchResult& r) {
          py::dict d;
          d["engine"] = std::string(engine_name(r.engine));
          d["model"] = r.model;
          d["n_params"] = r.n_params;
          d["m_points"] = r.m_points;
          d["wall_seconds_per_gradient"] = r.wall_seconds_per_gradient;
          d["repetitions"] = r.repetitions;
          d["speedup_vs_nd"] = r.speedup_vs_nd;
          return d;
        };
        return py::make_tuple(row(ad), row(nd));
      },
      py::arg("model"), py::arg("params"), py::arg("dataset"),
      py::arg("repetitions") = 5,
      "Median wall-clock seconds per gradient for the AD and ND engines");
}
