#include "mosfit/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <vector>

#include "mosfit/gradcalc.hpp"
#include "mosfit/models.hpp"
#include "nlohmann/json.hpp"

namespace mosfit {

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Timed sections are meaningful only without competing workers.
void require_single_thread() {
  const char* env = std::getenv("MOSFIT_THREADS");
  if (env != nullptr && std::string(env) != "1") {
    throw Error(
        "benchmarking requires a single worker thread; unset MOSFIT_THREADS "
        "or set it to 1");
  }
}

std::vector<double> values_in_model_order(
    const ModelInfo& info, const std::map<std::string, double>& params) {
  std::vector<double> v;
  v.reserve(info.params.size());
  for (const std::string& n : info.params) {
    auto it = params.find(n);
    if (it == params.end()) {
      throw Error("missing parameter '" + n + "' for model " + info.name);
    }
    v.push_back(it->second);
  }
  return v;
}

}  // namespace

std::string BenchResult::to_json() const {
  nlohmann::ordered_json j;
  j["engine"] = engine_name(engine);
  j["model"] = model;
  j["n_params"] = n_params;
  j["m_points"] = m_points;
  j["wall_seconds_per_gradient"] = wall_seconds_per_gradient;
  j["repetitions"] = repetitions;
  if (engine == Engine::AD) j["speedup_vs_nd"] = speedup_vs_nd;
  return j.dump(2);
}

std::string BenchResult::csv_header() {
  return "engine,model,n_params,m_points,wall_seconds_per_gradient,"
         "repetitions,speedup_vs_nd";
}

std::string BenchResult::csv_row() const {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s,%s,%zu,%zu,%.17g,%zu,%.17g",
                engine_name(engine), model.c_str(), n_params, m_points,
                wall_seconds_per_gradient, repetitions, speedup_vs_nd);
  return buf;
}

std::pair<BenchResult, BenchResult> bench_gradient(
    const std::string& model_name, const std::map<std::string, double>& params,
    const Dataset& ds, std::size_t repetitions) {
  if (repetitions < 5) {
    throw Error("benchmark repetitions must be at least 5");
  }
  require_single_thread();
  if (ds.points.empty()) throw Error("benchmark dataset is empty");

  const ModelInfo& info = model_info(model_name);
  Graph g = info.build(PhysicalConstants{});
  std::vector<double> values = values_in_model_order(info, params);
  std::size_t output = output_for_kind(info, ds.kind);
  std::map<std::string, double> deltas = default_deltas(info.params, values);

  const std::size_t n = info.params.size();
  const std::size_t m = ds.points.size();

  auto run_ad = [&]() {
    GradResult r = ad_gradient(g, values, ds, Normalization::None, output);
    if (r.graph_traversal_count != 2 * m) {
      throw Error("AD traversal count deviates from 2m");
    }
    return r;
  };
  auto run_nd = [&]() {
    GradResult r =
        nd_gradient(g, values, deltas, ds, Normalization::None, output);
    if (r.model_eval_count != (1 + n) * m) {
      throw Error("ND evaluation count deviates from (1+n)m");
    }
    return r;
  };

  run_ad();  // warm-up, discarded
  run_nd();

  using clock = std::chrono::steady_clock;
  std::vector<double> t_ad, t_nd;
  for (std::size_t rep = 0; rep < repetitions; ++rep) {
    auto a0 = clock::now();
    run_ad();
    t_ad.push_back(std::chrono::duration<double>(clock::now() - a0).count());
    auto b0 = clock::now();
    run_nd();
    t_nd.push_back(std::chrono::duration<double>(clock::now() - b0).count());
  }

  BenchResult ad;
  ad.engine = Engine::AD;
  ad.model = model_name;
  ad.n_params = n;
  ad.m_points = m;
  ad.wall_seconds_per_gradient = median(t_ad);
  ad.repetitions = repetitions;

  BenchResult nd = ad;
  nd.engine = Engine::ND;
  nd.wall_seconds_per_gradient = median(t_nd);

  ad.speedup_vs_nd =
      nd.wall_seconds_per_gradient / ad.wall_seconds_per_gradient;
  return {ad, nd};
}

ExtractionBench bench_extraction(const std::string& model_name,
                                 OptimizerKind optimizer, const ParamSet& init,
                                 const Dataset& ds, const StopRule& stop) {
  require_single_thread();
  const ModelInfo& info = model_info(model_name);
  Graph g = info.build(PhysicalConstants{});

  CostSpec spec;
  Objective obj;
  obj.graph = &g;
  obj.dataset = &ds;
  obj.output = output_for_kind(info, ds.kind);
  spec.objectives.push_back(obj);

  OptimizeOptions opts;
  ExtractionBench out;
  opts.engine = Engine::AD;
  out.ad = run_extraction(optimizer, spec, info.params, init, stop, opts);
  opts.engine = Engine::ND;
  out.nd = run_extraction(optimizer, spec, info.params, init, stop, opts);
  return out;
}

}  // namespace mosfit
