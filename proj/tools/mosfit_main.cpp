// mosfit: command-line driver for synthetic data generation, parameter
// extraction, gradient checking, benchmarking, and graph inspection.
//
// Exit codes: 0 success, 1 usage/config error, 2 runtime/optimizer error.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "mosfit/bench.hpp"
#include "mosfit/data.hpp"
#include "mosfit/gradcalc.hpp"
#include "mosfit/graph.hpp"
#include "mosfit/initparams.hpp"
#include "mosfit/models.hpp"
#include "mosfit/optimize.hpp"
#include "nlohmann/json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

// ---------------------------------------------------------------- helpers

[[noreturn]] void usage_error(const std::string& msg) {
  throw mosfit::Error(msg);
}

const mosfit::ModelInfo& lookup_model(const std::string& name) {
  try {
    return mosfit::model_info(name);
  } catch (const mosfit::Error&) {
    std::string known;
    for (const std::string& n : mosfit::model_names()) {
      known += known.empty() ? n : ", " + n;
    }
    usage_error("unknown model '" + name + "'; known models: " + known);
  }
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) usage_error("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    usage_error("cannot parse '" + path + "': " + e.what());
  }
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) usage_error("cannot write '" + path.string() + "'");
  out << text;
}

// Reference parameter points used when --params is omitted; the same values
// ship as presets/*.json.
std::map<std::string, double> default_params(const std::string& model) {
  if (model == "nth-power-law") {
    return {{"VTH", 2.600},      {"K", 2.691e-3},     {"M", 1.743},
            {"J", 0.119},        {"N", 3.284},        {"LAMBDA", 2.606e-3},
            {"THETA", 3.440e-4}, {"DELTA", 1.269}};
  }
  std::map<std::string, double> sp{
      {"TOX", 5.0e-8},    {"VFBC", -4.90},    {"NA", 1.31e17},
      {"SCALE", 5166360}, {"RD", 2.90e-3},    {"LAMBDA", 8.69e-3},
      {"THETA", 5.91e-3}, {"DELTA", 0.80}};
  std::map<std::string, double> caps{{"ADS", 0.0250},    {"ND", 5.27e15},
                                     {"COXD", 4.36e-10}, {"AGD", 6.31e-5},
                                     {"VFBD", 1.00},     {"VBI", 0.0882}};
  if (model == "sp-current") return sp;
  if (model == "sp-cds" || model == "sp-cgd") return caps;
  if (model == "sp-multi") {
    sp.insert(caps.begin(), caps.end());
    return sp;
  }
  usage_error("no built-in parameter set for model '" + model + "'");
}

// Accepts a flat {name: value} object or a wrapper with a "params" member
// (the shape estimate/extract commands emit).
std::map<std::string, double> params_from_json(const json& j) {
  const json& obj = j.contains("params") ? j.at("params") : j;
  std::map<std::string, double> out;
  for (const auto& [k, v] : obj.items()) out[k] = v.get<double>();
  return out;
}

std::map<std::string, double> resolve_params(const std::string& model,
                                             const std::string& params_path) {
  if (params_path.empty()) return default_params(model);
  return params_from_json(read_json_file(params_path));
}

std::vector<double> values_in_order(const mosfit::ModelInfo& info,
                                    const std::map<std::string, double>& p) {
  std::vector<double> v;
  for (const std::string& n : info.params) {
    auto it = p.find(n);
    if (it == p.end()) {
      usage_error("missing parameter '" + n + "' for model " + info.name);
    }
    v.push_back(it->second);
  }
  return v;
}

std::string default_sweep_name(const mosfit::ModelInfo& info) {
  const std::string& kind = info.dataset_kinds.front();
  if (kind == "cds") return "paper-cds";
  if (kind == "cgd") return "paper-cgd";
  return "paper";
}

ordered_json sweep_to_json(const mosfit::SweepSpec& s) {
  return ordered_json{{"gate", {s.vgs.start, s.vgs.stop, s.vgs.step}},
                      {"vds", {s.vds.start, s.vds.stop, s.vds.step}}};
}

std::size_t worker_threads() {
  const char* env = std::getenv("MOSFIT_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  unsigned long n = std::strtoul(env, &end, 10);
  if (end == nullptr || *end != '\0' || n == 0) {
    usage_error("MOSFIT_THREADS must be a positive integer");
  }
  return static_cast<std::size_t>(n);
}

// ---------------------------------------------------------------- synth

int cmd_synth(const std::string& model, const std::string& params_path,
              const std::string& sweep_text, double noise, std::uint64_t seed,
              const std::string& out_dir) {
  const mosfit::ModelInfo& info = lookup_model(model);
  std::map<std::string, double> params = resolve_params(model, params_path);
  std::vector<double> values = values_in_order(info, params);
  mosfit::SweepSpec sweep = mosfit::parse_sweep(
      sweep_text.empty() ? default_sweep_name(info) : sweep_text);

  fs::create_directories(out_dir);
  try {
    mosfit::Dataset ds = mosfit::synth(model, values, sweep, noise, seed);
    mosfit::save_csv(ds, (fs::path(out_dir) / "dataset.csv").string());

    mosfit::SynthManifest m;
    m.model = model;
    for (std::size_t i = 0; i < info.params.size(); ++i) {
      m.params.emplace_back(info.params[i], values[i]);
    }
    m.sweep = sweep;
    m.noise_rel = noise;
    m.seed = seed;
    mosfit::save_manifest(m, (fs::path(out_dir) / "manifest.json").string());
    std::printf("wrote %zu points to %s/dataset.csv\n", ds.points.size(),
                out_dir.c_str());
    return 0;
  } catch (const mosfit::Error& e) {
    std::fprintf(stderr, "synth failed: %s\n", e.what());
    return 2;
  }
}

// ---------------------------------------------------------------- extract

mosfit::ParamSet resolve_init(const json& cfg, const mosfit::ModelInfo& info,
                              const std::map<std::string, mosfit::Dataset>& data,
                              const fs::path& out_dir) {
  if (!cfg.contains("init")) usage_error("config needs an \"init\" object");
  const json& init_cfg = cfg.at("init");
  std::string mode = init_cfg.value("mode", "file");

  mosfit::ParamSet init;
  if (mode == "file") {
    if (!init_cfg.contains("path")) usage_error("init.mode=file needs init.path");
    auto p = params_from_json(read_json_file(init_cfg.at("path")));
    for (const std::string& n : info.params) {
      auto it = p.find(n);
      if (it == p.end()) usage_error("init file misses parameter '" + n + "'");
      init.values[n] = it->second;
    }
  } else if (mode == "auto") {
    for (const char* kind : {"iv", "cgs", "cgd", "cds"}) {
      if (data.count(kind) == 0) {
        usage_error(std::string("init.mode=auto needs a '") + kind +
                    "' dataset");
      }
    }
    double vbi = init_cfg.value("vbi", 2.5);
    mosfit::InitEstimate est =
        mosfit::estimate_all(data.at("iv"), data.at("cgs"), data.at("cgd"),
                             data.at("cds"), mosfit::PhysicalConstants{}, vbi);
    write_text_file(out_dir / "init_estimate.json", est.to_json());
    for (const std::string& n : info.params) {
      auto it = est.params.find(n);
      if (it == est.params.end()) {
        usage_error("auto initialization produced no value for '" + n + "'");
      }
      init.values[n] = it->second;
    }
  } else if (mode == "random") {
    std::uint64_t seed = init_cfg.value("seed", std::uint64_t{0});
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < info.params.size(); ++i) {
      const std::string& n = info.params[i];
      double lo = info.bounds[i].lo;
      double hi = info.bounds[i].hi;
      if (init_cfg.contains("bounds") && init_cfg.at("bounds").contains(n)) {
        lo = init_cfg.at("bounds").at(n).at(0).get<double>();
        hi = init_cfg.at("bounds").at(n).at(1).get<double>();
      }
      if (!(lo < hi)) usage_error("empty random-init range for '" + n + "'");
      // Raw 64-bit draw mapped to [0,1); distribution classes are not
      // bit-identical across standard libraries, manifests must be.
      double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
      init.values[n] = lo + (hi - lo) * u;
    }
  } else {
    usage_error("init.mode must be file, auto, or random");
  }

  if (cfg.contains("eta")) {
    for (const auto& [k, v] : cfg.at("eta").items()) {
      init.eta[k] = v.get<double>();
    }
  }
  if (cfg.contains("bounds")) {
    for (const auto& [k, v] : cfg.at("bounds").items()) {
      init.bounds[k] = {v.at(0).get<double>(), v.at(1).get<double>()};
    }
  }
  return init;
}

std::string curves_csv(const mosfit::Graph& g, const mosfit::CostSpec& spec,
                       std::span<const double> values) {
  std::string out = "kind,vgs,vds,measured,simulated\n";
  mosfit::Tape tape;
  char buf[192];
  for (const mosfit::Objective& obj : spec.objectives) {
    const mosfit::Dataset& ds = *obj.dataset;
    for (const mosfit::DataPoint& p : ds.points) {
      std::vector<double> in =
          mosfit::bind_inputs(g.input_names(), ds.kind, p);
      mosfit::forward(g, values, in, tape);
      std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g,%.17g,%.17g\n",
                    mosfit::kind_name(ds.kind).c_str(), p.vgs, p.vds, p.value,
                    tape.outputs.at(obj.output));
      out += buf;
    }
  }
  return out;
}

int run_extract_config(json cfg, const std::string& out_override) {
  if (!cfg.contains("model")) usage_error("config needs \"model\"");
  const mosfit::ModelInfo& info = lookup_model(cfg.at("model"));
  mosfit::Graph g = info.build(mosfit::PhysicalConstants{});

  if (!cfg.contains("datasets") || cfg.at("datasets").empty()) {
    usage_error("config needs a non-empty \"datasets\" map");
  }
  std::map<std::string, mosfit::Dataset> data;
  for (const auto& [kind, path] : cfg.at("datasets").items()) {
    mosfit::Dataset ds = mosfit::load_csv(path.get<std::string>());
    if (mosfit::kind_name(ds.kind) != kind) {
      usage_error("dataset '" + path.get<std::string>() + "' holds " +
                  mosfit::kind_name(ds.kind) + " data, config says " + kind);
    }
    data.emplace(kind, std::move(ds));
  }

  mosfit::CostSpec spec;
  std::string norm = cfg.value("normalization", "none");
  if (norm == "per-point") {
    spec.normalization = mosfit::Normalization::PerPoint;
  } else if (norm != "none") {
    usage_error("normalization must be none or per-point");
  }
  for (const std::string& kind : info.dataset_kinds) {
    auto it = data.find(kind);
    if (it == data.end()) continue;
    mosfit::Objective obj;
    obj.graph = &g;
    obj.dataset = &it->second;
    obj.output = mosfit::output_for_kind(info, it->second.kind);
    if (cfg.contains("weights") && cfg.at("weights").contains(kind)) {
      obj.weight = cfg.at("weights").at(kind).get<double>();
    }
    spec.objectives.push_back(obj);
  }
  if (spec.objectives.empty()) {
    usage_error("none of the datasets matches a characteristic of model " +
                info.name);
  }

  std::string out_dir = !out_override.empty()
                            ? out_override
                            : cfg.value("output_dir", std::string("."));
  fs::create_directories(out_dir);

  mosfit::ParamSet init = resolve_init(cfg, info, data, out_dir);

  mosfit::StopRule stop;
  if (cfg.contains("stop")) {
    stop.n_max = cfg.at("stop").value("n_max", std::size_t{1000});
    stop.e_target = cfg.at("stop").value("e_target", 0.0);
  }
  mosfit::OptimizerKind kind = mosfit::parse_optimizer_kind(
      cfg.value("optimizer", std::string("gd-adagrad")));
  mosfit::OptimizeOptions opts;
  opts.engine = mosfit::parse_engine(cfg.value("engine", std::string("ad")));
  if (cfg.contains("nd_deltas")) {
    for (const auto& [k, v] : cfg.at("nd_deltas").items()) {
      opts.nd_deltas[k] = v.get<double>();
    }
  }

  // Everything needed to reproduce the run, defaults resolved.
  ordered_json manifest;
  manifest["command"] = "extract";
  manifest["model"] = info.name;
  manifest["optimizer"] = mosfit::optimizer_kind_name(kind);
  manifest["engine"] = mosfit::engine_name(opts.engine);
  manifest["stop"] = {{"n_max", stop.n_max}, {"e_target", stop.e_target}};
  manifest["normalization"] = norm;
  manifest["datasets"] = cfg.at("datasets");
  manifest["init"] = cfg.at("init");
  manifest["initial_values"] = init.values;
  manifest["output_dir"] = out_dir;
  write_text_file(fs::path(out_dir) / "manifest.json", manifest.dump(2));

  mosfit::FitReport rep =
      mosfit::run_extraction(kind, spec, info.params, init, stop, opts);

  write_text_file(fs::path(out_dir) / "report.json", rep.to_json());
  write_text_file(fs::path(out_dir) / "convergence.csv", rep.to_csv());
  ordered_json fitted;
  for (const std::string& n : info.params) fitted[n] = rep.final_params.at(n);
  write_text_file(fs::path(out_dir) / "params.json", fitted.dump(2));
  std::vector<double> final_values = values_in_order(
      info, {rep.final_params.begin(), rep.final_params.end()});
  write_text_file(fs::path(out_dir) / "curves.csv",
                  curves_csv(g, spec, final_values));

  if (rep.terminated_by == mosfit::TerminatedBy::Error) {
    std::fprintf(stderr, "extraction error after %zu iterations: %s\n",
                 rep.iterations.size(), rep.error_message.c_str());
    return 2;
  }
  std::printf("%s: %zu iterations, final rmse %.6g -> %s\n",
              mosfit::terminated_by_name(rep.terminated_by),
              rep.iterations.size(),
              rep.iterations.empty() ? 0.0 : rep.iterations.back().cost,
              out_dir.c_str());
  return 0;
}

int cmd_extract(const std::string& config_path, const std::string& batch_dir,
                const std::string& out_override) {
  if (config_path.empty() == batch_dir.empty()) {
    usage_error("extract needs exactly one of --config or --batch");
  }
  if (!config_path.empty()) {
    return run_extract_config(read_json_file(config_path), out_override);
  }

  std::vector<fs::path> configs;
  for (const auto& entry : fs::directory_iterator(batch_dir)) {
    if (entry.path().extension() == ".json") configs.push_back(entry.path());
  }
  std::sort(configs.begin(), configs.end());
  if (configs.empty()) usage_error("no .json configs in '" + batch_dir + "'");

  std::size_t workers = std::min(worker_threads(), configs.size());
  std::atomic<std::size_t> next{0};
  std::atomic<int> worst{0};
  std::mutex log_mutex;
  auto worker = [&]() {
    for (std::size_t i = next.fetch_add(1); i < configs.size();
         i = next.fetch_add(1)) {
      const fs::path& path = configs[i];
      int rc;
      std::string note;
      try {
        json cfg = read_json_file(path.string());
        // Each batch entry lands beside its config unless it names a dir.
        std::string out = cfg.value(
            "output_dir", (path.parent_path() / path.stem()).string());
        rc = run_extract_config(std::move(cfg), out);
      } catch (const mosfit::Error& e) {
        rc = 1;
        note = e.what();
      }
      std::lock_guard<std::mutex> lock(log_mutex);
      std::printf("[batch] %s -> exit %d%s%s\n", path.filename().c_str(), rc,
                  note.empty() ? "" : ": ", note.c_str());
      int cur = worst.load();
      while (rc > cur && !worst.compare_exchange_weak(cur, rc)) {
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t i = 0; i < workers; ++i) pool.emplace_back(worker);
  for (std::thread& t : pool) t.join();
  return worst.load();
}

// ---------------------------------------------------------------- gradcheck

int cmd_gradcheck(const std::string& model, const std::string& params_path,
                  const std::string& data_path, const std::string& sweep_text,
                  double noise, std::uint64_t seed, double tol) {
  const mosfit::ModelInfo& info = lookup_model(model);
  std::map<std::string, double> params = resolve_params(model, params_path);
  std::vector<double> values = values_in_order(info, params);
  mosfit::Graph g = info.build(mosfit::PhysicalConstants{});

  mosfit::Dataset ds;
  if (!data_path.empty()) {
    ds = mosfit::load_csv(data_path);
  } else {
    mosfit::SweepSpec sweep = mosfit::parse_sweep(
        sweep_text.empty() ? default_sweep_name(info) : sweep_text);
    ds = mosfit::synth(model, values, sweep, noise, seed);
  }

  try {
    std::size_t output = mosfit::output_for_kind(info, ds.kind);
    mosfit::GradResult ad =
        mosfit::ad_gradient(g, values, ds, mosfit::Normalization::None, output);

    mosfit::CostSpec spec;
    mosfit::Objective obj;
    obj.graph = &g;
    obj.dataset = &ds;
    obj.output = output;
    spec.objectives.push_back(obj);

    bool all_ok = true;
    std::printf("%-8s %22s %22s %12s\n", "param", "ad", "central-fd",
                "rel-error");
    for (std::size_t i = 0; i < info.params.size(); ++i) {
      double delta = 1e-6 * (values[i] != 0.0 ? std::fabs(values[i]) : 1.0);
      std::vector<double> hi = values, lo = values;
      hi[i] += delta;
      lo[i] -= delta;
      double chi =
          mosfit::multi_objective_cost_value(spec, info.params, hi).cost;
      double clo =
          mosfit::multi_objective_cost_value(spec, info.params, lo).cost;
      double fd = (chi - clo) / (2.0 * delta);
      double scale = std::max(std::fabs(ad.grad[i]), std::fabs(fd));
      double rel = scale < 1e-12 ? 0.0 : std::fabs(ad.grad[i] - fd) / scale;
      bool ok = rel <= tol;
      all_ok = all_ok && ok;
      std::printf("%-8s %22.15g %22.15g %12.3g %s\n", info.params[i].c_str(),
                  ad.grad[i], fd, rel, ok ? "pass" : "FAIL");
    }
    return all_ok ? 0 : 2;
  } catch (const mosfit::DomainError& e) {
    std::fprintf(stderr, "domain error at node %d: %s\n",
                 static_cast<int>(e.node()), e.what());
    return 2;
  }
}

// ---------------------------------------------------------------- bench

int cmd_bench(const std::string& model, const std::string& params_path,
              const std::string& sweep_text, double noise, std::size_t reps,
              const std::string& out_dir, bool plot_data,
              const std::string& optimizer, std::size_t n_max,
              double e_target) {
  const mosfit::ModelInfo& info = lookup_model(model);
  if (reps < 5) usage_error("bench needs at least 5 repetitions");
  std::map<std::string, double> params = resolve_params(model, params_path);
  std::vector<double> values = values_in_order(info, params);
  mosfit::SweepSpec sweep = mosfit::parse_sweep(
      sweep_text.empty() ? default_sweep_name(info) : sweep_text);

  fs::create_directories(out_dir);
  ordered_json manifest;
  manifest["command"] = "bench";
  manifest["model"] = model;
  manifest["params"] = params;
  manifest["sweep"] = sweep_to_json(sweep);
  manifest["noise"] = noise;
  manifest["repetitions"] = reps;
  manifest["plot_data"] = plot_data;

  try {
    // Noise keeps residuals nonzero so the backward pass does real work:
    // at an exact-fit point all adjoint seeds vanish and AD looks faster
    // than it is on an actual extraction workload.
    mosfit::Dataset ds = mosfit::synth(model, values, sweep, noise, 17);
    auto [ad, nd] = mosfit::bench_gradient(model, params, ds, reps);

    std::string csv = mosfit::BenchResult::csv_header() + "\n" +
                      ad.csv_row() + "\n" + nd.csv_row() + "\n";
    write_text_file(fs::path(out_dir) / "bench.csv", csv);
    ordered_json rows = ordered_json::array();
    rows.push_back(ordered_json::parse(ad.to_json()));
    rows.push_back(ordered_json::parse(nd.to_json()));
    write_text_file(fs::path(out_dir) / "bench.json", rows.dump(2));
    std::printf(
        "%s: n=%zu m=%zu  ad %.3g s/grad  nd %.3g s/grad  speedup %.2fx\n",
        model.c_str(), ad.n_params, ad.m_points, ad.wall_seconds_per_gradient,
        nd.wall_seconds_per_gradient, ad.speedup_vs_nd);

    if (plot_data) {
      mosfit::ParamSet init;
      for (const auto& [name, value] : params) {
        init.values[name] = value * 1.1;  // a reproducible off-truth start
      }
      mosfit::StopRule stop;
      stop.n_max = n_max;
      stop.e_target = e_target;
      mosfit::OptimizerKind kind = mosfit::parse_optimizer_kind(optimizer);
      manifest["optimizer"] = optimizer;
      manifest["stop"] = {{"n_max", n_max}, {"e_target", e_target}};
      mosfit::ExtractionBench eb =
          mosfit::bench_extraction(model, kind, init, ds, stop);
      write_text_file(fs::path(out_dir) / "ad_curve.csv", eb.ad.to_csv());
      write_text_file(fs::path(out_dir) / "nd_curve.csv", eb.nd.to_csv());
      ordered_json both;
      both["ad"] = ordered_json::parse(eb.ad.to_json());
      both["nd"] = ordered_json::parse(eb.nd.to_json());
      write_text_file(fs::path(out_dir) / "extraction.json", both.dump(2));
    }
    write_text_file(fs::path(out_dir) / "manifest.json", manifest.dump(2));
    return 0;
  } catch (const mosfit::Error& e) {
    std::fprintf(stderr, "bench failed: %s\n", e.what());
    return 2;
  }
}

// ---------------------------------------------------------------- graphinfo

int cmd_graphinfo(const std::string& model) {
  const mosfit::ModelInfo& info = lookup_model(model);
  auto t0 = std::chrono::steady_clock::now();
  mosfit::Graph g = info.build(mosfit::PhysicalConstants{});
  double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  mosfit::GraphStats stats = g.stats();

  ordered_json j;
  j["model"] = info.name;
  j["vertices"] = stats.vertices;
  j["edges"] = stats.edges;
  j["params"] = info.params;
  j["inputs"] = info.inputs;
  j["outputs"] = g.outputs().size();
  j["build_seconds"] = secs;
  std::printf("%s\n", j.dump(2).c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mosfit: MOSFET compact-model parameter extraction with "
               "reverse-mode automatic differentiation"};
  app.require_subcommand(1);

  std::string model, params_path, sweep_text, out_dir = ".";
  double noise = 0.0;
  std::uint64_t seed = 1;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth->add_option("--model", model, "model name")->required();
  synth->add_option("--params", params_path, "parameter JSON file");
  synth->add_option("--sweep", sweep_text,
                    "named sweep (paper, paper-cds, paper-cgd) or "
                    "lo:hi:step,lo:hi:step");
  synth->add_option("--noise", noise, "relative Gaussian noise");
  synth->add_option("--seed", seed, "noise seed");
  synth->add_option("--out", out_dir, "output directory");

  std::string config_path, batch_dir, extract_out;
  auto* extract = app.add_subcommand("extract", "Fit model parameters");
  extract->add_option("--config", config_path, "run-config JSON");
  extract->add_option("--batch", batch_dir, "directory of run configs");
  extract->add_option("--out", extract_out, "output directory override");

  std::string data_path;
  double tol = 1e-5;
  double gc_noise = 0.01;
  std::uint64_t gc_seed = 7;
  auto* gradcheck = app.add_subcommand(
      "gradcheck", "Compare AD gradients against central finite differences");
  gradcheck->add_option("--model", model, "model name")->required();
  gradcheck->add_option("--params", params_path, "parameter JSON file");
  gradcheck->add_option("--data", data_path, "dataset CSV (else synthesized)");
  gradcheck->add_option("--sweep", sweep_text, "sweep for synthesized data");
  gradcheck->add_option("--noise", gc_noise, "noise for synthesized data");
  gradcheck->add_option("--seed", gc_seed, "seed for synthesized data");
  gradcheck->add_option("--tol", tol, "relative-error threshold");

  std::size_t reps = 7, n_max = 50;
  double e_target = 0.0;
  bool plot_data = false;
  std::string optimizer = "gd-adagrad";
  double bench_noise = 0.01;
  auto* bench = app.add_subcommand("bench", "Time AD vs ND gradients");
  bench->add_option("--model", model, "model name");
  bench->add_option("--params", params_path, "parameter JSON file");
  bench->add_option("--sweep", sweep_text, "bias sweep");
  bench->add_option("--noise", bench_noise,
                    "relative noise on the synthesized bench data");
  bench->add_option("--reps", reps, "timing repetitions (>= 5)");
  bench->add_option("--out", out_dir, "output directory");
  bench->add_flag("--plot-data", plot_data,
                  "also run paired extractions and write RMSE-vs-time curves");
  bench->add_option("--optimizer", optimizer, "optimizer for --plot-data");
  bench->add_option("--n-max", n_max, "iteration budget for --plot-data");
  bench->add_option("--e-target", e_target, "target RMSE for --plot-data");

  auto* graphinfo =
      app.add_subcommand("graphinfo", "Print graph statistics as JSON");
  graphinfo->add_option("--model", model, "model name")->required();

  model = "nth-power-law";  // bench default; required() overrides elsewhere

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed()) {
      return cmd_synth(model, params_path, sweep_text, noise, seed, out_dir);
    }
    if (extract->parsed()) {
      return cmd_extract(config_path, batch_dir, extract_out);
    }
    if (gradcheck->parsed()) {
      return cmd_gradcheck(model, params_path, data_path, sweep_text, gc_noise,
                           gc_seed, tol);
    }
    if (bench->parsed()) {
      return cmd_bench(model, params_path, sweep_text, bench_noise, reps,
                       out_dir, plot_data, optimizer, n_max, e_target);
    }
    if (graphinfo->parsed()) {
      return cmd_graphinfo(model);
    }
  } catch (const mosfit::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
