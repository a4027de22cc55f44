#include <cstdlib>
#include <map>
#include <string>
#include <vector>

#include "doctest.h"
#include "mosfit/bench.hpp"
#include "mosfit/data.hpp"
#include "mosfit/gradcalc.hpp"
#include "mosfit/models.hpp"
#include "nlohmann/json.hpp"

using namespace mosfit;

namespace {

// Table V AD-extracted values: VTH K M J N LAMBDA THETA DELTA.
const std::map<std::string, double> kNpl{
    {"VTH", 2.600},      {"K", 2.691e-3},     {"M", 1.743},
    {"J", 0.119},        {"N", 3.284},        {"LAMBDA", 2.606e-3},
    {"THETA", 3.440e-4}, {"DELTA", 1.269}};

std::vector<double> npl_values() {
  std::vector<double> v;
  for (const std::string& n : model_info("nth-power-law").params) {
    v.push_back(kNpl.at(n));
  }
  return v;
}

// Noisy so residuals (and thus backward-pass adjoints) are nonzero: at an
// exact zero-residual point every adjoint seed is zero and the backward
// pass short-circuits, which would flatter the AD timing.
Dataset npl_dataset(const SweepSpec& sweep) {
  return synth("nth-power-law", npl_values(), sweep, 0.01, 11);
}

}  // namespace

TEST_CASE("gradient benchmark fills both rows with the run metadata") {
  Dataset ds = npl_dataset(named_sweep("paper"));
  auto [ad, nd] = bench_gradient("nth-power-law", kNpl, ds, 5);

  CHECK(ad.engine == Engine::AD);
  CHECK(nd.engine == Engine::ND);
  for (const BenchResult* r : {&ad, &nd}) {
    CHECK(r->model == "nth-power-law");
    CHECK(r->n_params == 8);
    CHECK(r->m_points == 125);
    CHECK(r->repetitions == 5);
    CHECK(r->wall_seconds_per_gradient > 0.0);
  }
  CHECK(ad.speedup_vs_nd ==
        nd.wall_seconds_per_gradient / ad.wall_seconds_per_gradient);
  // The count law predicts (8+1)/2 = 4.5; wall clock keeps most of it.
  CHECK(ad.speedup_vs_nd > 1.5);
  CHECK(ad.speedup_vs_nd < 6.0);
}

TEST_CASE("evaluation-count ratio is (n+1)/2 even for a single point") {
  SweepSpec one{{8.0, 8.0, 1.0}, {10.0, 10.0, 1.0}};
  Dataset ds = npl_dataset(one);
  REQUIRE(ds.points.size() == 1);

  const ModelInfo& info = model_info("nth-power-law");
  Graph g = info.build(PhysicalConstants{});
  std::vector<double> v = npl_values();
  GradResult ad = ad_gradient(g, v, ds);
  GradResult nd = nd_gradient(g, v, default_deltas(info.params, v), ds);
  CHECK(ad.graph_traversal_count == 2);
  CHECK(nd.model_eval_count == 9);
  CHECK(static_cast<double>(nd.model_eval_count) / ad.graph_traversal_count ==
        4.5);  // the theoretical (8+1)/2 ceiling

  auto [bad, bnd] = bench_gradient("nth-power-law", kNpl, ds, 5);
  CHECK(bad.m_points == 1);
  CHECK(bnd.m_points == 1);
}

TEST_CASE("benchmark rejects invalid configurations") {
  Dataset ds = npl_dataset(named_sweep("paper"));
  CHECK_THROWS_AS(bench_gradient("nth-power-law", kNpl, ds, 4), Error);
  CHECK_THROWS_AS(bench_gradient("nth-power-law", kNpl, Dataset{}, 5), Error);

  std::map<std::string, double> missing = kNpl;
  missing.erase("VTH");
  CHECK_THROWS_AS(bench_gradient("nth-power-law", missing, ds, 5), Error);

  setenv("MOSFIT_THREADS", "4", 1);
  CHECK_THROWS_AS(bench_gradient("nth-power-law", kNpl, ds, 5), Error);
  setenv("MOSFIT_THREADS", "1", 1);
  CHECK_NOTHROW(bench_gradient("nth-power-law", kNpl, ds, 5));
  unsetenv("MOSFIT_THREADS");
}

TEST_CASE("paired extraction runs share init and stop") {
  Dataset ds = npl_dataset(named_sweep("paper"));
  ParamSet init;
  for (const auto& [name, value] : kNpl) {
    init.values[name] = value * 1.1;
  }

  SUBCASE("aligned iteration traces and matching final error") {
    StopRule stop;
    stop.n_max = 40;
    stop.e_target = 0.0;
    ExtractionBench b =
        bench_extraction("nth-power-law", OptimizerKind::GdAdaGrad, init, ds,
                         stop);
    CHECK(b.ad.terminated_by == TerminatedBy::MaxIter);
    CHECK(b.nd.terminated_by == TerminatedBy::MaxIter);
    REQUIRE(b.ad.iterations.size() == 40);
    REQUIRE(b.nd.iterations.size() == 40);
    double ead = b.ad.iterations.back().cost;
    double end = b.nd.iterations.back().cost;
    CHECK(std::fabs(ead - end) / end < 0.01);
    // n = 8 >= 3, so the count law makes AD strictly faster end to end.
    CHECK(b.ad.iterations.back().elapsed_seconds <
          b.nd.iterations.back().elapsed_seconds);
  }

  SUBCASE("target reached flags both reports") {
    StopRule stop;
    stop.n_max = 40;
    stop.e_target = 1e6;
    ExtractionBench b =
        bench_extraction("nth-power-law", OptimizerKind::GdAdaGrad, init, ds,
                         stop);
    CHECK(b.ad.terminated_by == TerminatedBy::TargetReached);
    CHECK(b.nd.terminated_by == TerminatedBy::TargetReached);
    CHECK(b.ad.iterations.size() == 1);
    CHECK(b.nd.iterations.size() == 1);
  }
}

TEST_CASE("bench result serialization") {
  BenchResult r;
  r.engine = Engine::AD;
  r.model = "nth-power-law";
  r.n_params = 8;
  r.m_points = 125;
  r.wall_seconds_per_gradient = 0.25;
  r.repetitions = 7;
  r.speedup_vs_nd = 4.1;

  auto j = nlohmann::json::parse(r.to_json());
  CHECK(j.at("engine") == "ad");
  CHECK(j.at("speedup_vs_nd") == 4.1);
  CHECK(j.at("repetitions") == 7);

  CHECK(BenchResult::csv_header() ==
        "engine,model,n_params,m_points,wall_seconds_per_gradient,"
        "repetitions,speedup_vs_nd");
  std::string row = r.csv_row();
  CHECK(row.substr(0, 3) == "ad,");
  CHECK(row.find("nth-power-law") != std::string::npos);

  BenchResult nd = r;
  nd.engine = Engine::ND;
  auto jn = nlohmann::json::parse(nd.to_json());
  CHECK(jn.count("speedup_vs_nd") == 0);  // meaningful on the AD row only
}
