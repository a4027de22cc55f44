#include "mosfit/gradcalc.hpp"

#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "mosfit/models.hpp"
#include "support/scalar_models.hpp"

using namespace mosfit;

namespace {

const std::vector<double> kNpl{2.600,    2.691e-3, 1.743,    0.119,
                               3.284,    2.606e-3, 3.440e-4, 1.269};
const std::vector<double> kSp{5.0e-8, -4.90,   1.31e17, 5166360.0,
                              2.90e-3, 8.69e-3, 5.91e-3, 0.80};

// out = a * Vds + b
Graph linear_graph() {
  GraphBuilder b;
  NodeId a = b.param("a");
  NodeId c = b.param("b");
  NodeId vds = b.input("Vds");
  return b.build({b.add(b.mul(a, vds), c)});
}

// out = scale * (a * Vds + b), same parameter names
Graph scaled_linear_graph(double scale) {
  GraphBuilder b;
  NodeId a = b.param("a");
  NodeId c = b.param("b");
  NodeId vds = b.input("Vds");
  return b.build({b.mul(b.constant(scale), b.add(b.mul(a, vds), c))});
}

Dataset iv_points(std::vector<DataPoint> pts) {
  Dataset ds;
  ds.kind = DatasetKind::IV;
  ds.points = std::move(pts);
  return ds;
}

std::map<std::string, double> relative_deltas(
    const std::vector<std::string>& names, const std::vector<double>& p,
    double rel = 1e-6) {
  std::map<std::string, double> d;
  for (std::size_t i = 0; i < names.size(); ++i) {
    d[names[i]] = rel * std::max(std::fabs(p[i]), 1e-12);
  }
  return d;
}

double rel_err(double got, double want) {
  return std::fabs(got - want) / (std::fabs(want) + 1e-12);
}

// Ground truth displaced from the evaluation point, so the cost surface
// has a healthy gradient there (data generated at the evaluation point
// itself would park it near the least-squares optimum, where forward
// differences lose all relative accuracy).
std::vector<double> displaced(const std::vector<double>& p) {
  std::vector<double> q = p;
  for (std::size_t i = 0; i < q.size(); ++i) {
    q[i] *= (i % 2 == 0) ? 1.12 : 0.88;
  }
  return q;
}

}  // namespace

TEST_CASE("rmse basics and oracle agreement") {
  std::vector<double> a{1.0, 2.0, 3.0};
  CHECK(rmse(a, a) == 0.0);
  CHECK(rmse(std::vector{2.0}, std::vector{0.0}) == 2.0);
  CHECK_THROWS_AS(rmse(a, std::vector{1.0}), Error);
  CHECK_THROWS_AS(rmse(std::vector<double>{}, std::vector<double>{}), Error);

  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> dist(-10.0, 10.0);
  std::vector<double> meas(125), sim(125);
  for (std::size_t i = 0; i < 125; ++i) {
    meas[i] = dist(rng);
    sim[i] = dist(rng);
  }
  double want = testsupport::rmse(meas, sim);
  CHECK(rel_err(rmse(meas, sim), want) < 1e-14);
}

TEST_CASE("nd recovers a linear slope to roundoff") {
  Graph g = linear_graph();
  // sim = 2*3 + 0 = 6 > meas = 5, so locally E = 3a + b - 5 (linear).
  Dataset ds = iv_points({{0.0, 3.0, 5.0}});
  auto r = nd_gradient(g, std::vector{2.0, 0.0}, {}, ds);
  CHECK(r.cost == 1.0);
  CHECK(rel_err(r.grad[0], 3.0) < 1e-9);
  CHECK(rel_err(r.grad[1], 1.0) < 1e-9);
  CHECK(r.model_eval_count == 3);  // (1 + 2 params) * 1 bias
}

TEST_CASE("evaluation counts follow the paper's laws") {
  Dataset ds = synth("nth-power-law", kNpl, named_sweep("paper"), 0.01, 3);
  auto nd = nd_gradient(build_nth_power_law(), kNpl, {}, ds);
  CHECK(nd.model_eval_count == 1125);  // (1+8) * 125
  auto ad = ad_gradient(build_nth_power_law(), kNpl, ds);
  CHECK(ad.graph_traversal_count == 250);  // 2 * 125
  CHECK(ad.model_eval_count == 125);
}

TEST_CASE("count-law ratio (n+1)/2 holds exactly across n and m") {
  struct Case {
    Graph g;
    std::vector<double> p;
  };
  GraphBuilder b1;
  NodeId p1 = b1.param("a");
  NodeId v1 = b1.input("Vds");
  std::vector<Case> cases;
  cases.push_back({b1.build({b1.mul(p1, v1)}), {2.0}});       // n = 1
  cases.push_back({build_nth_power_law(), kNpl});             // n = 8
  {
    std::vector<double> multi = kSp;
    multi.insert(multi.end(), {0.0250, 5.27e15, 4.36e-10, 6.31e-5, 1.0});
    cases.push_back({build_sp_multi(), multi});               // n = 13
  }

  for (const Case& c : cases) {
    std::size_t n = c.g.param_names().size();
    for (std::size_t m : {std::size_t{1}, std::size_t{125}}) {
      Dataset ds;
      ds.kind = DatasetKind::IV;
      for (std::size_t j = 0; j < m; ++j) {
        ds.points.push_back(
            {6.0 + static_cast<double>(j % 5) * 2.0,
             2.0 + static_cast<double>(j / 5) * 2.0, 1.0});
      }
      auto nd = nd_gradient(c.g, c.p, relative_deltas(c.g.param_names(), c.p),
                            ds);
      auto ad = ad_gradient(c.g, c.p, ds);
      CHECK(nd.model_eval_count == (1 + n) * m);
      CHECK(ad.graph_traversal_count == 2 * m);
      CHECK(2 * nd.model_eval_count == (n + 1) * ad.graph_traversal_count);
    }
  }
}

TEST_CASE("ad gradient is zero at a perfect fit") {
  GraphBuilder b;
  NodeId p = b.param("p");
  Graph g = b.build({p});
  Dataset ds;
  ds.kind = DatasetKind::IV;
  ds.points = {{0.0, 0.0, 1.75}};
  auto r = ad_gradient(g, std::vector{1.75}, ds);
  CHECK(r.cost == 0.0);
  CHECK(r.grad[0] == 0.0);
  CHECK(r.graph_traversal_count == 2);
}

TEST_CASE("identifiability: zero-noise data gives zero cost and gradient") {
  Dataset ds = synth("nth-power-law", kNpl, named_sweep("paper"), 0.0, 1);
  auto r = ad_gradient(build_nth_power_law(), kNpl, ds);
  CHECK(r.cost == 0.0);
  for (double gi : r.grad) CHECK(std::fabs(gi) <= 1e-10);
}

TEST_CASE("ad equals the summed per-point decomposition") {
  Graph g = build_nth_power_law();
  Dataset ds = iv_points({{10.0, 20.0, 3.0}, {14.0, 40.0, 9.0}});
  auto r = ad_gradient(g, kNpl, ds);

  // Independent decomposition: E and the seeds assembled by hand.
  std::vector<double> sim(2);
  Tape t0, t1;
  forward(g, kNpl, std::vector{10.0, 20.0}, t0);
  forward(g, kNpl, std::vector{14.0, 40.0}, t1);
  sim = {t0.outputs[0], t1.outputs[0]};
  double e = std::sqrt(((sim[0] - 3.0) * (sim[0] - 3.0) +
                        (sim[1] - 9.0) * (sim[1] - 9.0)) /
                       2.0);
  CHECK(rel_err(r.cost, e) < 1e-15);
  std::vector<double> g0 = backward(g, t0, std::vector{(sim[0] - 3.0) / (2 * e)});
  std::vector<double> g1 = backward(g, t1, std::vector{(sim[1] - 9.0) / (2 * e)});
  for (std::size_t i = 0; i < r.grad.size(); ++i) {
    CHECK(rel_err(r.grad[i], g0[i] + g1[i]) < 1e-14);
  }
}

TEST_CASE("nd matches ad within 1e-3 at the paper operating point") {
  Graph g = build_nth_power_law();
  Dataset ds =
      synth("nth-power-law", displaced(kNpl), named_sweep("paper"), 0.0, 8);
  auto ad = ad_gradient(g, kNpl, ds);
  // delta_i = 1e-6 |p_i|, the printed operating-point example.
  auto nd = nd_gradient(g, kNpl, relative_deltas(g.param_names(), kNpl), ds);
  for (std::size_t i = 0; i < ad.grad.size(); ++i) {
    CHECK(std::fabs(nd.grad[i] - ad.grad[i]) <=
          1e-3 * (std::fabs(ad.grad[i]) + 1e-12));
  }
}

TEST_CASE("ad-nd agreement invariant across the registered models") {
  // nth-power-law passes with the documented default step
  // 1e-6 max(1, |p_i|); the SP-family models hold parameters like
  // TOX ~ 5e-8 and COXD ~ 4e-10 for which an absolute 1e-6 step leaves
  // the parameter's own scale, so their checks pin relative steps.
  double vbi = testsupport::vbi_of(1.31e17, 5.27e15);

  SUBCASE("nth-power-law, default deltas") {
    Graph g = build_nth_power_law();
    Dataset ds = synth("nth-power-law", displaced(kNpl), named_sweep("paper"),
                       0.0, 21);
    auto ad = ad_gradient(g, kNpl, ds);
    auto nd = nd_gradient(g, kNpl, {}, ds);
    for (std::size_t i = 0; i < ad.grad.size(); ++i) {
      CHECK(std::fabs(nd.grad[i] - ad.grad[i]) <=
            1e-3 * (std::fabs(ad.grad[i]) + 1e-12));
    }
  }

  SUBCASE("sp-current, relative deltas") {
    Graph g = build_sp_current();
    Dataset ds =
        synth("sp-current", displaced(kSp), named_sweep("paper"), 0.0, 22);
    auto ad = ad_gradient(g, kSp, ds);
    auto nd = nd_gradient(g, kSp, relative_deltas(g.param_names(), kSp), ds);
    for (std::size_t i = 0; i < ad.grad.size(); ++i) {
      CHECK(std::fabs(nd.grad[i] - ad.grad[i]) <=
            1e-3 * (std::fabs(ad.grad[i]) + 1e-12));
    }
  }

  SUBCASE("sp-cds, relative deltas") {
    // ADS and VBI sit below 1, so the default absolute 1e-6 step is an
    // oversized relative perturbation; scale the steps to the parameters.
    Graph g = build_cds();
    std::vector<double> p{0.0250, 5.27e15, vbi};
    Dataset ds =
        synth("sp-cds", displaced(p), named_sweep("paper-cds"), 0.0, 23);
    auto ad = ad_gradient(g, p, ds);
    auto nd = nd_gradient(g, p, relative_deltas(g.param_names(), p), ds);
    for (std::size_t i = 0; i < ad.grad.size(); ++i) {
      CAPTURE(i);
      CAPTURE(ad.grad[i]);
      CHECK(std::fabs(nd.grad[i] - ad.grad[i]) <=
            1e-3 * (std::fabs(ad.grad[i]) + 1e-12));
    }
  }

  SUBCASE("sp-cgd, relative deltas") {
    Graph g = build_cgd();
    std::vector<double> p{5.27e15, 4.36e-10, 6.31e-5, 1.0};
    Dataset ds =
        synth("sp-cgd", displaced(p), named_sweep("paper-cgd"), 0.0, 24);
    auto ad = ad_gradient(g, p, ds);
    auto nd = nd_gradient(g, p, relative_deltas(g.param_names(), p), ds);
    for (std::size_t i = 0; i < ad.grad.size(); ++i) {
      CHECK(std::fabs(nd.grad[i] - ad.grad[i]) <=
            1e-3 * (std::fabs(ad.grad[i]) + 1e-12));
    }
  }
}

TEST_CASE("jacobian of a linear model holds the bias values") {
  Graph g = linear_graph();
  Dataset ds = iv_points({{0.0, 3.0, 0.0}, {0.0, 7.0, 0.0}});
  auto jac = residual_jacobian(g, std::vector{2.0, 1.0}, ds);
  REQUIRE(jac.rows.size() == 2);
  CHECK(jac.rows[0] == std::vector{3.0, 1.0});
  CHECK(jac.rows[1] == std::vector{7.0, 1.0});
  CHECK(jac.sim == std::vector{7.0, 15.0});
  CHECK(jac.graph_traversal_count == 4);
}

TEST_CASE("jacobian satisfies J^T r = m E grad E") {
  Graph g = build_nth_power_law();
  Dataset ds = synth("nth-power-law", kNpl, named_sweep("paper"), 0.02, 13);
  auto jac = residual_jacobian(g, kNpl, ds);
  auto ad = ad_gradient(g, kNpl, ds);
  const std::size_t m = ds.points.size();
  for (std::size_t i = 0; i < ad.grad.size(); ++i) {
    double jtr = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      jtr += jac.rows[j][i] * (jac.sim[j] - ds.points[j].value);
    }
    CHECK(rel_err(jtr, static_cast<double>(m) * ad.cost * ad.grad[i]) < 1e-10);
  }
}

TEST_CASE("jacobian rows agree with finite differences") {
  Graph g = build_nth_power_law();
  Dataset ds = iv_points({{6.0, 2.0, 0.0}, {10.0, 20.0, 0.0},
                          {14.0, 50.0, 0.0}});
  auto jac = residual_jacobian(g, kNpl, ds);
  for (std::size_t j = 0; j < ds.points.size(); ++j) {
    std::vector<double> in{ds.points[j].vgs, ds.points[j].vds};
    for (std::size_t i = 0; i < kNpl.size(); ++i) {
      double h = 1e-6 * std::fabs(kNpl[i]);
      auto hi = kNpl, lo = kNpl;
      hi[i] += h;
      lo[i] -= h;
      double fd = (eval(g, hi, in) - eval(g, lo, in)) / (2.0 * h);
      CHECK(std::fabs(jac.rows[j][i] - fd) <=
            1e-5 * (std::fabs(fd) + 1e-12));
    }
  }
}

TEST_CASE("multi-objective degenerates to ad_gradient for one objective") {
  Graph g = build_nth_power_law();
  Dataset ds = synth("nth-power-law", kNpl, named_sweep("paper"), 0.01, 17);
  auto single = ad_gradient(g, kNpl, ds);

  CostSpec spec;
  spec.objectives.push_back({&g, &ds, 1.0, 0, 1.0});
  auto multi = multi_objective_cost(spec, g.param_names(), kNpl);
  CHECK(multi.cost == single.cost);
  for (std::size_t i = 0; i < single.grad.size(); ++i) {
    CHECK(multi.grad[i] == single.grad[i]);
  }
  CHECK(multi.model_eval_count == single.model_eval_count);
  CHECK(multi.graph_traversal_count == single.graph_traversal_count);
}

TEST_CASE("shared parameters accumulate across objectives") {
  Graph g1 = linear_graph();
  Graph g2 = scaled_linear_graph(2.0);
  Dataset d1 = iv_points({{0.0, 3.0, 5.0}, {0.0, 5.0, 9.0}});
  Dataset d2 = iv_points({{0.0, 2.0, 7.0}, {0.0, 4.0, 12.0}});
  std::vector<std::string> names{"a", "b"};
  std::vector<double> vals{1.5, 0.5};

  CostSpec spec;
  spec.objectives.push_back({&g1, &d1, 1.0, 0, 1.0});
  spec.objectives.push_back({&g2, &d2, 2.5, 0, 0.7});
  auto combined = multi_objective_cost(spec, names, vals);

  auto r1 = ad_gradient(g1, vals, d1);
  auto r2 = ad_gradient(g2, vals, d2);
  CHECK(rel_err(combined.cost, r1.cost + 2.5 / 0.7 * r2.cost) < 1e-14);
  for (std::size_t i = 0; i < names.size(); ++i) {
    CHECK(rel_err(combined.grad[i], r1.grad[i] + 2.5 / 0.7 * r2.grad[i]) <
          1e-13);
  }
}

TEST_CASE("the 13-parameter joint composition differentiates end to end") {
  std::vector<double> p = kSp;
  p.insert(p.end(), {0.0250, 5.27e15, 4.36e-10, 6.31e-5, 1.0});
  Graph multi = build_sp_multi();
  const ModelInfo& info = model_info("sp-multi");

  double vbi = testsupport::vbi_of(1.31e17, 5.27e15);
  Dataset iv =
      synth("sp-current", displaced(kSp), named_sweep("paper"), 0.0, 31);
  Dataset cds = synth("sp-cds", displaced({0.0250, 5.27e15, vbi}),
                      named_sweep("paper-cds"), 0.0, 32);
  Dataset cgd = synth("sp-cgd", displaced({5.27e15, 4.36e-10, 6.31e-5, 1.0}),
                      named_sweep("paper-cgd"), 0.0, 33);

  CostSpec spec;
  spec.normalization = Normalization::PerPoint;
  spec.objectives.push_back(
      {&multi, &iv, 1.0, output_for_kind(info, DatasetKind::IV), 1.0});
  spec.objectives.push_back(
      {&multi, &cds, 1.0, output_for_kind(info, DatasetKind::Cds), 1.0});
  spec.objectives.push_back(
      {&multi, &cgd, 1.0, output_for_kind(info, DatasetKind::Cgd), 1.0});

  auto ad = multi_objective_cost(spec, info.params, p);
  CHECK(ad.grad.size() == 13);
  CHECK(ad.cost > 0.0);
  for (double gi : ad.grad) CHECK(std::isfinite(gi));
  CHECK(ad.model_eval_count == 125 + 300 + 300);
  CHECK(ad.graph_traversal_count == 2 * (125 + 300 + 300));

  // COXD is the one near-insensitive direction (the overlap depletion
  // capacitance dominates the series combination across this sweep), so a
  // 1e-6 relative step leaves the forward difference roundoff-bound; a
  // 1e-4 relative step balances roundoff against truncation there.
  auto deltas = relative_deltas(info.params, p);
  deltas["COXD"] = 1e-4 * 4.36e-10;
  auto nd = multi_objective_cost_nd(spec, info.params, p, deltas);
  CHECK(rel_err(nd.cost, ad.cost) < 1e-15);
  CHECK(nd.model_eval_count == (1 + 13) * (125 + 300 + 300));
  for (std::size_t i = 0; i < 13; ++i) {
    CAPTURE(i);
    CAPTURE(ad.grad[i]);
    CHECK(std::fabs(nd.grad[i] - ad.grad[i]) <=
          1e-3 * (std::fabs(ad.grad[i]) + 1e-12));
  }
}

TEST_CASE("scaling data and model by c scales E and preserves grad/E") {
  Graph g = linear_graph();
  Graph gc = scaled_linear_graph(37.5);
  Dataset ds = iv_points({{0.0, 1.0, 2.0}, {0.0, 2.0, 3.0}, {0.0, 4.0, 9.0}});
  Dataset dsc = ds;
  for (DataPoint& p : dsc.points) p.value *= 37.5;

  std::vector<double> vals{1.2, 0.3};
  auto base = ad_gradient(g, vals, ds);
  auto scaled = ad_gradient(gc, vals, dsc);
  CHECK(rel_err(scaled.cost, 37.5 * base.cost) < 1e-14);
  for (std::size_t i = 0; i < vals.size(); ++i) {
    CHECK(rel_err(scaled.grad[i] / scaled.cost, base.grad[i] / base.cost) <
          1e-12);
  }
}

TEST_CASE("per-point normalization equalizes equal-ratio residuals") {
  // sim_j = 1.02 Vds_j with meas_j = Vds_j: every normalized residual is
  // exactly 0.02 regardless of the point's magnitude.
  GraphBuilder b;
  NodeId p = b.param("a");
  NodeId v = b.input("Vds");
  Graph g = b.build({b.mul(p, v)});
  Dataset ds = iv_points({{0.0, 1e-3, 1e-3},
                          {0.0, 0.5, 0.5},
                          {0.0, 3.0, 3.0},
                          {0.0, 10.0, 10.0}});
  auto r = ad_gradient(g, std::vector{1.02}, ds, Normalization::PerPoint);
  CHECK(rel_err(r.cost, 0.02) < 1e-12);
}

TEST_CASE("gradresult serializes to the documented json shape") {
  Graph g = linear_graph();
  Dataset ds = iv_points({{0.0, 3.0, 5.0}});
  auto r = ad_gradient(g, std::vector{2.0, 0.0}, ds);
  auto j = nlohmann::json::parse(r.to_json());
  CHECK(j.at("cost").get<double>() == r.cost);
  CHECK(j.at("grad").size() == 2);
  CHECK(j.at("grad").at("a").get<double>() == r.grad[0]);
  CHECK(j.at("grad").at("b").get<double>() == r.grad[1]);
  CHECK(j.at("model_eval_count").get<std::size_t>() == 1);
  CHECK(j.at("graph_traversal_count").get<std::size_t>() == 2);
}

TEST_CASE("gradcalc rejects malformed requests") {
  Graph g = linear_graph();
  Dataset empty;
  empty.kind = DatasetKind::IV;
  CHECK_THROWS_AS(ad_gradient(g, std::vector{1.0, 1.0}, empty), Error);
  Dataset ds = iv_points({{0.0, 3.0, 5.0}});
  CHECK_THROWS_AS(
      nd_gradient(g, std::vector{1.0, 1.0}, {{"a", 0.0}}, ds), Error);

  CostSpec spec;
  CHECK_THROWS_AS(multi_objective_cost(spec, {"a", "b"}, std::vector{1.0, 1.0}),
                  Error);
  spec.objectives.push_back({&g, &empty, 1.0, 0, 1.0});
  CHECK_THROWS_AS(multi_objective_cost(spec, {"a", "b"}, std::vector{1.0, 1.0}),
                  Error);
  spec.objectives[0] = {&g, &ds, -1.0, 0, 1.0};
  CHECK_THROWS_AS(multi_objective_cost(spec, {"a", "b"}, std::vector{1.0, 1.0}),
                  Error);
  spec.objectives[0] = {&g, &ds, 1.0, 5, 1.0};
  CHECK_THROWS_AS(multi_objective_cost(spec, {"a", "b"}, std::vector{1.0, 1.0}),
                  Error);
  spec.objectives[0] = {&g, &ds, 1.0, 0, 1.0};
  CHECK_THROWS_AS(multi_objective_cost(spec, {"a"}, std::vector{1.0}), Error);
}
