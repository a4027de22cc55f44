#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "mosfit/data.hpp"
#include "mosfit/gradcalc.hpp"
#include "mosfit/initparams.hpp"
#include "mosfit/optimize.hpp"
#include "nlohmann/json.hpp"
#include "support/cv_curves.hpp"
#include "support/scalar_models.hpp"

using namespace mosfit;

namespace {

// Table VI initial values: TOX VFBC NA SCALE RD LAMBDA THETA DELTA.
const std::vector<double> kSpTable{5.0e-8, -4.90,   1.31e17, 5166360.0,
                                   2.90e-3, 8.69e-3, 5.91e-3, 0.80};

// A finer Vds grid than the extraction sweep, so the near-origin segment
// (Vds <= 2 V) holds more than one point.
const SweepSpec kFine{{6.0, 14.0, 2.0}, {0.2, 50.0, 0.2}};

Dataset iv_at(const std::vector<double>& truth) {
  return synth("sp-current", truth, kFine, 0.0, 1);
}

// The estimators read RD off the near-origin slope, which also contains the
// channel resistance; at Table VI scale the channel dominates and hides RD,
// so the RD-accuracy cases run a higher-gain (power-device) variant where
// the series resistance is actually visible in the data.
std::vector<double> power_device(double rd) {
  std::vector<double> t = kSpTable;
  t[3] = 5.0e7;
  t[4] = rd;
  return t;
}

Dataset manual_iv(const std::vector<DataPoint>& pts) {
  Dataset ds;
  ds.kind = DatasetKind::IV;
  ds.points = pts;
  return ds;
}

}  // namespace

TEST_CASE("lambda and rd recovered within 50% on power-device data") {
  Dataset iv = iv_at(power_device(2.90e-3));
  auto [lambda, rd] = estimate_lambda_rd(iv);
  CHECK(lambda / 8.69e-3 > 0.5);
  CHECK(lambda / 8.69e-3 < 1.5);
  CHECK(rd / 2.90e-3 > 0.5);
  CHECK(rd / 2.90e-3 < 1.5);
}

TEST_CASE("flat saturation current gives a zero lambda estimate") {
  // Hand-made curves: exactly linear up to 10 V, exactly flat beyond.
  std::vector<DataPoint> pts;
  for (double vgs : {10.0, 12.0, 14.0}) {
    for (double vds = 0.2; vds <= 50.0; vds += 0.2) {
      double f = vds < 10.0 ? vds : 10.0;
      pts.push_back({vgs, vds, (vgs - 4.0) * f});
    }
  }
  auto [lambda, rd] = estimate_lambda_rd(manual_iv(pts));
  CHECK(std::fabs(lambda) <= 1e-4);
  CHECK(rd > 0.0);
}

TEST_CASE("doubling the synthetic rd roughly doubles the estimate") {
  auto [l1, r1] = estimate_lambda_rd(iv_at(power_device(2.90e-3)));
  auto [l2, r2] = estimate_lambda_rd(iv_at(power_device(5.80e-3)));
  (void)l1;
  (void)l2;
  CHECK(r2 / r1 > 2.0 * 0.7);
  CHECK(r2 / r1 < 2.0 * 1.3);
}

TEST_CASE("lambda_rd rejects degenerate sweeps") {
  CHECK_THROWS_AS(estimate_lambda_rd(Dataset{}), InitError);

  // No points at Vds <= 2 V.
  std::vector<DataPoint> far;
  for (double vds : {10.0, 20.0, 30.0, 40.0, 50.0}) {
    far.push_back({14.0, vds, vds});
  }
  CHECK_THROWS_AS(estimate_lambda_rd(manual_iv(far)), InitError);

  // Only one point lands in the top-40% saturation window.
  std::vector<DataPoint> sparse;
  for (double vds : {0.2, 0.6, 1.0, 30.0}) {
    sparse.push_back({14.0, vds, vds});
  }
  CHECK_THROWS_AS(estimate_lambda_rd(manual_iv(sparse)), InitError);
}

TEST_CASE("theta recovered within 50% on Table VI synthetic data") {
  Dataset iv = iv_at(kSpTable);
  auto [scale, theta] = estimate_k_theta(iv);
  CHECK(theta / 5.91e-3 > 0.5);
  CHECK(theta / 5.91e-3 < 1.5);
  // The spec pins only positivity for the gain; the factor-2 band guards
  // the probe calibration against regressions (measured ratio ~0.86).
  CHECK(scale / 5166360.0 > 0.5);
  CHECK(scale / 5166360.0 < 2.0);
}

TEST_CASE("exactly linear Id-Vgs data gives theta of zero and positive gain") {
  std::vector<DataPoint> pts;
  for (double vgs : {6.0, 8.0, 10.0, 12.0, 14.0}) {
    pts.push_back({vgs, 0.5, 2.0 * (vgs - 3.0) * 0.5});
    pts.push_back({vgs, 50.0, 5.0 * (vgs - 3.0)});
  }
  auto [scale, theta] = estimate_k_theta(manual_iv(pts));
  CHECK(std::fabs(theta) <= 1e-4);
  CHECK(scale > 0.0);
}

TEST_CASE("k_theta rejects missing slices") {
  // A single drain bias cannot provide both slices.
  std::vector<DataPoint> single;
  for (double vgs : {6.0, 8.0, 10.0, 12.0, 14.0}) {
    single.push_back({vgs, 50.0, vgs});
  }
  CHECK_THROWS_AS(estimate_k_theta(manual_iv(single)), InitError);

  // Slices with fewer than 4 gate biases.
  std::vector<DataPoint> narrow;
  for (double vgs : {6.0, 8.0, 10.0}) {
    narrow.push_back({vgs, 0.5, vgs});
    narrow.push_back({vgs, 50.0, vgs});
  }
  CHECK_THROWS_AS(estimate_k_theta(manual_iv(narrow)), InitError);
}

TEST_CASE("vfbc knee detector") {
  Dataset cgs = testsupport::cgs_knee(5e-9, -4.90, 0.5, -10.0, 0.0, 300);

  SUBCASE("knee within half a volt of the placed flat-band voltage") {
    double vfbc = estimate_vfbc(cgs);
    CHECK(std::fabs(vfbc - (-4.90)) <= 0.5);
  }

  SUBCASE("location invariant to uniform vertical scaling") {
    double base = estimate_vfbc(cgs);
    Dataset scaled = cgs;
    for (DataPoint& p : scaled.points) p.value *= 1000.0;
    CHECK(estimate_vfbc(scaled) == base);
  }

  SUBCASE("strictly constant curve has no knee") {
    Dataset flat = cgs;
    for (DataPoint& p : flat.points) p.value = 5e-9;
    CHECK_THROWS_AS(estimate_vfbc(flat), InitError);
  }

  SUBCASE("too few points") {
    Dataset tiny = cgs;
    tiny.points.resize(4);
    CHECK_THROWS_AS(estimate_vfbc(tiny), InitError);
  }
}

namespace {

// Cgd sweep covering depletion through the accumulation plateau (the Vgd
// bias rides in the vgs column of a Cgd dataset), plus the matching Cds
// curve; both generated from Table VIII values.
const std::vector<double> kCgdTruth{5.27e15, 4.36e-10, 6.31e-5, 1.00};
const std::vector<double> kCdsTruth{0.0250, 5.27e15, 0.0882};

Dataset cgd_sweep(double lo, double hi) {
  return synth("sp-cgd", kCgdTruth, SweepSpec{{lo, hi, 0.1}, {10.0, 10.0, 1.0}},
               0.0, 2);
}

}  // namespace

TEST_CASE("capacitance chain recovers Table VIII values within 50%") {
  Dataset cgd = cgd_sweep(-10.0, 5.0);
  Dataset cds = synth("sp-cds", kCdsTruth, named_sweep("paper-cds"), 0.0, 3);
  CapChain ch = estimate_cap_chain(cgd, cds, PhysicalConstants{}, 5.0e-8,
                                   0.0882);
  auto within = [](double est, double truth) {
    CHECK(est / truth > 0.5);
    CHECK(est / truth < 1.5);
  };
  within(ch.coxd, 4.36e-10);
  within(ch.vfbd, 1.00);
  within(ch.agd, 6.31e-5);
  within(ch.nd, 5.27e15);
  within(ch.na, 1.31e17);
  within(ch.ads, 0.0250);
  CHECK(ch.vbi == 0.0882);
}

TEST_CASE("built-in potential equation round-trips through NA") {
  PhysicalConstants c;
  double nd = 5.27e15;
  double vbi = 0.0882;
  double na = c.n_i * c.n_i / nd * std::exp(vbi / c.phi_t);
  CHECK(testsupport::vbi_of(na, nd) == doctest::Approx(vbi).epsilon(1e-10));
}

TEST_CASE("plateau estimate is local to the accumulation end") {
  Dataset cds = synth("sp-cds", kCdsTruth, named_sweep("paper-cds"), 0.0, 3);
  PhysicalConstants c;
  CapChain a = estimate_cap_chain(cgd_sweep(-10.0, 5.0), cds, c, 5.0e-8,
                                  0.0882);
  CapChain b = estimate_cap_chain(cgd_sweep(-15.0, 5.0), cds, c, 5.0e-8,
                                  0.0882);
  CHECK(b.coxd == doctest::Approx(a.coxd).epsilon(1e-12));
  CHECK(b.vfbd == doctest::Approx(a.vfbd).epsilon(1e-12));
}

TEST_CASE("cap chain error conditions") {
  Dataset cds = synth("sp-cds", kCdsTruth, named_sweep("paper-cds"), 0.0, 3);
  PhysicalConstants c;

  SUBCASE("no accumulation plateau in a depletion-only sweep") {
    CHECK_THROWS_AS(
        estimate_cap_chain(cgd_sweep(-10.0, 0.0), cds, c, 5.0e-8, 0.0882),
        InitError);
  }

  SUBCASE("too few Cgd points") {
    Dataset tiny = cgd_sweep(-10.0, 5.0);
    tiny.points.resize(7);
    CHECK_THROWS_AS(estimate_cap_chain(tiny, cds, c, 5.0e-8, 0.0882),
                    InitError);
  }

  SUBCASE("too few Cds points") {
    Dataset one;
    one.kind = DatasetKind::Cds;
    one.points.push_back({0.0, 50.0, 1e-9});
    CHECK_THROWS_AS(
        estimate_cap_chain(cgd_sweep(-10.0, 5.0), one, c, 5.0e-8, 0.0882),
        InitError);
  }
}

TEST_CASE("default seed carries exactly TOX and DELTA") {
  InitEstimate seed = default_seed();
  CHECK(seed.params.size() == 2);
  CHECK(seed.params.at("TOX") == 5.0e-8);
  CHECK(seed.params.at("DELTA") == 0.8);
  CHECK(seed.provenance.at("TOX") == Provenance::Default);
  CHECK(seed.provenance.at("DELTA") == Provenance::Default);
}

namespace {

struct FullData {
  Dataset iv, cgs, cgd, cds;
};

FullData full_synthetic() {
  FullData d;
  d.iv = iv_at(kSpTable);
  d.cgs = testsupport::cgs_knee(5e-9, -4.90, 0.5, -10.0, 0.0, 300);
  d.cgd = cgd_sweep(-10.0, 5.0);
  d.cds = synth("sp-cds", kCdsTruth, named_sweep("paper-cds"), 0.0, 3);
  return d;
}

}  // namespace

TEST_CASE("estimate_all yields the full 13-parameter set plus VBI") {
  FullData d = full_synthetic();
  InitEstimate est = estimate_all(d.iv, d.cgs, d.cgd, d.cds,
                                  PhysicalConstants{}, 0.0882);

  const std::vector<std::string> all13{
      "TOX", "VFBC", "NA",  "SCALE", "RD",   "LAMBDA", "THETA",
      "DELTA", "ADS", "ND", "COXD",  "AGD",  "VFBD"};
  for (const std::string& name : all13) {
    CAPTURE(name);
    REQUIRE(est.params.count(name) == 1);
    CHECK(std::isfinite(est.params.at(name)));
  }
  CHECK(est.params.size() == 14);  // the 13 model parameters plus VBI
  CHECK(est.params.count("VBI") == 1);

  auto prov = [&](const std::string& n) { return est.provenance.at(n); };
  for (const std::string& n : {"TOX", "DELTA", "VBI"}) {
    CAPTURE(n);
    CHECK(prov(n) == Provenance::Default);
  }
  for (const std::string& n :
       {"LAMBDA", "RD", "SCALE", "THETA", "VFBC", "COXD", "VFBD"}) {
    CAPTURE(n);
    CHECK(prov(n) == Provenance::MeasuredSlope);
  }
  for (const std::string& n : {"AGD", "ND", "NA", "ADS"}) {
    CAPTURE(n);
    CHECK(prov(n) == Provenance::DerivedEquation);
  }

  auto j = nlohmann::json::parse(est.to_json());
  CHECK(j.at("params").size() == 14);
  CHECK(j.at("provenance").at("TOX") == "default");
  CHECK(j.at("provenance").at("ND") == "derived-equation");
}

TEST_CASE("identical datasets produce identical estimates") {
  FullData d = full_synthetic();
  PhysicalConstants c;
  std::string a = estimate_all(d.iv, d.cgs, d.cgd, d.cds, c, 0.0882).to_json();
  std::string b = estimate_all(d.iv, d.cgs, d.cgd, d.cds, c, 0.0882).to_json();
  CHECK(a == b);
}

TEST_CASE("gradient descent seeded by the estimate reaches the target") {
  FullData d = full_synthetic();
  InitEstimate est = estimate_all(d.iv, d.cgs, d.cgd, d.cds,
                                  PhysicalConstants{}, 0.0882);

  Dataset fit_data =
      synth("sp-current", kSpTable, named_sweep("paper"), 0.0, 4);
  Graph g = build_sp_current(PhysicalConstants{});
  CostSpec spec;
  Objective obj;
  obj.graph = &g;
  obj.dataset = &fit_data;
  spec.objectives.push_back(obj);

  ParamSet init;
  for (const std::string& n : g.param_names()) {
    init.values[n] = est.params.at(n);
  }
  StopRule stop;
  stop.n_max = 1000;
  stop.e_target = 0.16;  // E_target for the SP current fit
  FitReport rep = gradient_descent(spec, g.param_names(), init, stop);
  CHECK(rep.terminated_by == TerminatedBy::TargetReached);
  CHECK(rep.iterations.back().cost <= 0.16);
  CHECK(rep.iterations.size() <= 1000);
}
