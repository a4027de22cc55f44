#include "mosfit/initparams.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <tuple>
#include <vector>

#include "nlohmann/json.hpp"

namespace mosfit {

namespace {

struct XY {
  double x, y;
};

// Least-squares line y = a x + b.
std::pair<double, double> fit_line(const std::vector<XY>& pts) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(pts.size());
  for (const XY& p : pts) {
    sx += p.x;
    sy += p.y;
    sxx += p.x * p.x;
    sxy += p.x * p.y;
  }
  double det = n * sxx - sx * sx;
  double a = (n * sxy - sx * sy) / det;
  double b = (sy - a * sx) / n;
  return {a, b};
}

// The Id-Vds curve at one gate voltage, sorted by Vds.
std::vector<XY> curve_at_vgs(const Dataset& iv, double vgs) {
  std::vector<XY> curve;
  for (const DataPoint& p : iv.points) {
    if (p.vgs == vgs) curve.push_back({p.vds, p.value});
  }
  std::sort(curve.begin(), curve.end(),
            [](const XY& a, const XY& b) { return a.x < b.x; });
  return curve;
}

// On-resistance at Vds ~ 0: the through-origin slope of the smallest-Vds
// point of the curve, inverted.
double r_on(const std::vector<XY>& curve) {
  const XY& p = curve.front();
  if (p.y <= 0.0) {
    throw InitError("non-positive current at the smallest Vds");
  }
  return p.x / p.y;
}

// The Id-Vgs slice at one drain voltage, sorted by Vgs.
std::vector<XY> slice_at_vds(const Dataset& iv, double vds) {
  std::vector<XY> slice;
  for (const DataPoint& p : iv.points) {
    if (p.vds == vds) slice.push_back({p.vgs, p.value});
  }
  std::sort(slice.begin(), slice.end(),
            [](const XY& a, const XY& b) { return a.x < b.x; });
  return slice;
}

// Second-derivative-to-slope ratio of the quadratic through the last three
// points; for y = c (x - x0)/(1 + theta x) this isolates theta exactly.
double theta_from_curvature(const std::vector<XY>& pts) {
  const XY& p1 = pts[pts.size() - 3];
  const XY& p2 = pts[pts.size() - 2];
  const XY& p3 = pts[pts.size() - 1];
  double d12 = p1.x - p2.x, d13 = p1.x - p3.x, d23 = p2.x - p3.x;
  double ypp = 2.0 * (p1.y / (d12 * d13) - p2.y / (d12 * d23) +
                      p3.y / (d13 * d23));
  double yp = p1.y * d23 / (d12 * d13) +
              p2.y * (d12 - d23) / (d12 * d23) -
              p3.y * d12 / (d13 * d23);
  if (yp == 0.0) throw InitError("flat Id-Vgs slice: no usable slope");
  double r = ypp / yp;
  return -r / (2.0 + r * p2.x);
}

}  // namespace

const char* provenance_name(Provenance p) {
  switch (p) {
    case Provenance::MeasuredSlope: return "measured-slope";
    case Provenance::Default: return "default";
    case Provenance::DerivedEquation: return "derived-equation";
  }
  return "default";
}

void InitEstimate::set(const std::string& name, double value, Provenance p) {
  params[name] = value;
  provenance[name] = p;
}

void InitEstimate::merge(const InitEstimate& other) {
  for (const auto& [name, value] : other.params) {
    params[name] = value;
    provenance[name] = other.provenance.at(name);
  }
}

std::string InitEstimate::to_json() const {
  nlohmann::ordered_json j;
  j["params"] = nlohmann::ordered_json::object();
  j["provenance"] = nlohmann::ordered_json::object();
  for (const auto& [name, value] : params) {
    j["params"][name] = value;
    j["provenance"][name] = provenance_name(provenance.at(name));
  }
  return j.dump(2);
}

std::pair<double, double> estimate_lambda_rd(const Dataset& iv) {
  if (iv.points.empty()) throw InitError("empty I-V dataset");
  std::vector<double> gate_biases;
  for (const DataPoint& p : iv.points) gate_biases.push_back(p.vgs);
  std::sort(gate_biases.begin(), gate_biases.end());
  gate_biases.erase(std::unique(gate_biases.begin(), gate_biases.end()),
                    gate_biases.end());
  double vgs1 = gate_biases.back();
  std::vector<XY> curve = curve_at_vgs(iv, vgs1);
  double vmin = curve.front().x;
  double vmax = curve.back().x;
  double sat_from = vmin + 0.6 * (vmax - vmin);

  std::vector<XY> sat, lin;
  for (const XY& p : curve) {
    if (p.x >= sat_from) sat.push_back(p);
    if (p.x <= 2.0) lin.push_back(p);
  }
  if (sat.size() < 3) {
    throw InitError("fewer than 3 points in the saturation segment");
  }
  if (lin.size() < 3) {
    throw InitError("fewer than 3 points in the near-origin segment");
  }

  auto [a_sat, b_sat] = fit_line(sat);
  if (b_sat <= 0.0) {
    throw InitError("saturation-segment intercept is not positive");
  }
  double lambda = a_sat / b_sat;

  // The measured on-resistance is RD plus the channel resistance; the
  // channel part scales like 1/Vgs, so comparing the two highest gate
  // biases cancels it.  With a single gate bias the raw on-resistance is
  // the best available bound.
  double r1 = r_on(lin);
  double rd = r1;
  if (gate_biases.size() >= 2) {
    double vgs2 = gate_biases[gate_biases.size() - 2];
    std::vector<XY> curve2 = curve_at_vgs(iv, vgs2);
    std::vector<XY> lin2;
    for (const XY& p : curve2) {
      if (p.x <= 2.0) lin2.push_back(p);
    }
    if (!lin2.empty() && vgs2 > 0.0) {
      double r2 = r_on(lin2);
      double beta = (r2 - r1) / (1.0 / vgs2 - 1.0 / vgs1);
      rd = r1 - beta / vgs1;
    }
  }
  rd = std::clamp(rd, 1e-3 * r1, r1);
  return {lambda, rd};
}

std::pair<double, double> estimate_k_theta(const Dataset& iv,
                                           const PhysicalConstants& c) {
  if (iv.points.empty()) throw InitError("empty I-V dataset");
  double vds_lo = std::numeric_limits<double>::infinity();
  double vds_hi = -vds_lo;
  for (const DataPoint& p : iv.points) {
    vds_lo = std::min(vds_lo, p.vds);
    vds_hi = std::max(vds_hi, p.vds);
  }
  if (!(vds_lo < vds_hi)) {
    throw InitError("need distinct linear and saturation Vds slices");
  }
  std::vector<XY> lin = slice_at_vds(iv, vds_lo);
  std::vector<XY> sat = slice_at_vds(iv, vds_hi);
  if (lin.size() < 4) throw InitError("linear Id-Vgs slice needs >= 4 points");
  if (sat.size() < 4) {
    throw InitError("saturation Id-Vgs slice needs >= 4 points");
  }

  // At low Vds the current follows c (Vgs - V0)/(1 + THETA Vgs) closely, so
  // the curvature-to-slope ratio of the strong-inversion end of the slice
  // reads THETA directly.
  double theta = theta_from_curvature(lin);

  // LAMBDA and RD refine the gain probe below when the dataset supports
  // estimating them; they are second-order there, so failure is not fatal.
  double lambda_est = 0.0, rd_est = 0.0;
  try {
    std::tie(lambda_est, rd_est) = estimate_lambda_rd(iv);
  } catch (const InitError&) {
  }

  // Gain: the measured saturation-region Id-Vgs slope against the model's
  // slope at unit SCALE and probe parameters.
  const XY& s1 = sat[sat.size() - 2];
  const XY& s2 = sat[sat.size() - 1];
  double slope_meas = (s2.y - s1.y) / (s2.x - s1.x);
  if (slope_meas <= 0.0) {
    throw InitError("saturation Id-Vgs slice is not monotone increasing");
  }
  Graph probe = build_sp_current(c);
  std::vector<double> pp{5.0e-8, -5.0, 1.0e17, 1.0,
                         rd_est, lambda_est, theta, 0.8};
  std::vector<double> in1{s1.x, vds_hi};
  std::vector<double> in2{s2.x, vds_hi};
  double m1 = eval(probe, pp, in1);
  double m2 = eval(probe, pp, in2);
  double slope_model = (m2 - m1) / (s2.x - s1.x);
  if (slope_model <= 0.0) {
    throw InitError("probe model slope is not positive");
  }
  return {slope_meas / slope_model, theta};
}

double estimate_vfbc(const Dataset& cgs) {
  std::vector<XY> pts;
  for (const DataPoint& p : cgs.points) pts.push_back({p.vgs, p.value});
  std::sort(pts.begin(), pts.end(),
            [](const XY& a, const XY& b) { return a.x < b.x; });
  if (pts.size() < 5) throw InitError("Cgs curve needs >= 5 points");

  // 3-point moving average, endpoints kept.
  std::vector<double> smooth(pts.size());
  smooth.front() = pts.front().y;
  smooth.back() = pts.back().y;
  for (std::size_t i = 1; i + 1 < pts.size(); ++i) {
    smooth[i] = (pts[i - 1].y + pts[i].y + pts[i + 1].y) / 3.0;
  }

  double peak = 0.0;
  double vmax_abs = 0.0;
  std::size_t arg = 0;
  for (const XY& p : pts) vmax_abs = std::max(vmax_abs, std::fabs(p.y));
  for (std::size_t i = 1; i + 1 < pts.size(); ++i) {
    double d2 = std::fabs(smooth[i + 1] - 2.0 * smooth[i] + smooth[i - 1]);
    if (d2 > peak) {
      peak = d2;
      arg = i;
    }
  }
  if (peak <= 1e-12 * vmax_abs) {
    throw InitError("no knee found in the Cgs curve");
  }
  return pts[arg].x;
}

CapChain estimate_cap_chain(const Dataset& cgd, const Dataset& cds,
                            const PhysicalConstants& c, double tox,
                            double vbi) {
  CapChain out;
  out.vbi = vbi;

  std::vector<XY> pts;  // x = Vgd (carried in the vgs column), y = Cgd
  for (const DataPoint& p : cgd.points) pts.push_back({p.vgs, p.value});
  std::sort(pts.begin(), pts.end(),
            [](const XY& a, const XY& b) { return a.x < b.x; });
  if (pts.size() < 8) throw InitError("Cgd curve needs >= 8 points");

  // Accumulation plateau: the high-Vgd end must be flat.
  constexpr std::size_t kPlateau = 5;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo, sum = 0.0;
  for (std::size_t i = pts.size() - kPlateau; i < pts.size(); ++i) {
    lo = std::min(lo, pts[i].y);
    hi = std::max(hi, pts[i].y);
    sum += pts[i].y;
  }
  double plateau = sum / kPlateau;
  if (!(plateau > 0.0) || (hi - lo) > 0.02 * plateau) {
    throw InitError("accumulation plateau not detected in the Cgd curve");
  }
  out.coxd = plateau;

  // Departure from the plateau marks the flat-band voltage.
  bool found = false;
  for (std::size_t i = pts.size(); i-- > 0;) {
    if (pts[i].y < 0.95 * plateau) {
      out.vfbd = pts[i].x;
      found = true;
      break;
    }
  }
  if (!found) {
    throw InitError("Cgd never departs from the accumulation plateau");
  }

  // Oxide-capacitor relation, with the overlap area kept in cm^2.
  out.agd = 100.0 * out.coxd * tox / c.eps_ox;

  // PN-junction inversion at the deepest depletion bias.
  const XY& deep = pts.front();
  double u = out.vfbd - deep.x;
  if (u <= 0.0 || deep.y >= out.coxd) {
    throw InitError("no depletion region available for the ND inversion");
  }
  double cdep = deep.y * out.coxd / (out.coxd - deep.y);
  double area_m2 = out.agd * 1e-4;
  double nd_si = cdep / area_m2 * cdep / area_m2 * 2.0 * u / (c.q * c.eps_sic);
  out.nd = nd_si / 1e6;
  if (!(out.nd > 0.0) || !std::isfinite(out.nd)) {
    throw InitError("ND inversion produced a non-positive concentration");
  }

  // Built-in potential equation solved for NA.
  out.na = c.n_i * c.n_i / out.nd * std::exp(vbi / c.phi_t);
  if (!(out.na > 0.0) || !std::isfinite(out.na)) {
    throw InitError("NA inversion produced a non-positive concentration");
  }

  if (cds.points.size() < 2) throw InitError("Cds needs >= 2 points");
  const DataPoint* ref = &cds.points.front();
  for (const DataPoint& p : cds.points) {
    if (p.vds > ref->vds) ref = &p;
  }
  if (vbi + ref->vds <= 0.0) {
    throw InitError("VBI + Vds must be positive for the ADS inversion");
  }
  double per_area =
      std::sqrt(c.q * c.eps_sic * nd_si / (2.0 * (vbi + ref->vds)));
  out.ads = ref->value / (1e-4 * per_area);
  if (!(out.ads > 0.0) || !std::isfinite(out.ads)) {
    throw InitError("ADS inversion produced a non-positive area");
  }
  return out;
}

InitEstimate default_seed() {
  InitEstimate est;
  est.set("TOX", 5.0e-8, Provenance::Default);
  est.set("DELTA", 0.8, Provenance::Default);
  return est;
}

InitEstimate estimate_all(const Dataset& iv, const Dataset& cgs,
                          const Dataset& cgd, const Dataset& cds,
                          const PhysicalConstants& c, double vbi) {
  InitEstimate est = default_seed();
  auto [lambda, rd] = estimate_lambda_rd(iv);
  est.set("LAMBDA", lambda, Provenance::MeasuredSlope);
  est.set("RD", rd, Provenance::MeasuredSlope);
  auto [scale, theta] = estimate_k_theta(iv, c);
  est.set("SCALE", scale, Provenance::MeasuredSlope);
  est.set("THETA", theta, Provenance::MeasuredSlope);
  est.set("VFBC", estimate_vfbc(cgs), Provenance::MeasuredSlope);
  CapChain chain = estimate_cap_chain(cgd, cds, c, est.params.at("TOX"), vbi);
  est.set("COXD", chain.coxd, Provenance::MeasuredSlope);
  est.set("VFBD", chain.vfbd, Provenance::MeasuredSlope);
  est.set("AGD", chain.agd, Provenance::DerivedEquation);
  est.set("ND", chain.nd, Provenance::DerivedEquation);
  est.set("NA", chain.na, Provenance::DerivedEquation);
  est.set("ADS", chain.ads, Provenance::DerivedEquation);
  est.set("VBI", chain.vbi, Provenance::Default);
  return est;
}

}  // namespace mosfit
