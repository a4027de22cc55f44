#include "mosfit/models.hpp"

#include <cmath>
#include <utility>

namespace mosfit {

namespace {

// Fixed 15-step Newton solve of the surface-potential equation
//   (u - phi)^2 = gamma^2 phi_t [(e^(-t) + t - 1) + e^c2 (e^t - t - 1)],
// t = phi/phi_t, c2 = -(2 phi_f + phi_t)/phi_t, unrolled into the graph so
// the backward pass differentiates through the iterations.  The start
// value is a closed-form regime estimate (accumulation / depletion /
// inversion); Newton steps are clamped to +-2 V.  A residual check on
// the final iterate guards against silent non-convergence.
NodeId emit_spe_solve(GraphBuilder& b, NodeId u, NodeId gamma, NodeId phi_f,
                      double phi_t, const std::string& label) {
  NodeId phit = b.constant(phi_t);
  NodeId one = b.constant(1.0);
  NodeId two = b.constant(2.0);
  NodeId gamma2 = b.mul(gamma, gamma);
  NodeId g2pt = b.mul(gamma2, phit);
  NodeId c2 = b.neg(b.div(b.add(b.mul(two, phi_f), phit), phit));

  // r and dr/dphi with the inversion exponential folded into e2 so no
  // intermediate overflows: e2 = e^(t + c2) = e^c2 e^t.
  auto residual = [&](NodeId p) {
    NodeId t = b.div(p, phit);
    NodeId e1 = b.safe_exp(b.neg(t));
    NodeId e2 = b.safe_exp(b.add(t, c2));
    NodeId e3 = b.safe_exp(c2);
    NodeId bracket = b.add(b.sub(b.add(e1, t), one),
                           b.sub(e2, b.mul(e3, b.add(t, one))));
    NodeId d = b.sub(u, p);
    NodeId r = b.sub(b.mul(d, d), b.mul(g2pt, bracket));
    NodeId rp = b.sub(b.neg(b.mul(two, d)),
                      b.mul(gamma2, b.sub(b.add(b.sub(one, e1), e2), e3)));
    return std::pair{r, rp};
  };

  // Inversion estimate: two passes of the log fixed point
  // phi = 2 phi_f + phi_t + phi_t ln((u - phi)^2 / (gamma^2 phi_t)).
  NodeId pin = b.add(b.mul(two, phi_f), phit);
  NodeId phi_inv = pin;
  for (int pass = 0; pass < 2; ++pass) {
    NodeId d = b.sub(u, phi_inv);
    NodeId arg = b.clamp_min(b.div(b.mul(d, d), g2pt), 1.0);
    phi_inv = b.add(pin, b.mul(phit, b.ln(arg)));
  }

  // Depletion estimate: root of (u - phi)^2 = gamma^2 phi below u.
  NodeId half_g2 = b.mul(b.constant(0.5), gamma2);
  NodeId disc =
      b.clamp_min(b.add(b.mul(gamma2, u), b.mul(half_g2, half_g2)), 1e-30);
  NodeId phi_dep = b.sub(b.add(u, half_g2), b.sqrt(disc));

  // Accumulation estimate (u <= 0).  The physical root lies in (u, 0);
  // squaring the charge equation also planted mirror roots below u.  Two
  // complementary fixed points cover it: the log form
  // phi = -phi_t ln((u - phi)^2 / (gamma^2 phi_t)) contracts only while
  // the root sits further than 2 phi_t from u (deep accumulation), and
  // the square-root form phi = u + gamma sqrt(phi_t E(u)) is accurate
  // exactly when it sits closer (shallow accumulation, where the log
  // iterate would strand Newton on a mirror root).  Since
  // r(u) = -gamma^2 phi_t E(u), the correction is sqrt(-r(u)).  The
  // candidate with the smaller residual wins.
  NodeId acc_log = b.constant(0.0);
  for (int pass = 0; pass < 2; ++pass) {
    NodeId d = b.sub(u, acc_log);
    NodeId arg = b.clamp_min(b.div(b.mul(d, d), g2pt), 1.0);
    acc_log = b.neg(b.mul(phit, b.ln(arg)));
  }
  NodeId acc_sqrt =
      b.add(u, b.sqrt(b.clamp_min(b.neg(residual(u).first), 1e-300)));
  NodeId r_log = residual(acc_log).first;
  NodeId r_sqrt = residual(acc_sqrt).first;
  NodeId abs_log = b.select(r_log, r_log, b.neg(r_log));
  NodeId abs_sqrt = b.select(r_sqrt, r_sqrt, b.neg(r_sqrt));
  NodeId phi_acc = b.select(b.sub(abs_log, abs_sqrt), acc_sqrt, acc_log);

  // Inversion pins the depletion growth, so min() combines the u > 0 pair.
  NodeId phi = b.select(u, b.min(phi_dep, phi_inv), phi_acc);

  for (int it = 0; it < 15; ++it) {
    auto [r, rp] = residual(phi);
    // The 1e-30 shift keeps the flat-band point (r = rp = 0 at u = 0)
    // from dividing 0 by 0.
    NodeId step = b.div(r, b.sub(rp, b.constant(1e-30)));
    NodeId clamped = b.max(b.min(step, two), b.neg(two));
    phi = b.sub(phi, clamped);
  }

  auto [r_final, rp_final] = residual(phi);
  (void)rp_final;
  b.add_check(r_final, phi, 1e-9, label);
  return phi;
}

struct SpCurrentLeaves {
  NodeId tox, vfbc, na, scale, rd, lambda, theta, delta;
};

NodeId emit_sp_isim(GraphBuilder& b, const PhysicalConstants& c,
                    const SpCurrentLeaves& p, NodeId vgs, NodeId vds) {
  NodeId one = b.constant(1.0);
  NodeId phit = b.constant(c.phi_t);
  NodeId cox = b.div(b.constant(c.eps_ox), p.tox);
  NodeId na_si = b.mul(p.na, b.constant(1e6));  // cm^-3 -> m^-3
  NodeId gamma = b.sqrt(b.mul(b.constant(2.0 * c.eps_sic * c.k * c.T), na_si));
  NodeId gamma2 = b.mul(gamma, gamma);
  NodeId u = b.sub(vgs, p.vfbc);

  NodeId phi_s = emit_spe_solve(b, u, gamma, b.constant(0.0), c.phi_t,
                                "surface potential at the source end");

  // Saturation from the pinch-off potential phi_p = phi_t (1 + s^2), where
  // s is the positive root of Cox phi_t s^2 + gamma s - Cox u = 0 (inverted
  // charge extinguished).  phi_sD tracks roughly 2 phi_f, hence the half.
  NodeId cox2 = b.mul(cox, cox);
  NodeId disc = b.clamp_min(
      b.add(gamma2, b.mul(b.mul(b.constant(4.0), cox2), b.mul(phit, u))),
      1e-30);
  NodeId s = b.div(b.sub(b.sqrt(disc), gamma),
                   b.mul(b.constant(2.0), b.mul(cox, phit)));
  NodeId phi_p = b.mul(phit, b.add(one, b.mul(s, s)));
  NodeId vds_sat =
      b.clamp_min(b.mul(b.constant(0.5), b.sub(phi_p, phi_s)), 1e-6);

  NodeId scale_si = b.mul(p.scale, b.constant(1e-4));  // cm^2/V -> m^2/V

  int sd_pass = 0;
  auto isim_of = [&](NodeId vint) -> NodeId {
    NodeId r = b.clamp_min(b.div(vint, vds_sat), 1e-12);
    NodeId denom = b.pow(b.add(one, b.pow(r, p.delta)), b.div(one, p.delta));
    NodeId vds_mod = b.div(vint, denom);
    NodeId phi_d = emit_spe_solve(
        b, u, gamma, vds_mod, c.phi_t,
        "surface potential at the drain end (pass " +
            std::to_string(sd_pass++) + ")");
    NodeId xs = b.clamp_min(b.sub(b.div(phi_s, phit), one), 1e-12);
    NodeId xd = b.clamp_min(b.sub(b.div(phi_d, phit), one), 1e-12);
    NodeId term1 = b.mul(cox, b.mul(b.add(u, phit), b.sub(phi_d, phi_s)));
    NodeId term2 = b.mul(b.mul(b.constant(0.5), cox),
                         b.sub(b.mul(phi_d, phi_d), b.mul(phi_s, phi_s)));
    NodeId term3 = b.mul(b.mul(b.constant(2.0 / 3.0), b.mul(phit, gamma)),
                         b.sub(b.pow_const(xd, 1.5), b.pow_const(xs, 1.5)));
    NodeId term4 =
        b.mul(b.mul(phit, gamma), b.sub(b.sqrt(xd), b.sqrt(xs)));
    NodeId idd = b.add(b.sub(b.sub(term1, term2), term3), term4);
    NodeId gain = b.mul(scale_si, b.add(one, b.mul(p.lambda, vds)));
    return b.div(b.mul(gain, idd), b.add(one, b.mul(p.theta, vgs)));
  };

  // Series resistance at the drain: five fixed-point passes of
  // Vint = Vds - Isim RD, each re-solving phi_sD and IDD.
  NodeId isim = isim_of(vds);
  for (int pass = 0; pass < 5; ++pass) {
    NodeId vint = b.clamp_min(b.sub(vds, b.mul(isim, p.rd)), 1e-9);
    isim = isim_of(vint);
  }
  return isim;
}

struct CdsLeaves {
  NodeId ads, nd, vbi;
};

NodeId emit_cds(GraphBuilder& b, const PhysicalConstants& c,
                const CdsLeaves& p, NodeId vds) {
  NodeId nd_si = b.mul(p.nd, b.constant(1e6));
  NodeId denom = b.mul(b.constant(2.0), b.add(p.vbi, vds));
  NodeId inside = b.div(b.mul(b.constant(c.q * c.eps_sic), nd_si), denom);
  return b.mul(b.mul(p.ads, b.constant(1e-4)), b.sqrt(inside));
}

struct CgdLeaves {
  NodeId nd, coxd, agd, vfbd;
};

NodeId emit_cgd(GraphBuilder& b, const PhysicalConstants& c,
                const CgdLeaves& p, NodeId vgd, NodeId vds) {
  NodeId one = b.constant(1.0);
  NodeId phit = b.constant(c.phi_t);
  NodeId nd_si = b.mul(p.nd, b.constant(1e6));
  NodeId gamma = b.sqrt(b.mul(b.constant(2.0 * c.eps_sic * c.k * c.T), nd_si));

  // The n-doped JFET region depletes below flat band, so the overdrive
  // mirrors: u = VFBD - Vgd.
  NodeId u = b.sub(p.vfbd, vgd);
  NodeId phi_gd = emit_spe_solve(b, u, gamma, vds, c.phi_t,
                                 "surface potential under the gate-drain "
                                 "overlap");

  // Depletion capacitance with the inversion exponentials folded
  // (cexp = -(2 phi_f + Vds)/phi_t at phi_f = Vds).
  NodeId t = b.div(phi_gd, phit);
  NodeId cexp = b.neg(b.div(b.add(b.mul(b.constant(2.0), vds), vds), phit));
  NodeId ei = b.safe_exp(b.neg(t));
  NodeId em = b.safe_exp(b.add(t, cexp));
  NodeId e3 = b.safe_exp(cexp);
  NodeId num = b.add(b.sub(one, ei), b.sub(em, e3));
  NodeId inner = b.add(
      b.sub(b.add(b.mul(phit, ei), phi_gd), phit),
      b.sub(b.mul(phit, em), b.mul(b.add(phi_gd, phit), e3)));
  NodeId den = b.mul(b.constant(2.0), b.sqrt(b.clamp_min(inner, 1e-30)));
  NodeId per_area =
      b.mul(b.constant(std::sqrt(2.0 * c.q * c.eps_sic)), b.sqrt(nd_si));
  NodeId cdep =
      b.mul(b.mul(p.agd, b.constant(1e-4)), b.div(b.mul(per_area, num), den));
  return b.div(b.mul(p.coxd, cdep), b.add(p.coxd, cdep));
}

Graph build_nth_power_law_impl(const PhysicalConstants&) {
  GraphBuilder b;
  NodeId vth = b.param("VTH");
  NodeId k = b.param("K");
  NodeId m = b.param("M");
  NodeId j = b.param("J");
  NodeId n = b.param("N");
  NodeId lambda = b.param("LAMBDA");
  NodeId theta = b.param("THETA");
  NodeId delta = b.param("DELTA");
  NodeId vgs = b.input("Vgs");
  NodeId vds = b.input("Vds");

  NodeId one = b.constant(1.0);
  NodeId ov_raw = b.sub(vgs, vth);
  NodeId ov = b.clamp_min(ov_raw, 1e-9);  // below threshold Isim ~ 0
  NodeId vds_sat = b.mul(j, b.pow(ov, m));
  NodeId id_sat = b.mul(k, b.pow(ov, n));
  NodeId r = b.clamp_min(b.div(vds, vds_sat), 1e-12);
  NodeId denom = b.pow(b.add(one, b.pow(r, delta)), b.div(one, delta));
  NodeId vds_mod = b.div(vds, denom);
  NodeId tt = b.div(vds_mod, vds_sat);
  NodeId shape = b.mul(b.sub(b.constant(2.0), tt), tt);
  NodeId clm = b.add(one, b.mul(lambda, vds));
  NodeId mob = b.add(one, b.mul(theta, ov_raw));
  NodeId isim = b.mul(b.mul(b.mul(id_sat, shape), clm), mob);
  return b.build({isim});
}

Graph build_sp_current_impl(const PhysicalConstants& c) {
  GraphBuilder b;
  SpCurrentLeaves p;
  p.tox = b.param("TOX");
  p.vfbc = b.param("VFBC");
  p.na = b.param("NA");
  p.scale = b.param("SCALE");
  p.rd = b.param("RD");
  p.lambda = b.param("LAMBDA");
  p.theta = b.param("THETA");
  p.delta = b.param("DELTA");
  NodeId vgs = b.input("Vgs");
  NodeId vds = b.input("Vds");
  return b.build({emit_sp_isim(b, c, p, vgs, vds)});
}

Graph build_cds_impl(const PhysicalConstants& c) {
  GraphBuilder b;
  CdsLeaves p;
  p.ads = b.param("ADS");
  p.nd = b.param("ND");
  p.vbi = b.param("VBI");
  NodeId vds = b.input("Vds");
  return b.build({emit_cds(b, c, p, vds)});
}

Graph build_cgd_impl(const PhysicalConstants& c) {
  GraphBuilder b;
  CgdLeaves p;
  p.nd = b.param("ND");
  p.coxd = b.param("COXD");
  p.agd = b.param("AGD");
  p.vfbd = b.param("VFBD");
  NodeId vgd = b.input("Vgd");
  NodeId vds = b.input("Vds");
  return b.build({emit_cgd(b, c, p, vgd, vds)});
}

Graph build_spe_solver_impl(const PhysicalConstants& c) {
  GraphBuilder b;
  NodeId vg = b.param("VG");
  NodeId vfb = b.param("VFB");
  NodeId gamma = b.param("GAMMA");
  NodeId phif = b.param("PHIF");
  NodeId u = b.sub(vg, vfb);
  return b.build(
      {emit_spe_solve(b, u, gamma, phif, c.phi_t, "surface potential")});
}

Graph build_sp_multi_impl(const PhysicalConstants& c) {
  GraphBuilder b;
  SpCurrentLeaves cur;
  cur.tox = b.param("TOX");
  cur.vfbc = b.param("VFBC");
  cur.na = b.param("NA");
  cur.scale = b.param("SCALE");
  cur.rd = b.param("RD");
  cur.lambda = b.param("LAMBDA");
  cur.theta = b.param("THETA");
  cur.delta = b.param("DELTA");
  NodeId ads = b.param("ADS");
  NodeId nd = b.param("ND");
  NodeId coxd = b.param("COXD");
  NodeId agd = b.param("AGD");
  NodeId vfbd = b.param("VFBD");
  NodeId vgs = b.input("Vgs");
  NodeId vds = b.input("Vds");
  NodeId vgd = b.input("Vgd");

  NodeId isim = emit_sp_isim(b, c, cur, vgs, vds);

  // VBI from the doping levels (cm^-3 units cancel inside the log).
  NodeId phit = b.constant(c.phi_t);
  NodeId vbi =
      b.mul(phit, b.ln(b.div(b.mul(cur.na, nd), b.constant(c.n_i * c.n_i))));
  CdsLeaves cds{ads, nd, vbi};
  NodeId cds_out = emit_cds(b, c, cds, vds);

  CgdLeaves cgd{nd, coxd, agd, vfbd};
  NodeId cgd_out = emit_cgd(b, c, cgd, vgd, vds);

  return b.build({isim, cds_out, cgd_out});
}

std::vector<ModelInfo> make_registry() {
  std::vector<ModelInfo> reg;
  reg.push_back({"nth-power-law",
                 {"VTH", "K", "M", "J", "N", "LAMBDA", "THETA", "DELTA"},
                 {"Vgs", "Vds"},
                 {"iv"},
                 {{0.0, 10.0},
                  {1e-6, 1.0},
                  {0.5, 3.0},
                  {1e-3, 10.0},
                  {1.0, 6.0},
                  {0.0, 1.0},
                  {0.0, 1.0},
                  {0.1, 10.0}},
                 &build_nth_power_law_impl});
  reg.push_back({"sp-current",
                 {"TOX", "VFBC", "NA", "SCALE", "RD", "LAMBDA", "THETA",
                  "DELTA"},
                 {"Vgs", "Vds"},
                 {"iv"},
                 {{1e-9, 1e-6},
                  {-10.0, 10.0},
                  {1e15, 1e19},
                  {1e3, 1e9},
                  {0.0, 1.0},
                  {0.0, 1.0},
                  {0.0, 1.0},
                  {0.1, 10.0}},
                 &build_sp_current_impl});
  reg.push_back({"sp-cds",
                 {"ADS", "ND", "VBI"},
                 {"Vds"},
                 {"cds"},
                 {{1e-6, 10.0}, {1e13, 1e18}, {0.01, 5.0}},
                 &build_cds_impl});
  reg.push_back({"sp-cgd",
                 {"ND", "COXD", "AGD", "VFBD"},
                 {"Vgd", "Vds"},
                 {"cgd"},
                 {{1e13, 1e18}, {1e-12, 1e-6}, {1e-8, 1.0}, {-10.0, 10.0}},
                 &build_cgd_impl});
  reg.push_back({"sp-multi",
                 {"TOX", "VFBC", "NA", "SCALE", "RD", "LAMBDA", "THETA",
                  "DELTA", "ADS", "ND", "COXD", "AGD", "VFBD"},
                 {"Vgs", "Vds", "Vgd"},
                 {"iv", "cds", "cgd"},
                 {{1e-9, 1e-6},
                  {-10.0, 10.0},
                  {1e15, 1e19},
                  {1e3, 1e9},
                  {0.0, 1.0},
                  {0.0, 1.0},
                  {0.0, 1.0},
                  {0.1, 10.0},
                  {1e-6, 10.0},
                  {1e13, 1e18},
                  {1e-12, 1e-6},
                  {1e-8, 1.0},
                  {-10.0, 10.0}},
                 &build_sp_multi_impl});
  return reg;
}

const std::vector<ModelInfo>& registry() {
  static const std::vector<ModelInfo> reg = make_registry();
  return reg;
}

}  // namespace

Graph build_nth_power_law(const PhysicalConstants& c) {
  return build_nth_power_law_impl(c);
}
Graph build_sp_current(const PhysicalConstants& c) {
  return build_sp_current_impl(c);
}
Graph build_cds(const PhysicalConstants& c) { return build_cds_impl(c); }
Graph build_cgd(const PhysicalConstants& c) { return build_cgd_impl(c); }
Graph build_spe_solver(const PhysicalConstants& c) {
  return build_spe_solver_impl(c);
}
Graph build_sp_multi(const PhysicalConstants& c) {
  return build_sp_multi_impl(c);
}

const ModelInfo& model_info(const std::string& name) {
  for (const ModelInfo& m : registry()) {
    if (m.name == name) return m;
  }
  throw Error("unknown model: " + name);
}

std::vector<std::string> model_names() {
  std::vector<std::string> names;
  for (const ModelInfo& m : registry()) names.push_back(m.name);
  return names;
}

}  // namespace mosfit
