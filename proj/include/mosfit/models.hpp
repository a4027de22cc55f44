#pragma once

#include <string>
#include <vector>

#include "mosfit/graph.hpp"

namespace mosfit {

/// Table IV values; phi_t is the printed 0.026 V, not recomputed from k, T, q.
struct PhysicalConstants {
  double k = 1.38e-23;        // J/K
  double q = 1.60e-19;        // C
  double T = 298.0;           // K
  double phi_t = 0.026;       // V
  double eps_sic = 9.7 * 8.85e-12;  // F/m
  double eps_ox = 3.9 * 8.85e-12;   // F/m
  double n_i = 4.82e15;       // cm^-3
};

/// Drain current of the N-th-power-law model.
/// Params (in order): VTH K M J N LAMBDA THETA DELTA; inputs Vgs, Vds.
Graph build_nth_power_law(const PhysicalConstants& c = {});

/// Drain current of the surface-potential-based model.
/// Params: TOX VFBC NA SCALE RD LAMBDA THETA DELTA; inputs Vgs, Vds.
/// NA is in cm^-3 and SCALE in cm^2/V as in the parameter tables; the
/// graph converts to SI internally.
Graph build_sp_current(const PhysicalConstants& c = {});

/// Drain-source junction capacitance. Params: ADS ND VBI; input Vds.
/// ADS in cm^2, ND in cm^-3.
Graph build_cds(const PhysicalConstants& c = {});

/// Gate-drain capacitance (oxide in series with the depletion MOS
/// capacitance). Params: ND COXD AGD VFBD; inputs Vgd, Vds.
Graph build_cgd(const PhysicalConstants& c = {});

/// Standalone surface-potential solve of Eq. (13): params VG, VFB,
/// GAMMA, PHIF (params rather than inputs so gradients are reachable);
/// output phi_s.
Graph build_spe_solver(const PhysicalConstants& c = {});

/// Joint current + capacitance graph for simultaneous extraction.
/// 13 params (TOX VFBC NA SCALE RD LAMBDA THETA DELTA ADS ND COXD AGD
/// VFBD, VBI derived in-graph from NA and ND); inputs Vgs, Vds, Vgd;
/// outputs Isim, Cds, Cgd.
Graph build_sp_multi(const PhysicalConstants& c = {});

struct ParamBound {
  double lo;
  double hi;
};

struct ModelInfo {
  std::string name;
  std::vector<std::string> params;
  std::vector<std::string> inputs;
  /// Dataset kinds consumed, aligned with graph outputs: the k-th kind
  /// is fitted against the k-th output.
  std::vector<std::string> dataset_kinds;
  std::vector<ParamBound> bounds;
  Graph (*build)(const PhysicalConstants&);
};

/// Registry lookup; throws Error for an unknown name.
const ModelInfo& model_info(const std::string& name);
std::vector<std::string> model_names();

}  // namespace mosfit
