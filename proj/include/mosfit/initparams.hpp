#pragma once

#include <map>
#include <string>
#include <utility>

#include "mosfit/data.hpp"
#include "mosfit/models.hpp"

namespace mosfit {

class InitError : public Error {
 public:
  using Error::Error;
};

enum class Provenance { MeasuredSlope, Default, DerivedEquation };

const char* provenance_name(Provenance p);

// Initial parameter values with a record of where each one came from.
struct InitEstimate {
  std::map<std::string, double> params;
  std::map<std::string, Provenance> provenance;

  void set(const std::string& name, double value, Provenance p);
  void merge(const InitEstimate& other);
  std::string to_json() const;
};

// LAMBDA from the slope/intercept ratio of a least-squares line through the
// saturation segment (top 40% of the Vds range) at the highest Vgs; RD from
// the inverse slope of the near-origin segment (Vds <= 2 V).  Fewer than 3
// points in either segment is an error.
std::pair<double, double> estimate_lambda_rd(const Dataset& iv);

// Gain (SCALE) from the saturation-region Id-Vgs slope, calibrated against
// the surface-potential model evaluated at probe parameters; THETA from the
// curvature of the linear-region Id-Vgs slice.  Slices need >= 4 Vgs points.
std::pair<double, double> estimate_k_theta(
    const Dataset& iv, const PhysicalConstants& c = {});

// VFBC = the gate voltage where Cgs starts to bend: the maximum second
// difference of the 3-point-smoothed curve.  A flat curve has no knee.
double estimate_vfbc(const Dataset& cgs);

struct CapChain {
  double coxd = 0.0;
  double vfbd = 0.0;
  double agd = 0.0;  // cm^2
  double nd = 0.0;   // cm^-3
  double na = 0.0;   // cm^-3
  double vbi = 0.0;  // echoed configuration value
  double ads = 0.0;  // cm^2
};

// COXD from the Cgd accumulation plateau, VFBD from the plateau departure,
// AGD from the oxide-capacitor relation, ND by inverting the PN-junction
// depletion capacitance at the deepest depletion bias, NA from the built-in
// potential equation, ADS by inverting the Cds expression at the largest
// Vds.  VBI comes from configuration (body-diode data is out of scope).
CapChain estimate_cap_chain(const Dataset& cgd, const Dataset& cds,
                            const PhysicalConstants& c, double tox,
                            double vbi = 2.5);

// The documented assumptions that need no data: TOX = 50 nm, DELTA = 0.8.
InitEstimate default_seed();

// Run every estimator and merge the results into a full 13-parameter
// starting point for the surface-potential model (plus the VBI setting).
InitEstimate estimate_all(const Dataset& iv, const Dataset& cgs,
                          const Dataset& cgd, const Dataset& cds,
                          const PhysicalConstants& c = {}, double vbi = 2.5);

}  // namespace mosfit
