#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mosfit/gradcalc.hpp"

namespace mosfit {

enum class Engine { AD, ND };

const char* engine_name(Engine e);
Engine parse_engine(const std::string& s);  // "ad" | "nd"

enum class GdMode { AdaGrad, Plain };

// Initial point plus optional per-parameter update rates and box bounds.
// Rates default to |p_init|/100; a zero-valued parameter therefore needs an
// explicit rate.
struct ParamSet {
  std::map<std::string, double> values;
  std::map<std::string, double> eta;
  std::map<std::string, std::pair<double, double>> bounds;
};

struct StopRule {
  std::size_t n_max = 1000;
  double e_target = 0.0;
};

struct IterRecord {
  std::size_t iter = 0;
  double cost = 0.0;
  double elapsed_seconds = 0.0;       // cumulative gradient+update wall time
  std::size_t model_eval_count = 0;   // cumulative
  std::size_t graph_traversal_count = 0;
};

enum class TerminatedBy { MaxIter, TargetReached, Error };

const char* terminated_by_name(TerminatedBy t);

struct FitReport {
  std::vector<std::string> names;
  std::vector<IterRecord> iterations;
  std::map<std::string, double> final_params;
  TerminatedBy terminated_by = TerminatedBy::Error;
  std::string error_message;  // set only when terminated_by == Error

  std::string to_json() const;
  // Two columns for RMSE-vs-time plots: "elapsed_seconds,rmse".
  std::string to_csv() const;
};

// Squared-gradient accumulator, one slot per parameter, zero-initialized.
struct AdaGradState {
  std::vector<double> h;
};

// h_i += g_i^2, then p_i -= eta_i * g_i / (sqrt(h_i) + eps).  An empty
// state initializes itself to zeros.
void adagrad_step(AdaGradState& state, std::span<const double> eta,
                  std::span<const double> grad, std::span<double> values,
                  double eps = 1e-8);

struct OptimizeOptions {
  Engine engine = Engine::AD;
  GdMode mode = GdMode::AdaGrad;
  // Forward-difference step overrides for the ND engine (name -> delta);
  // parameters not listed use the default 1e-6 * max(1, |p|).
  std::map<std::string, double> nd_deltas;
  double lm_mu0 = 1e-3;
  int lm_max_escalations = 60;
  // Freeze E_k,scale at the initial cost of each objective so multi-
  // characteristic terms enter the sum with comparable magnitude.
  bool freeze_scales = true;
};

// Alg.-1 loop: evaluate the gradient, record (iter, cost, elapsed), stop on
// target or iteration budget, otherwise update (plain or AdaGrad) and clamp
// to bounds.  A gradient-engine error terminates with the partial trace.
FitReport gradient_descent(const CostSpec& spec,
                           const std::vector<std::string>& names,
                           const ParamSet& init, const StopRule& stop,
                           const OptimizeOptions& opts = {});

// Levenberg-Marquardt on the stacked weighted residuals: solves
// (J^T J + mu * diag(J^T J)) dx = -J^T r in unit-scaled variables, halving
// mu on acceptance and doubling on rejection; records accepted iterations.
FitReport levenberg_marquardt(const CostSpec& spec,
                              const std::vector<std::string>& names,
                              const ParamSet& init, const StopRule& stop,
                              const OptimizeOptions& opts = {});

enum class OptimizerKind { GdAdaGrad, GdPlain, Lm };

const char* optimizer_kind_name(OptimizerKind k);
OptimizerKind parse_optimizer_kind(const std::string& s);  // throws Error

// Dispatches to the optimizer selected by `kind` (the GdMode in `opts` is
// overridden for the gradient-descent kinds).
FitReport run_extraction(OptimizerKind kind, const CostSpec& spec,
                         const std::vector<std::string>& names,
                         const ParamSet& init, const StopRule& stop,
                         OptimizeOptions opts = {});

}  // namespace mosfit
