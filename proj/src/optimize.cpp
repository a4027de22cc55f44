#include "mosfit/optimize.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>

#include "nlohmann/json.hpp"

namespace mosfit {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::vector<double> values_in_order(const std::vector<std::string>& names,
                                    const ParamSet& init) {
  std::vector<double> vals;
  vals.reserve(names.size());
  for (const std::string& n : names) {
    auto it = init.values.find(n);
    if (it == init.values.end()) {
      throw Error("parameter '" + n + "' missing from initial values");
    }
    vals.push_back(it->second);
  }
  return vals;
}

std::vector<double> eta_in_order(const std::vector<std::string>& names,
                                 const ParamSet& init) {
  std::vector<double> eta;
  eta.reserve(names.size());
  for (std::size_t i = 0; i < names.size(); ++i) {
    auto it = init.eta.find(names[i]);
    double e = it != init.eta.end()
                   ? it->second
                   : std::fabs(init.values.at(names[i])) / 100.0;
    if (!(e > 0.0)) {
      throw Error("update rate for '" + names[i] +
                  "' must be positive; zero-valued parameters need an "
                  "explicit eta");
    }
    eta.push_back(e);
  }
  return eta;
}

struct BoundsVec {
  std::vector<double> lo, hi;
  bool any = false;
};

BoundsVec bounds_in_order(const std::vector<std::string>& names,
                          const ParamSet& init,
                          const std::vector<double>& vals) {
  BoundsVec b;
  b.lo.assign(names.size(), -std::numeric_limits<double>::infinity());
  b.hi.assign(names.size(), std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < names.size(); ++i) {
    auto it = init.bounds.find(names[i]);
    if (it == init.bounds.end()) continue;
    auto [lo, hi] = it->second;
    if (!(lo < hi)) {
      throw Error("bounds for '" + names[i] + "' must satisfy lo < hi");
    }
    if (vals[i] < lo || vals[i] > hi) {
      throw Error("initial value of '" + names[i] + "' violates its bounds");
    }
    b.lo[i] = lo;
    b.hi[i] = hi;
    b.any = true;
  }
  return b;
}

void clamp_to_bounds(const BoundsVec& b, std::vector<double>& vals) {
  if (!b.any) return;
  for (std::size_t i = 0; i < vals.size(); ++i) {
    vals[i] = std::clamp(vals[i], b.lo[i], b.hi[i]);
  }
}

// Give every objective of a multi-characteristic cost comparable magnitude:
// E_k,scale is frozen at the initial cost for the whole run.
void freeze_scales(CostSpec& spec, const std::vector<std::string>& names,
                   const std::vector<double>& vals, std::size_t& evals,
                   const OptimizeOptions& opts) {
  if (!opts.freeze_scales || spec.objectives.size() < 2) return;
  CostValue cv = multi_objective_cost_value(spec, names, vals);
  evals += cv.model_eval_count;
  for (std::size_t k = 0; k < spec.objectives.size(); ++k) {
    spec.objectives[k].scale =
        cv.objective_costs[k] > 0.0 ? cv.objective_costs[k] : 1.0;
  }
}

void check_stop(const StopRule& stop) {
  if (stop.n_max < 1) throw Error("StopRule.n_max must be at least 1");
}

// Gaussian elimination with partial pivoting; false when a pivot vanishes.
bool solve_linear(std::vector<std::vector<double>> a, std::vector<double> b,
                  std::vector<double>& x) {
  const std::size_t n = b.size();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r) {
      if (std::fabs(a[r][col]) > std::fabs(a[pivot][col])) pivot = r;
    }
    if (std::fabs(a[pivot][col]) < 1e-300) return false;
    std::swap(a[col], a[pivot]);
    std::swap(b[col], b[pivot]);
    for (std::size_t r = col + 1; r < n; ++r) {
      double f = a[r][col] / a[col][col];
      for (std::size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
      b[r] -= f * b[col];
    }
  }
  x.assign(n, 0.0);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t c = i + 1; c < n; ++c) s -= a[i][c] * x[c];
    x[i] = s / a[i][i];
  }
  return true;
}

double point_weight(Normalization norm, double meas) {
  return norm == Normalization::PerPoint ? std::max(std::fabs(meas),
                                                    kNormFloor)
                                         : 1.0;
}

std::vector<std::size_t> unified_indices(const Graph& g,
                                         const std::vector<std::string>& names) {
  std::vector<std::size_t> idx;
  for (const std::string& pname : g.param_names()) {
    auto it = std::find(names.begin(), names.end(), pname);
    if (it == names.end()) {
      throw Error("graph parameter '" + pname +
                  "' missing from the unified parameter list");
    }
    idx.push_back(static_cast<std::size_t>(it - names.begin()));
  }
  return idx;
}

// Residuals and Jacobian of the stacked weighted least-squares system whose
// squared norm is sum_k (w_k / s_k) E_k^2; the recorded cost stays the
// spec'd sum_k w_k E_k / s_k.
struct StackedSystem {
  double cost = 0.0;                       // sum_k w_k E_k / s_k
  std::vector<double> rho;                 // stacked scaled residuals
  std::vector<std::vector<double>> jac;    // rows align with rho, unified cols
  std::size_t model_eval_count = 0;
  std::size_t graph_traversal_count = 0;
};

StackedSystem build_system(const CostSpec& spec,
                           const std::vector<std::string>& names,
                           const std::vector<double>& vals,
                           const OptimizeOptions& opts) {
  StackedSystem sys;
  for (const Objective& obj : spec.objectives) {
    auto idx = unified_indices(*obj.graph, names);
    std::vector<double> local(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) local[i] = vals[idx[i]];

    Jacobian j = opts.engine == Engine::AD
                     ? residual_jacobian(*obj.graph, local, *obj.dataset,
                                         obj.output)
                     : residual_jacobian_nd(*obj.graph, local, opts.nd_deltas,
                                            *obj.dataset, obj.output);
    sys.model_eval_count += j.model_eval_count;
    sys.graph_traversal_count += j.graph_traversal_count;

    const std::size_t m = obj.dataset->points.size();
    const double ck = std::sqrt(obj.weight / obj.scale /
                                static_cast<double>(m));
    double ss = 0.0;
    for (std::size_t p = 0; p < m; ++p) {
      double w = point_weight(spec.normalization, obj.dataset->points[p].value);
      double r = (j.sim[p] - obj.dataset->points[p].value) / w;
      ss += r * r;
      sys.rho.push_back(ck * r);
      std::vector<double> row(names.size(), 0.0);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        row[idx[i]] = ck / w * j.rows[p][i];
      }
      sys.jac.push_back(std::move(row));
    }
    sys.cost += obj.weight / obj.scale *
                std::sqrt(ss / static_cast<double>(m));
  }
  return sys;
}

}  // namespace

const char* terminated_by_name(TerminatedBy t) {
  switch (t) {
    case TerminatedBy::MaxIter: return "max_iter";
    case TerminatedBy::TargetReached: return "target_reached";
    case TerminatedBy::Error: return "error";
  }
  return "error";
}

const char* engine_name(Engine e) { return e == Engine::AD ? "ad" : "nd"; }

Engine parse_engine(const std::string& s) {
  if (s == "ad") return Engine::AD;
  if (s == "nd") return Engine::ND;
  throw Error("unknown engine '" + s + "' (expected ad or nd)");
}

const char* optimizer_kind_name(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::GdAdaGrad: return "gd-adagrad";
    case OptimizerKind::GdPlain: return "gd-plain";
    case OptimizerKind::Lm: return "lm";
  }
  return "gd-adagrad";
}

OptimizerKind parse_optimizer_kind(const std::string& s) {
  if (s == "gd-adagrad") return OptimizerKind::GdAdaGrad;
  if (s == "gd-plain") return OptimizerKind::GdPlain;
  if (s == "lm") return OptimizerKind::Lm;
  throw Error("unknown optimizer '" + s +
              "' (expected gd-adagrad, gd-plain, or lm)");
}

FitReport run_extraction(OptimizerKind kind, const CostSpec& spec,
                         const std::vector<std::string>& names,
                         const ParamSet& init, const StopRule& stop,
                         OptimizeOptions opts) {
  switch (kind) {
    case OptimizerKind::GdAdaGrad:
      opts.mode = GdMode::AdaGrad;
      return gradient_descent(spec, names, init, stop, opts);
    case OptimizerKind::GdPlain:
      opts.mode = GdMode::Plain;
      return gradient_descent(spec, names, init, stop, opts);
    case OptimizerKind::Lm:
      return levenberg_marquardt(spec, names, init, stop, opts);
  }
  throw Error("unknown optimizer kind");
}

std::string FitReport::to_json() const {
  nlohmann::ordered_json j;
  j["terminated_by"] = terminated_by_name(terminated_by);
  if (terminated_by == TerminatedBy::Error) {
    j["error_message"] = error_message;
  }
  nlohmann::ordered_json params = nlohmann::ordered_json::object();
  for (const std::string& n : names) params[n] = final_params.at(n);
  j["final_params"] = params;
  j["iterations"] = nlohmann::ordered_json::array();
  for (const IterRecord& rec : iterations) {
    j["iterations"].push_back({{"iter", rec.iter},
                               {"cost", rec.cost},
                               {"elapsed_seconds", rec.elapsed_seconds},
                               {"model_eval_count", rec.model_eval_count},
                               {"graph_traversal_count",
                                rec.graph_traversal_count}});
  }
  return j.dump(2);
}

std::string FitReport::to_csv() const {
  std::string out = "elapsed_seconds,rmse\n";
  char buf[80];
  for (const IterRecord& rec : iterations) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g\n", rec.elapsed_seconds,
                  rec.cost);
    out += buf;
  }
  return out;
}

void adagrad_step(AdaGradState& state, std::span<const double> eta,
                  std::span<const double> grad, std::span<double> values,
                  double eps) {
  if (state.h.empty()) state.h.assign(grad.size(), 0.0);
  if (state.h.size() != grad.size() || eta.size() != grad.size() ||
      values.size() != grad.size()) {
    throw Error("adagrad_step: state/eta/grad/values sizes disagree");
  }
  for (std::size_t i = 0; i < grad.size(); ++i) {
    state.h[i] += grad[i] * grad[i];
    values[i] -= eta[i] * grad[i] / (std::sqrt(state.h[i]) + eps);
  }
}

FitReport gradient_descent(const CostSpec& spec,
                           const std::vector<std::string>& names,
                           const ParamSet& init, const StopRule& stop,
                           const OptimizeOptions& opts) {
  check_stop(stop);
  FitReport rep;
  rep.names = names;
  std::vector<double> vals = values_in_order(names, init);
  std::vector<double> eta = eta_in_order(names, init);
  BoundsVec bounds = bounds_in_order(names, init, vals);

  std::size_t evals = 0;
  std::size_t traversals = 0;
  CostSpec local = spec;
  freeze_scales(local, names, vals, evals, opts);
  traversals = evals;

  AdaGradState state;
  double elapsed = 0.0;
  for (std::size_t iter = 0;; ++iter) {
    Clock::time_point t0 = Clock::now();
    GradResult gr;
    try {
      gr = opts.engine == Engine::AD
               ? multi_objective_cost(local, names, vals)
               : multi_objective_cost_nd(local, names, vals, opts.nd_deltas);
    } catch (const Error& e) {
      rep.terminated_by = TerminatedBy::Error;
      rep.error_message = e.what();
      break;
    }
    elapsed += seconds_since(t0);
    evals += gr.model_eval_count;
    traversals += gr.graph_traversal_count;
    rep.iterations.push_back({iter, gr.cost, elapsed, evals, traversals});
    if (gr.cost <= stop.e_target) {
      rep.terminated_by = TerminatedBy::TargetReached;
      break;
    }
    if (iter + 1 == stop.n_max) {
      rep.terminated_by = TerminatedBy::MaxIter;
      break;
    }
    t0 = Clock::now();
    if (opts.mode == GdMode::AdaGrad) {
      adagrad_step(state, eta, gr.grad, vals);
    } else {
      for (std::size_t i = 0; i < vals.size(); ++i) {
        vals[i] -= eta[i] * gr.grad[i];
      }
    }
    clamp_to_bounds(bounds, vals);
    elapsed += seconds_since(t0);
  }
  for (std::size_t i = 0; i < names.size(); ++i) {
    rep.final_params[names[i]] = vals[i];
  }
  return rep;
}

FitReport levenberg_marquardt(const CostSpec& spec,
                              const std::vector<std::string>& names,
                              const ParamSet& init, const StopRule& stop,
                              const OptimizeOptions& opts) {
  check_stop(stop);
  FitReport rep;
  rep.names = names;
  std::vector<double> vals = values_in_order(names, init);
  BoundsVec bounds = bounds_in_order(names, init, vals);

  std::size_t evals = 0;
  std::size_t traversals = 0;
  CostSpec local = spec;
  freeze_scales(local, names, vals, evals, opts);
  traversals = evals;

  // Unit scaling keeps the normal matrix well conditioned across parameters
  // spanning many decades.
  std::vector<double> unit(names.size());
  for (std::size_t i = 0; i < names.size(); ++i) {
    unit[i] = std::max(std::fabs(vals[i]), 1e-30);
  }

  const std::size_t n = names.size();
  double mu = opts.lm_mu0;
  double elapsed = 0.0;
  for (std::size_t iter = 0;; ++iter) {
    Clock::time_point t0 = Clock::now();
    StackedSystem sys;
    try {
      sys = build_system(local, names, vals, opts);
    } catch (const Error& e) {
      rep.terminated_by = TerminatedBy::Error;
      rep.error_message = e.what();
      break;
    }
    elapsed += seconds_since(t0);
    evals += sys.model_eval_count;
    traversals += sys.graph_traversal_count;
    rep.iterations.push_back({iter, sys.cost, elapsed, evals, traversals});
    if (sys.cost <= stop.e_target) {
      rep.terminated_by = TerminatedBy::TargetReached;
      break;
    }
    if (iter + 1 == stop.n_max) {
      rep.terminated_by = TerminatedBy::MaxIter;
      break;
    }

    t0 = Clock::now();
    // Normal matrix and gradient in unit-scaled variables.
    std::vector<std::vector<double>> a(n, std::vector<double>(n, 0.0));
    std::vector<double> b(n, 0.0);
    for (std::size_t r = 0; r < sys.rho.size(); ++r) {
      for (std::size_t i = 0; i < n; ++i) {
        double ji = sys.jac[r][i] * unit[i];
        b[i] -= ji * sys.rho[r];
        for (std::size_t c = i; c < n; ++c) {
          a[i][c] += ji * sys.jac[r][c] * unit[c];
        }
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < i; ++c) a[i][c] = a[c][i];
    }

    bool accepted = false;
    int escalations = 0;
    std::string failure;
    while (!accepted) {
      std::vector<std::vector<double>> damped = a;
      for (std::size_t i = 0; i < n; ++i) damped[i][i] += mu * a[i][i];
      std::vector<double> dx;
      bool solvable = solve_linear(damped, b, dx);
      double trial_cost = std::numeric_limits<double>::infinity();
      std::vector<double> trial;
      if (solvable) {
        trial = vals;
        for (std::size_t i = 0; i < n; ++i) trial[i] += dx[i] * unit[i];
        clamp_to_bounds(bounds, trial);
        try {
          CostValue cv = multi_objective_cost_value(local, names, trial);
          evals += cv.model_eval_count;
          traversals += cv.model_eval_count;
          trial_cost = cv.cost;
        } catch (const Error&) {
          // Trial point left the model's domain: treat as a rejected step.
        }
      }
      if (solvable && trial_cost < sys.cost) {
        vals = std::move(trial);
        mu = std::max(mu * 0.5, 1e-15);
        accepted = true;
      } else {
        mu *= 2.0;
        if (++escalations > opts.lm_max_escalations) {
          failure = solvable ? "no cost-reducing step after " +
                                   std::to_string(opts.lm_max_escalations) +
                                   " damping escalations"
                             : "singular normal matrix after " +
                                   std::to_string(opts.lm_max_escalations) +
                                   " damping escalations";
          break;
        }
      }
    }
    elapsed += seconds_since(t0);
    if (!accepted) {
      rep.terminated_by = TerminatedBy::Error;
      rep.error_message = failure;
      break;
    }
  }
  for (std::size_t i = 0; i < names.size(); ++i) {
    rep.final_params[names[i]] = vals[i];
  }
  return rep;
}

}  // namespace mosfit
