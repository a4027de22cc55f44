#include "mosfit/gradcalc.hpp"

#include <cmath>
#include <cstdlib>

#include "json.hpp"

namespace mosfit {

namespace {

double point_weight(Normalization norm, double meas) {
  if (norm == Normalization::PerPoint) {
    return std::max(std::fabs(meas), kNormFloor);
  }
  return 1.0;
}

double delta_for(const std::map<std::string, double>& deltas,
                 const std::string& name, double value) {
  auto it = deltas.find(name);
  if (it == deltas.end()) {
    return 1e-6 * std::max(1.0, std::fabs(value));
  }
  if (it->second == 0.0) {
    throw Error("zero finite-difference step for parameter " + name);
  }
  return it->second;
}

// Forward-only cost of one objective; each bias point is one model
// evaluation and one graph traversal.
double dataset_cost(const Graph& g, std::span<const double> params,
                    const Dataset& ds, Normalization norm, std::size_t output,
                    std::size_t& evals, Tape& tape) {
  const auto& inputs = g.input_names();
  double ss = 0.0;
  for (const DataPoint& p : ds.points) {
    forward(g, params, bind_inputs(inputs, ds.kind, p), tape);
    double r = (tape.outputs.at(output) - p.value) /
               point_weight(norm, p.value);
    ss += r * r;
    ++evals;
  }
  return std::sqrt(ss / static_cast<double>(ds.points.size()));
}

// Positions of the graph's parameters inside the unified name list.
std::vector<std::size_t> map_params(const Graph& g,
                                    const std::vector<std::string>& names) {
  std::vector<std::size_t> idx;
  idx.reserve(g.param_names().size());
  for (const std::string& pname : g.param_names()) {
    std::size_t at = names.size();
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (names[i] == pname) {
        at = i;
        break;
      }
    }
    if (at == names.size()) {
      throw Error("objective parameter " + pname +
                  " is missing from the unified parameter set");
    }
    idx.push_back(at);
  }
  return idx;
}

void check_objective(const Objective& obj) {
  if (obj.graph == nullptr || obj.dataset == nullptr) {
    throw Error("objective without a graph or dataset");
  }
  if (obj.dataset->points.empty()) {
    throw Error("objective with empty dataset");
  }
  if (!(obj.weight > 0.0)) throw Error("objective weight must be positive");
  if (!(obj.scale > 0.0)) throw Error("objective scale must be positive");
  if (obj.output >= obj.graph->outputs().size()) {
    throw Error("objective output index out of range");
  }
}

// Accumulates w/scale * grad(E_k) into the unified gradient via AD and
// returns w/scale * E_k.
double accumulate_objective_ad(const Objective& obj, Normalization norm,
                               std::span<const double> local,
                               const std::vector<std::size_t>& idx,
                               std::vector<double>& grad, std::size_t& evals,
                               std::size_t& traversals) {
  const Graph& g = *obj.graph;
  const Dataset& ds = *obj.dataset;
  const std::size_t m = ds.points.size();
  const auto& inputs = g.input_names();

  std::vector<Tape> tapes(m);
  std::vector<double> resid(m);
  std::vector<double> weights(m);
  double ss = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    const DataPoint& p = ds.points[j];
    forward(g, local, bind_inputs(inputs, ds.kind, p), tapes[j]);
    weights[j] = point_weight(norm, p.value);
    resid[j] = (tapes[j].outputs.at(obj.output) - p.value) / weights[j];
    ss += resid[j] * resid[j];
    ++evals;
    ++traversals;
  }
  double cost = std::sqrt(ss / static_cast<double>(m));

  std::vector<double> seeds(g.outputs().size(), 0.0);
  for (std::size_t j = 0; j < m; ++j) {
    // dE/dsim_j = resid_j / (w_j m E); zero at a perfect fit, where the
    // subgradient 0 is the sensible (and spec-exercised) choice.
    seeds[obj.output] =
        cost > 0.0
            ? obj.weight / obj.scale * resid[j] /
                  (weights[j] * static_cast<double>(m) * cost)
            : 0.0;
    std::vector<double> gj = backward(g, tapes[j], seeds);
    for (std::size_t i = 0; i < idx.size(); ++i) grad[idx[i]] += gj[i];
    ++traversals;
  }
  return obj.weight / obj.scale * cost;
}

}  // namespace

double rmse(std::span<const double> meas, std::span<const double> sim) {
  if (meas.size() != sim.size()) {
    throw Error("rmse length mismatch: " + std::to_string(meas.size()) +
                " vs " + std::to_string(sim.size()));
  }
  if (meas.empty()) throw Error("rmse of empty vectors");
  double ss = 0.0;
  for (std::size_t j = 0; j < meas.size(); ++j) {
    double r = meas[j] - sim[j];
    ss += r * r;
  }
  return std::sqrt(ss / static_cast<double>(meas.size()));
}

std::map<std::string, double> default_deltas(
    const std::vector<std::string>& names, std::span<const double> params) {
  if (names.size() != params.size()) {
    throw Error("default_deltas: names/params length mismatch");
  }
  std::map<std::string, double> deltas;
  for (std::size_t i = 0; i < names.size(); ++i) {
    deltas[names[i]] = 1e-6 * std::max(1.0, std::fabs(params[i]));
  }
  return deltas;
}

std::string GradResult::to_json() const {
  nlohmann::ordered_json j;
  j["cost"] = cost;
  nlohmann::ordered_json g = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < names.size(); ++i) g[names[i]] = grad[i];
  j["grad"] = g;
  j["model_eval_count"] = model_eval_count;
  j["graph_traversal_count"] = graph_traversal_count;
  return j.dump(2);
}

GradResult ad_gradient(const Graph& g, std::span<const double> params,
                       const Dataset& ds, Normalization norm,
                       std::size_t output) {
  if (ds.points.empty()) throw Error("ad_gradient on an empty dataset");
  GradResult out;
  out.names = g.param_names();
  out.grad.assign(out.names.size(), 0.0);

  Objective obj;
  obj.graph = &g;
  obj.dataset = &ds;
  obj.output = output;
  std::vector<std::size_t> idx(out.names.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  out.cost = accumulate_objective_ad(obj, norm, params, idx, out.grad,
                                     out.model_eval_count,
                                     out.graph_traversal_count);
  return out;
}

GradResult nd_gradient(const Graph& g, std::span<const double> params,
                       const std::map<std::string, double>& deltas,
                       const Dataset& ds, Normalization norm,
                       std::size_t output) {
  if (ds.points.empty()) throw Error("nd_gradient on an empty dataset");
  GradResult out;
  out.names = g.param_names();
  const std::size_t n = out.names.size();
  out.grad.assign(n, 0.0);

  std::vector<double> step(n);
  for (std::size_t i = 0; i < n; ++i) {
    step[i] = delta_for(deltas, out.names[i], params[i]);
  }

  // Point-major so each bias point is bound once and reused across the
  // base and the n shifted evaluations; per-perturbation sums accumulate
  // in point order, exactly as a perturbation-major loop would.
  Tape tape;
  const auto& inputs = g.input_names();
  std::vector<double> perturbed(params.begin(), params.end());
  std::vector<double> ss(n + 1, 0.0);
  for (const DataPoint& p : ds.points) {
    std::vector<double> in = bind_inputs(inputs, ds.kind, p);
    double w = point_weight(norm, p.value);
    forward(g, params, in, tape);
    double r = (tape.outputs.at(output) - p.value) / w;
    ss[0] += r * r;
    ++out.model_eval_count;
    for (std::size_t i = 0; i < n; ++i) {
      perturbed[i] = params[i] + step[i];
      forward(g, perturbed, in, tape);
      r = (tape.outputs.at(output) - p.value) / w;
      ss[i + 1] += r * r;
      ++out.model_eval_count;
      perturbed[i] = params[i];
    }
  }
  const double m = static_cast<double>(ds.points.size());
  out.cost = std::sqrt(ss[0] / m);
  for (std::size_t i = 0; i < n; ++i) {
    out.grad[i] = (std::sqrt(ss[i + 1] / m) - out.cost) / step[i];
  }
  out.graph_traversal_count = out.model_eval_count;
  return out;
}

Jacobian residual_jacobian(const Graph& g, std::span<const double> params,
                           const Dataset& ds, std::size_t output) {
  if (ds.points.empty()) throw Error("residual_jacobian on an empty dataset");
  Jacobian jac;
  const auto& inputs = g.input_names();
  std::vector<double> seeds(g.outputs().size(), 0.0);
  seeds.at(output) = 1.0;
  Tape tape;
  for (const DataPoint& p : ds.points) {
    forward(g, params, bind_inputs(inputs, ds.kind, p), tape);
    jac.sim.push_back(tape.outputs.at(output));
    jac.rows.push_back(backward(g, tape, seeds));
    ++jac.model_eval_count;
    jac.graph_traversal_count += 2;
  }
  return jac;
}

Jacobian residual_jacobian_nd(const Graph& g, std::span<const double> params,
                              const std::map<std::string, double>& deltas,
                              const Dataset& ds, std::size_t output) {
  if (ds.points.empty()) {
    throw Error("residual_jacobian_nd on an empty dataset");
  }
  Jacobian jac;
  const auto& inputs = g.input_names();
  const auto& names = g.param_names();
  Tape tape;
  for (const DataPoint& p : ds.points) {
    forward(g, params, bind_inputs(inputs, ds.kind, p), tape);
    jac.sim.push_back(tape.outputs.at(output));
    jac.rows.emplace_back(names.size(), 0.0);
    ++jac.model_eval_count;
  }
  std::vector<double> perturbed(params.begin(), params.end());
  for (std::size_t i = 0; i < names.size(); ++i) {
    double delta = delta_for(deltas, names[i], params[i]);
    perturbed[i] = params[i] + delta;
    for (std::size_t j = 0; j < ds.points.size(); ++j) {
      forward(g, perturbed, bind_inputs(inputs, ds.kind, ds.points[j]), tape);
      jac.rows[j][i] = (tape.outputs.at(output) - jac.sim[j]) / delta;
      ++jac.model_eval_count;
    }
    perturbed[i] = params[i];
  }
  jac.graph_traversal_count = jac.model_eval_count;
  return jac;
}

GradResult multi_objective_cost(const CostSpec& spec,
                                const std::vector<std::string>& names,
                                std::span<const double> values) {
  if (spec.objectives.empty()) throw Error("cost spec without objectives");
  if (names.size() != values.size()) {
    throw Error("multi_objective_cost: names/values length mismatch");
  }
  GradResult out;
  out.names = names;
  out.grad.assign(names.size(), 0.0);
  for (const Objective& obj : spec.objectives) {
    check_objective(obj);
    auto idx = map_params(*obj.graph, names);
    std::vector<double> local(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) local[i] = values[idx[i]];
    out.cost += accumulate_objective_ad(obj, spec.normalization, local, idx,
                                        out.grad, out.model_eval_count,
                                        out.graph_traversal_count);
  }
  return out;
}

GradResult multi_objective_cost_nd(
    const CostSpec& spec, const std::vector<std::string>& names,
    std::span<const double> values,
    const std::map<std::string, double>& deltas) {
  if (spec.objectives.empty()) throw Error("cost spec without objectives");
  if (names.size() != values.size()) {
    throw Error("multi_objective_cost_nd: names/values length mismatch");
  }
  GradResult out;
  out.names = names;
  out.grad.assign(names.size(), 0.0);

  struct Bound {
    Objective obj;
    std::vector<std::size_t> idx;
  };
  std::vector<Bound> bound;
  for (const Objective& obj : spec.objectives) {
    check_objective(obj);
    bound.push_back({obj, map_params(*obj.graph, names)});
  }

  Tape tape;
  auto total_cost = [&](std::span<const double> v) {
    double cost = 0.0;
    for (const Bound& b : bound) {
      std::vector<double> local(b.idx.size());
      for (std::size_t i = 0; i < b.idx.size(); ++i) local[i] = v[b.idx[i]];
      cost += b.obj.weight / b.obj.scale *
              dataset_cost(*b.obj.graph, local, *b.obj.dataset,
                           spec.normalization, b.obj.output,
                           out.model_eval_count, tape);
    }
    return cost;
  };

  double base = total_cost(values);
  out.cost = base;
  std::vector<double> perturbed(values.begin(), values.end());
  for (std::size_t i = 0; i < names.size(); ++i) {
    double delta = delta_for(deltas, names[i], values[i]);
    perturbed[i] = values[i] + delta;
    out.grad[i] = (total_cost(perturbed) - base) / delta;
    perturbed[i] = values[i];
  }
  out.graph_traversal_count = out.model_eval_count;
  return out;
}

CostValue multi_objective_cost_value(const CostSpec& spec,
                                     const std::vector<std::string>& names,
                                     std::span<const double> values) {
  if (spec.objectives.empty()) throw Error("cost spec without objectives");
  if (names.size() != values.size()) {
    throw Error("multi_objective_cost_value: names/values length mismatch");
  }
  CostValue out;
  Tape tape;
  for (const Objective& obj : spec.objectives) {
    check_objective(obj);
    auto idx = map_params(*obj.graph, names);
    std::vector<double> local(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) local[i] = values[idx[i]];
    double ek = dataset_cost(*obj.graph, local, *obj.dataset,
                             spec.normalization, obj.output,
                             out.model_eval_count, tape);
    out.objective_costs.push_back(ek);
    out.cost += obj.weight / obj.scale * ek;
  }
  return out;
}

}  // namespace mosfit
