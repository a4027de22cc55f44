#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mosfit/data.hpp"
#include "mosfit/graph.hpp"

namespace mosfit {

// Root-mean-square error sqrt(sum (meas_j - sim_j)^2 / m).
double rmse(std::span<const double> meas, std::span<const double> sim);

enum class Normalization { None, PerPoint };

// Per-point weights divide residuals by max(|meas_j|, kNormFloor) so every
// bias point contributes equally; the floor avoids dividing by ~0 A points.
inline constexpr double kNormFloor = 1e-6;

struct GradResult {
  double cost = 0.0;
  std::vector<std::string> names;
  std::vector<double> grad;  // aligned with names
  std::size_t model_eval_count = 0;
  std::size_t graph_traversal_count = 0;
  std::string to_json() const;
};

// The documented default step: 1e-6 * max(1, |p_i|).
std::map<std::string, double> default_deltas(
    const std::vector<std::string>& names, std::span<const double> params);

// Reverse-mode gradient: one forward and one seeded backward traversal per
// bias point (2m total), summed across the dataset.  No step sizes exist.
GradResult ad_gradient(const Graph& g, std::span<const double> params,
                       const Dataset& ds,
                       Normalization norm = Normalization::None,
                       std::size_t output = 0);

// Forward-difference gradient: a base cost plus one perturbed full-dataset
// cost per parameter ((1+n)m model evaluations).  Parameters missing from
// `deltas` fall back to the default step; an explicit zero is an error.
GradResult nd_gradient(const Graph& g, std::span<const double> params,
                       const std::map<std::string, double>& deltas,
                       const Dataset& ds,
                       Normalization norm = Normalization::None,
                       std::size_t output = 0);

struct Jacobian {
  std::vector<std::vector<double>> rows;  // m x n, row j = d sim_j / d p
  std::vector<double> sim;                // simulated values per bias
  std::size_t model_eval_count = 0;
  std::size_t graph_traversal_count = 0;
};

// One backward pass per bias point seeded with 1 on the chosen output.
Jacobian residual_jacobian(const Graph& g, std::span<const double> params,
                           const Dataset& ds, std::size_t output = 0);

// Forward-difference counterpart: base simulations plus one perturbed
// full-dataset pass per parameter ((1+n)m model evaluations).
Jacobian residual_jacobian_nd(const Graph& g, std::span<const double> params,
                              const std::map<std::string, double>& deltas,
                              const Dataset& ds, std::size_t output = 0);

struct Objective {
  const Graph* graph = nullptr;
  const Dataset* dataset = nullptr;
  double weight = 1.0;
  std::size_t output = 0;  // graph output predicting this dataset
  double scale = 1.0;      // E_k,scale, frozen by the caller for the run
};

struct CostSpec {
  Normalization normalization = Normalization::None;
  std::vector<Objective> objectives;
};

// cost = sum_k w_k E_k / E_k,scale over parameters unified by name; the
// gradient of shared leaves accumulates across objectives.
GradResult multi_objective_cost(const CostSpec& spec,
                                const std::vector<std::string>& names,
                                std::span<const double> values);

// The same composite cost differentiated by forward differences.
GradResult multi_objective_cost_nd(const CostSpec& spec,
                                   const std::vector<std::string>& names,
                                   std::span<const double> values,
                                   const std::map<std::string, double>& deltas);

struct CostValue {
  double cost = 0.0;                    // sum_k w_k E_k / E_k,scale
  std::vector<double> objective_costs;  // raw E_k before weight and scale
  std::size_t model_eval_count = 0;
};

// Forward-only composite cost (no gradient): what an optimizer evaluates
// when deciding whether to accept a trial step.
CostValue multi_objective_cost_value(const CostSpec& spec,
                                     const std::vector<std::string>& names,
                                     std::span<const double> values);

}  // namespace mosfit
