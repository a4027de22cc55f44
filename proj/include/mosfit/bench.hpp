#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <utility>

#include "mosfit/data.hpp"
#include "mosfit/optimize.hpp"

namespace mosfit {

struct BenchResult {
  Engine engine = Engine::AD;
  std::string model;
  std::size_t n_params = 0;
  std::size_t m_points = 0;
  double wall_seconds_per_gradient = 0.0;  // median over the repetitions
  std::size_t repetitions = 0;
  double speedup_vs_nd = 0.0;  // t_ND / t_AD; filled on the AD row only

  std::string to_json() const;
  static std::string csv_header();
  std::string csv_row() const;
};

/// Times one full-dataset gradient per engine on the named model: a warm-up
/// pass is discarded, then the median of `repetitions` (>= 5) timed runs is
/// taken, single-threaded.  The evaluation-count law is asserted on every
/// run: 2m traversals for AD, (1+n)m model evaluations for ND.  Returns the
/// {AD, ND} pair.
std::pair<BenchResult, BenchResult> bench_gradient(
    const std::string& model_name, const std::map<std::string, double>& params,
    const Dataset& ds, std::size_t repetitions = 5);

struct ExtractionBench {
  FitReport ad;
  FitReport nd;
};

/// Runs the same extraction twice with identical init, stop rule, and data,
/// once per gradient engine, for RMSE-vs-time comparisons.
ExtractionBench bench_extraction(const std::string& model_name,
                                 OptimizerKind optimizer, const ParamSet& init,
                                 const Dataset& ds, const StopRule& stop);

}  // namespace mosfit
