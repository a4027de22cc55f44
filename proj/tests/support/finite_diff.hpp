#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "mosfit/graph.hpp"

namespace testsupport {

using ScalarFn = std::function<double(const std::vector<double>&)>;

/// Central finite differences with per-coordinate relative step, so
/// parameters spanning twenty orders of magnitude all perturb
/// proportionally.
inline std::vector<double> central_fd(const ScalarFn& f,
                                      const std::vector<double>& p,
                                      double rel = 1e-6) {
  std::vector<double> g(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    double h = rel * (p[i] != 0.0 ? std::fabs(p[i]) : 1.0);
    std::vector<double> lo = p, hi = p;
    hi[i] += h;
    lo[i] -= h;
    g[i] = (f(hi) - f(lo)) / (2.0 * h);
  }
  return g;
}

/// Reverse-mode gradient of a single-output graph at fixed inputs.
inline std::vector<double> graph_gradient(const mosfit::Graph& g,
                                          const std::vector<double>& params,
                                          const std::vector<double>& inputs) {
  mosfit::Tape tape;
  mosfit::forward(g, params, inputs, tape);
  const double seed[] = {1.0};
  return mosfit::backward(g, tape, seed);
}

/// |got-want| / max(|want|, floor)
inline double rel_diff(double got, double want, double floor = 1e-12) {
  return std::fabs(got - want) / std::max(std::fabs(want), floor);
}

}  // namespace testsupport
