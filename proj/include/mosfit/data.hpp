#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mosfit/graph.hpp"
#include "mosfit/models.hpp"

namespace mosfit {

enum class DatasetKind { IV, Cds, Cgd, Cgs };

std::string kind_name(DatasetKind kind);
DatasetKind kind_from_name(const std::string& name);

struct DataPoint {
  double vgs = 0.0;  // swept gate voltage; holds Vgd for Cgd datasets
  double vds = 0.0;
  double value = 0.0;  // A for IV, F for capacitances
};

struct Dataset {
  DatasetKind kind = DatasetKind::IV;
  std::vector<DataPoint> points;
  std::string device = "synthetic";
  double temperature = 298.0;
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& msg, int line = 0)
      : Error(msg), line_(line) {}
  int line() const noexcept { return line_; }

 private:
  int line_;
};

struct Range {
  double start = 0.0;
  double stop = 0.0;
  double step = 1.0;
  std::size_t count() const;
};

struct SweepSpec {
  Range vgs;  // the gate sweep (Vgd for Cgd characteristics)
  Range vds;
  std::size_t size() const { return vgs.count() * vds.count(); }
  // Gate-major enumeration of (gate voltage, vds) bias pairs.
  std::vector<std::pair<double, double>> grid() const;
};

// "paper" (I-V, 5 x 25), "paper-cds" (300 points, Vds 0..50),
// "paper-cgd" (300 points, Vgd -10..0 at Vds = 10).
SweepSpec named_sweep(const std::string& name);
// Accepts a named sweep or "start:stop:step,start:stop:step" (gate,vds).
SweepSpec parse_sweep(const std::string& text);

Dataset load_csv(const std::string& path);
void save_csv(const Dataset& ds, const std::string& path);
void validate(const Dataset& ds);

// Evaluates the named model over the sweep and perturbs each value by
// value * (1 + noise_rel * z) with z drawn from a seeded unit Gaussian.
Dataset synth(const std::string& model_name, const std::vector<double>& params,
              const SweepSpec& sweep, double noise_rel, std::uint64_t seed);

// Maps a data point onto a graph's input vector: "Vgs"/"Vds"/"Vgd" by name,
// with the unswept gate voltage bound to 0.
std::vector<double> bind_inputs(const std::vector<std::string>& input_names,
                                DatasetKind kind, const DataPoint& p);
// Index of the graph output that predicts this dataset kind.
std::size_t output_for_kind(const ModelInfo& info, DatasetKind kind);

// Ground-truth record written alongside each synthetic dataset.
struct SynthManifest {
  std::string model;
  std::vector<std::pair<std::string, double>> params;  // model order
  SweepSpec sweep;
  double noise_rel = 0.0;
  std::uint64_t seed = 0;
  std::string device = "synthetic";
  double temperature = 298.0;
};

void save_manifest(const SynthManifest& m, const std::string& path);
SynthManifest load_manifest(const std::string& path);

}  // namespace mosfit
