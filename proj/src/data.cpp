#include "mosfit/data.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"

namespace mosfit {

namespace {

using ordered_json = nlohmann::ordered_json;

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

double parse_cell(const std::string& cell, const char* column,
                  const std::string& path, int lineno) {
  const char* begin = cell.c_str();
  char* end = nullptr;
  double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0') {
    throw DataError(path + " line " + std::to_string(lineno) +
                        ": non-numeric " + column + " cell '" + cell + "'",
                    lineno);
  }
  return v;
}

// Deterministic unit Gaussian (Box-Muller over the raw 64-bit stream), so
// a manifest's seed reproduces the dataset on any toolchain.
class GaussianRng {
 public:
  explicit GaussianRng(std::uint64_t seed) : rng_(seed) {}

  double next() {
    double u1 = unit(rng_());
    double u2 = unit(rng_());
    if (u1 < 1e-300) u1 = 1e-300;
    constexpr double two_pi = 6.283185307179586;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
  }

 private:
  static double unit(std::uint64_t x) {
    return static_cast<double>(x >> 11) * 0x1.0p-53;
  }
  std::mt19937_64 rng_;
};

Range parse_range(const std::string& text, const std::string& whole) {
  std::vector<double> vals;
  std::string cur;
  for (char c : text + ":") {
    if (c == ':') {
      const char* begin = cur.c_str();
      char* end = nullptr;
      double v = std::strtod(begin, &end);
      if (end == begin || *end != '\0') {
        throw DataError("bad sweep '" + whole + "': non-numeric range part '" +
                        cur + "'");
      }
      vals.push_back(v);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (vals.size() != 3) {
    throw DataError("bad sweep '" + whole +
                    "': each range needs start:stop:step");
  }
  return Range{vals[0], vals[1], vals[2]};
}

}  // namespace

std::string kind_name(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::IV: return "iv";
    case DatasetKind::Cds: return "cds";
    case DatasetKind::Cgd: return "cgd";
    case DatasetKind::Cgs: return "cgs";
  }
  throw Error("invalid dataset kind");
}

DatasetKind kind_from_name(const std::string& name) {
  if (name == "iv") return DatasetKind::IV;
  if (name == "cds") return DatasetKind::Cds;
  if (name == "cgd") return DatasetKind::Cgd;
  if (name == "cgs") return DatasetKind::Cgs;
  throw Error("unknown dataset kind '" + name + "'");
}

std::size_t Range::count() const {
  if (!(step > 0.0)) throw DataError("sweep step must be positive");
  if (stop < start) throw DataError("sweep stop must not precede start");
  return static_cast<std::size_t>(std::floor((stop - start) / step + 1e-9)) +
         1;
}

std::vector<std::pair<double, double>> SweepSpec::grid() const {
  std::size_t ng = vgs.count();
  std::size_t nd = vds.count();
  std::vector<std::pair<double, double>> points;
  points.reserve(ng * nd);
  for (std::size_t i = 0; i < ng; ++i) {
    double vg = vgs.start + static_cast<double>(i) * vgs.step;
    for (std::size_t j = 0; j < nd; ++j) {
      double vd = vds.start + static_cast<double>(j) * vds.step;
      points.emplace_back(vg, vd);
    }
  }
  return points;
}

SweepSpec named_sweep(const std::string& name) {
  if (name == "paper") {
    return SweepSpec{{6.0, 14.0, 2.0}, {2.0, 50.0, 2.0}};
  }
  if (name == "paper-cds") {
    return SweepSpec{{0.0, 0.0, 1.0}, {0.0, 50.0, 50.0 / 299.0}};
  }
  if (name == "paper-cgd") {
    return SweepSpec{{-10.0, 0.0, 10.0 / 299.0}, {10.0, 10.0, 1.0}};
  }
  throw DataError("unknown sweep name '" + name + "'");
}

SweepSpec parse_sweep(const std::string& text) {
  if (text.find(':') == std::string::npos) return named_sweep(text);
  auto halves = split_commas(text);
  if (halves.size() != 2) {
    throw DataError("bad sweep '" + text +
                    "': expected gate-range,vds-range or a sweep name");
  }
  SweepSpec s{parse_range(halves[0], text), parse_range(halves[1], text)};
  s.size();  // validate both ranges eagerly
  return s;
}

Dataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) {
    throw DataError(path + " line 1: empty file, header row required", 1);
  }
  line = strip_cr(line);
  if (line != "kind,vgs,vds,value") {
    throw DataError(path +
                        " line 1: missing column, header must be "
                        "\"kind,vgs,vds,value\"",
                    1);
  }

  Dataset ds;
  bool first = true;
  std::set<std::pair<double, double>> seen;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    line = strip_cr(line);
    if (line.empty()) continue;
    auto fields = split_commas(line);
    if (fields.size() != 4) {
      throw DataError(path + " line " + std::to_string(lineno) +
                          ": expected 4 fields, got " +
                          std::to_string(fields.size()),
                      lineno);
    }
    DatasetKind kind;
    try {
      kind = kind_from_name(fields[0]);
    } catch (const Error&) {
      throw DataError(path + " line " + std::to_string(lineno) +
                          ": unknown dataset kind '" + fields[0] + "'",
                      lineno);
    }
    if (first) {
      ds.kind = kind;
      first = false;
    } else if (kind != ds.kind) {
      throw DataError(path + " line " + std::to_string(lineno) +
                          ": mixed dataset kinds in one file",
                      lineno);
    }
    DataPoint p;
    p.vgs = parse_cell(fields[1], "vgs", path, lineno);
    p.vds = parse_cell(fields[2], "vds", path, lineno);
    p.value = parse_cell(fields[3], "value", path, lineno);
    if (!std::isfinite(p.vgs) || !std::isfinite(p.vds) ||
        !std::isfinite(p.value)) {
      throw DataError(path + " line " + std::to_string(lineno) +
                          ": non-finite value",
                      lineno);
    }
    if (ds.kind == DatasetKind::IV && p.value < 0.0) {
      throw DataError(path + " line " + std::to_string(lineno) +
                          ": negative current",
                      lineno);
    }
    if (!seen.insert({p.vgs, p.vds}).second) {
      throw DataError(path + " line " + std::to_string(lineno) +
                          ": duplicate bias point (" + fmt17(p.vgs) + ", " +
                          fmt17(p.vds) + ")",
                      lineno);
    }
    ds.points.push_back(p);
  }
  return ds;
}

void save_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << "kind,vgs,vds,value\n";
  std::string tag = kind_name(ds.kind);
  for (const DataPoint& p : ds.points) {
    out << tag << ',' << fmt17(p.vgs) << ',' << fmt17(p.vds) << ','
        << fmt17(p.value) << '\n';
  }
  if (!out) throw DataError("write to '" + path + "' failed");
}

void validate(const Dataset& ds) {
  std::set<std::pair<double, double>> seen;
  for (std::size_t i = 0; i < ds.points.size(); ++i) {
    const DataPoint& p = ds.points[i];
    if (!std::isfinite(p.vgs) || !std::isfinite(p.vds) ||
        !std::isfinite(p.value)) {
      throw DataError("point " + std::to_string(i) + ": non-finite value");
    }
    if (ds.kind == DatasetKind::IV && p.value < 0.0) {
      throw DataError("point " + std::to_string(i) + ": negative current");
    }
    if (!seen.insert({p.vgs, p.vds}).second) {
      throw DataError("point " + std::to_string(i) + ": duplicate bias (" +
                      fmt17(p.vgs) + ", " + fmt17(p.vds) + ")");
    }
  }
}

Dataset synth(const std::string& model_name, const std::vector<double>& params,
              const SweepSpec& sweep, double noise_rel, std::uint64_t seed) {
  const ModelInfo& info = model_info(model_name);
  if (params.size() != info.params.size()) {
    throw DataError("model '" + model_name + "' takes " +
                    std::to_string(info.params.size()) + " parameters, got " +
                    std::to_string(params.size()));
  }
  if (!(noise_rel >= 0.0)) throw DataError("noise_rel must be >= 0");
  if (info.dataset_kinds.size() != 1) {
    throw DataError("model '" + model_name +
                    "' produces several characteristics; synthesize each one "
                    "with its single-output model");
  }

  Dataset ds;
  ds.kind = kind_from_name(info.dataset_kinds[0]);
  Graph g = info.build({});
  GaussianRng gauss(seed);
  Tape tape;
  for (auto [vg, vd] : sweep.grid()) {
    DataPoint p{vg, vd, 0.0};
    forward(g, params, bind_inputs(info.inputs, ds.kind, p), tape);
    double value = tape.outputs.at(0);
    value *= 1.0 + noise_rel * gauss.next();
    if (ds.kind == DatasetKind::IV && value < 0.0) value = 0.0;
    p.value = value;
    ds.points.push_back(p);
  }
  validate(ds);
  return ds;
}

std::vector<double> bind_inputs(const std::vector<std::string>& input_names,
                                DatasetKind kind, const DataPoint& p) {
  std::vector<double> in;
  in.reserve(input_names.size());
  for (const std::string& name : input_names) {
    if (name == "Vds") {
      in.push_back(p.vds);
    } else if (name == "Vgs") {
      in.push_back(kind == DatasetKind::Cgd ? 0.0 : p.vgs);
    } else if (name == "Vgd") {
      in.push_back(kind == DatasetKind::Cgd ? p.vgs : 0.0);
    } else {
      throw Error("no binding rule for model input '" + name + "'");
    }
  }
  return in;
}

std::size_t output_for_kind(const ModelInfo& info, DatasetKind kind) {
  std::string tag = kind_name(kind);
  for (std::size_t i = 0; i < info.dataset_kinds.size(); ++i) {
    if (info.dataset_kinds[i] == tag) return i;
  }
  throw Error("model '" + info.name + "' has no output for '" + tag +
              "' data");
}

void save_manifest(const SynthManifest& m, const std::string& path) {
  ordered_json j;
  j["model"] = m.model;
  ordered_json params = ordered_json::object();
  for (const auto& [name, value] : m.params) params[name] = value;
  j["params"] = params;
  j["sweep"] = {{"vgs", {m.sweep.vgs.start, m.sweep.vgs.stop, m.sweep.vgs.step}},
                {"vds", {m.sweep.vds.start, m.sweep.vds.stop, m.sweep.vds.step}}};
  j["noise_rel"] = m.noise_rel;
  j["seed"] = m.seed;
  j["device"] = m.device;
  j["temperature"] = m.temperature;
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << j.dump(2) << '\n';
  if (!out) throw DataError("write to '" + path + "' failed");
}

SynthManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  ordered_json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw DataError(path + ": " + e.what());
  }
  try {
    SynthManifest m;
    m.model = j.at("model").get<std::string>();
    for (const auto& [name, value] : j.at("params").items()) {
      m.params.emplace_back(name, value.get<double>());
    }
    auto range = [&](const char* key) {
      const auto& a = j.at("sweep").at(key);
      return Range{a.at(0).get<double>(), a.at(1).get<double>(),
                   a.at(2).get<double>()};
    };
    m.sweep = SweepSpec{range("vgs"), range("vds")};
    m.noise_rel = j.at("noise_rel").get<double>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.device = j.value("device", std::string("synthetic"));
    m.temperature = j.value("temperature", 298.0);
    return m;
  } catch (const ordered_json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
}

}  // namespace mosfit
