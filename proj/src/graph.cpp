#include "mosfit/graph.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <sstream>

namespace mosfit {

namespace {

std::string node_label(NodeId id, Op op) {
  std::ostringstream os;
  os << op_name(op) << " node " << id;
  return os.str();
}

bool is_integer(double x) { return std::floor(x) == x && std::isfinite(x); }

void check_finite(NodeId id, Op op, double v, const char* phase) {
  if (!std::isfinite(v)) {
    throw DomainError(id, op,
                      std::string(phase) + " produced a non-finite value at " +
                          node_label(id, op));
  }
}

struct LoopBinding {
  int state_pos = -1;                 // position of state leaf in graph inputs
  std::vector<int> extra_pos;         // position of each extra, -1 if absent
};

LoopBinding bind_loop_inputs(const Graph& g, const LoopSpec& ls) {
  LoopBinding b;
  b.state_pos = g.input_index(ls.state_input);
  b.extra_pos.reserve(ls.extra_inputs.size());
  for (const auto& name : ls.extra_inputs) b.extra_pos.push_back(g.input_index(name));
  return b;
}

void fill_loop_inputs(const Graph& g, const LoopBinding& bind, double state,
                      std::span<const double> extras, std::vector<double>& out) {
  out.assign(g.input_names().size(), 0.0);
  if (bind.state_pos >= 0) out[bind.state_pos] = state;
  for (std::size_t j = 0; j < bind.extra_pos.size(); ++j) {
    if (bind.extra_pos[j] >= 0) out[bind.extra_pos[j]] = extras[j];
  }
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::Const: return "const";
    case Op::Param: return "param";
    case Op::Input: return "input";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::Neg: return "neg";
    case Op::Exp: return "exp";
    case Op::Ln: return "ln";
    case Op::Sqrt: return "sqrt";
    case Op::PowConst: return "powc";
    case Op::Pow: return "pow";
    case Op::Sum: return "sum";
    case Op::Select: return "select";
    case Op::Loop: return "loop";
  }
  return "?";
}

DomainError::DomainError(NodeId node, Op op, const std::string& what)
    : Error(what + " [" + node_label(node, op) + "]"), node_(node) {}

Graph::Graph(std::vector<NodeSpec> specs, std::vector<NodeId> outputs,
             std::vector<LoopSpec> loops, std::vector<ConvergenceCheck> checks)
    : nodes_(std::move(specs)),
      outputs_(std::move(outputs)),
      loops_(std::move(loops)),
      checks_(std::move(checks)) {
  const std::size_t n = nodes_.size();
  if (outputs_.empty()) throw GraphBuildError("graph needs at least one output");
  for (NodeId out : outputs_) {
    if (out >= n) throw GraphBuildError("output references a missing node");
  }

  for (NodeId id = 0; id < n; ++id) {
    const NodeSpec& s = nodes_[id];
    std::size_t arity = s.args.size();
    bool ok = true;
    switch (s.op) {
      case Op::Const:
      case Op::Param:
      case Op::Input: ok = arity == 0; break;
      case Op::Add:
      case Op::Sub:
      case Op::Mul:
      case Op::Div:
      case Op::Pow: ok = arity == 2; break;
      case Op::Neg:
      case Op::Exp:
      case Op::Ln:
      case Op::Sqrt:
      case Op::PowConst: ok = arity == 1; break;
      case Op::Sum: ok = arity >= 1; break;
      case Op::Select: ok = arity == 3; break;
      case Op::Loop: ok = arity >= 1; break;
    }
    if (!ok) {
      throw GraphBuildError("bad operand count at " + node_label(id, s.op));
    }
    for (NodeId a : s.args) {
      if (a >= n) {
        throw GraphBuildError("dangling operand reference at " +
                              node_label(id, s.op));
      }
    }
    if (s.op == Op::Param || s.op == Op::Input) {
      if (s.name.empty()) {
        throw GraphBuildError("leaf without a name at " + node_label(id, s.op));
      }
      if (param_index(s.name) >= 0 || input_index(s.name) >= 0) {
        throw GraphBuildError("duplicate leaf name '" + s.name + "'");
      }
      if (s.op == Op::Param) {
        param_names_.push_back(s.name);
        param_ids_.push_back(id);
      } else {
        input_names_.push_back(s.name);
        input_ids_.push_back(id);
      }
    }
    if (s.op == Op::Loop) {
      if (s.loop_index < 0 || std::size_t(s.loop_index) >= loops_.size()) {
        throw GraphBuildError("loop node without a loop spec at " +
                              node_label(id, s.op));
      }
      const LoopSpec& ls = loops_[s.loop_index];
      if (!ls.body || !ls.predicate) {
        throw GraphBuildError("loop spec missing body or predicate");
      }
      if (arity != 1 + ls.extra_inputs.size()) {
        throw GraphBuildError("loop operand count does not match extras at " +
                              node_label(id, s.op));
      }
      if (ls.max_iterations <= 0) {
        throw GraphBuildError("loop iteration cap must be positive");
      }
      for (const Graph* sub : {ls.body.get(), ls.predicate.get()}) {
        if (!sub->param_names().empty()) {
          throw GraphBuildError(
              "loop subgraphs bind values through inputs, not parameters");
        }
        if (sub->outputs().size() != 1) {
          throw GraphBuildError("loop subgraphs need exactly one output");
        }
        for (const auto& name : sub->input_names()) {
          bool known = name == ls.state_input ||
                       std::find(ls.extra_inputs.begin(), ls.extra_inputs.end(),
                                 name) != ls.extra_inputs.end();
          if (!known) {
            throw GraphBuildError("loop subgraph input '" + name +
                                  "' is neither the state nor an extra");
          }
        }
      }
    }
  }

  // Deterministic topological order: smallest ready id first. A leftover
  // node means a cycle, which only loop subgraphs may contain.
  std::vector<std::uint32_t> indeg(n, 0);
  std::vector<std::vector<NodeId>> dependents(n);
  for (NodeId id = 0; id < n; ++id) {
    for (NodeId a : nodes_[id].args) {
      ++indeg[id];
      dependents[a].push_back(id);
    }
  }
  std::priority_queue<NodeId, std::vector<NodeId>, std::greater<NodeId>> ready;
  for (NodeId id = 0; id < n; ++id) {
    if (indeg[id] == 0) ready.push(id);
  }
  std::vector<NodeId> topo;
  topo.reserve(n);
  while (!ready.empty()) {
    NodeId id = ready.top();
    ready.pop();
    topo.push_back(id);
    for (NodeId d : dependents[id]) {
      if (--indeg[d] == 0) ready.push(d);
    }
  }
  if (topo.size() != n) {
    throw GraphBuildError("cycle outside a LoopBlock");
  }

  // Restrict evaluation to ancestors of outputs and convergence checks;
  // leaves always evaluate so bindings stay positional.
  std::vector<char> live(n, 0);
  std::vector<NodeId> stack;
  auto mark = [&](NodeId id) {
    if (id < n && !live[id]) {
      live[id] = 1;
      stack.push_back(id);
    }
  };
  for (NodeId out : outputs_) mark(out);
  for (const auto& c : checks_) {
    mark(c.residual);
    mark(c.reference);
  }
  for (NodeId id : param_ids_) mark(id);
  for (NodeId id : input_ids_) mark(id);
  while (!stack.empty()) {
    NodeId id = stack.back();
    stack.pop_back();
    for (NodeId a : nodes_[id].args) mark(a);
  }
  order_.reserve(n);
  for (NodeId id : topo) {
    if (live[id]) order_.push_back(id);
  }

  for (const auto& c : checks_) {
    if (c.residual >= n || c.reference >= n) {
      throw GraphBuildError("convergence check references a missing node");
    }
  }
}

int Graph::param_index(const std::string& name) const {
  for (std::size_t i = 0; i < param_names_.size(); ++i) {
    if (param_names_[i] == name) return int(i);
  }
  return -1;
}

int Graph::input_index(const std::string& name) const {
  for (std::size_t i = 0; i < input_names_.size(); ++i) {
    if (input_names_[i] == name) return int(i);
  }
  return -1;
}

GraphStats Graph::stats() const {
  GraphStats s;
  s.vertices = nodes_.size();
  for (const auto& node : nodes_) s.edges += node.args.size();
  for (const auto& ls : loops_) {
    for (const Graph* sub : {ls.body.get(), ls.predicate.get()}) {
      GraphStats sub_stats = sub->stats();
      s.vertices += sub_stats.vertices;
      s.edges += sub_stats.edges;
    }
    s.edges += 1;  // feedback edge from body output to loop state
  }
  return s;
}

std::string Graph::dump() const {
  std::ostringstream os;
  for (NodeId id = 0; id < nodes_.size(); ++id) {
    for (NodeId a : nodes_[id].args) {
      os << a << " -> " << id << " " << op_name(nodes_[id].op) << "\n";
    }
  }
  for (std::size_t li = 0; li < loops_.size(); ++li) {
    const LoopSpec& ls = loops_[li];
    std::istringstream body(ls.body->dump());
    std::istringstream pred(ls.predicate->dump());
    std::string line;
    while (std::getline(body, line)) os << "L" << li << ".body " << line << "\n";
    while (std::getline(pred, line)) os << "L" << li << ".pred " << line << "\n";
  }
  return os.str();
}

namespace {

void backward_full(const Graph& g, Tape& tape, std::span<const double> seeds,
                   std::vector<double>& param_adj,
                   std::vector<double>& input_adj);

void run_forward(const Graph& g, std::span<const double> params,
                 std::span<const double> inputs, Tape& tape) {
  const std::size_t n = g.size();
  if (params.size() != g.param_names().size()) {
    throw Error("parameter binding size mismatch");
  }
  if (inputs.size() != g.input_names().size()) {
    throw Error("input binding size mismatch");
  }
  for (double v : params) {
    if (!std::isfinite(v)) throw Error("non-finite parameter binding");
  }
  for (double v : inputs) {
    if (!std::isfinite(v)) throw Error("non-finite input binding");
  }

  tape.values.assign(n, 0.0);
  tape.evaluated.assign(n, 0);
  tape.flags.assign(n, 0);
  tape.loops.assign(g.loops().size(), LoopTape{});
  tape.outputs.clear();

  auto& v = tape.values;
  for (std::size_t i = 0; i < params.size(); ++i) {
    v[g.param_ids()[i]] = params[i];
  }
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    v[g.input_ids()[i]] = inputs[i];
  }

  for (NodeId id : g.order()) {
    const NodeSpec& s = g.node(id);
    const auto& a = s.args;
    double r = 0.0;
    switch (s.op) {
      case Op::Const: r = s.value; break;
      case Op::Param:
      case Op::Input: r = v[id]; break;
      case Op::Add: r = v[a[0]] + v[a[1]]; break;
      case Op::Sub: r = v[a[0]] - v[a[1]]; break;
      case Op::Mul: r = v[a[0]] * v[a[1]]; break;
      case Op::Div:
        if (v[a[1]] == 0.0) {
          throw DomainError(id, s.op, "division by zero");
        }
        r = v[a[0]] / v[a[1]];
        break;
      case Op::Neg: r = -v[a[0]]; break;
      case Op::Exp: r = std::exp(v[a[0]]); break;
      case Op::Ln:
        if (v[a[0]] <= 0.0) {
          throw DomainError(id, s.op, "ln of a non-positive value");
        }
        r = std::log(v[a[0]]);
        break;
      case Op::Sqrt:
        if (v[a[0]] < 0.0) {
          throw DomainError(id, s.op, "sqrt of a negative value");
        }
        r = std::sqrt(v[a[0]]);
        break;
      case Op::PowConst: {
        double base = v[a[0]];
        if (base < 0.0 && !is_integer(s.value)) {
          throw DomainError(id, s.op,
                            "non-integer power of a negative base");
        }
        if (base == 0.0 && s.value < 0.0) {
          throw DomainError(id, s.op, "negative power of zero");
        }
        r = std::pow(base, s.value);
        break;
      }
      case Op::Pow: {
        double base = v[a[0]];
        if (base <= 0.0) {
          throw DomainError(id, s.op, "pow needs a positive base");
        }
        r = std::pow(base, v[a[1]]);
        break;
      }
      case Op::Sum:
        for (NodeId t : a) r += v[t];
        break;
      case Op::Select: {
        bool flag = v[a[0]] > 0.0;
        tape.flags[id] = flag ? 1 : 0;
        r = flag ? v[a[1]] : v[a[2]];
        break;
      }
      case Op::Loop: {
        const LoopSpec& ls = g.loops()[s.loop_index];
        LoopBinding body_bind = bind_loop_inputs(*ls.body, ls);
        LoopBinding pred_bind = bind_loop_inputs(*ls.predicate, ls);
        std::vector<double> extras(a.size() - 1);
        for (std::size_t j = 1; j < a.size(); ++j) extras[j - 1] = v[a[j]];
        LoopTape& lt = tape.loops[s.loop_index];
        lt = LoopTape{};
        double state = v[a[0]];
        std::vector<double> bound;
        Tape pred_tape;
        for (int iter = 0;; ++iter) {
          fill_loop_inputs(*ls.predicate, pred_bind, state, extras, bound);
          run_forward(*ls.predicate, {}, bound, pred_tape);
          bool cont = pred_tape.outputs[0] > 0.0;
          lt.flags.push_back(cont ? 1 : 0);
          if (!cont) break;
          if (iter >= ls.max_iterations) {
            throw ConvergenceError("loop exceeded its iteration cap at " +
                                   node_label(id, s.op));
          }
          fill_loop_inputs(*ls.body, body_bind, state, extras, bound);
          Tape body_tape;
          run_forward(*ls.body, {}, bound, body_tape);
          state = body_tape.outputs[0];
          lt.iter_tapes.push_back(std::move(body_tape));
        }
        lt.iterations = int(lt.iter_tapes.size());
        r = state;
        break;
      }
    }
    check_finite(id, s.op, r, "forward");
    v[id] = r;
    tape.evaluated[id] = 1;
  }

  for (const auto& c : g.checks()) {
    double residual = std::fabs(v[c.residual]);
    double scale = std::max(1.0, std::fabs(v[c.reference]));
    if (!(residual <= c.tol * scale)) {
      std::ostringstream os;
      os << c.what << ": residual " << residual << " exceeds " << c.tol
         << " * " << scale;
      throw ConvergenceError(os.str());
    }
  }

  tape.outputs.reserve(g.outputs().size());
  for (NodeId out : g.outputs()) tape.outputs.push_back(v[out]);
}

void backward_full(const Graph& g, Tape& tape, std::span<const double> seeds,
                   std::vector<double>& param_adj,
                   std::vector<double>& input_adj) {
  const std::size_t n = g.size();
  if (tape.values.size() != n || tape.evaluated.size() != n) {
    throw Error("tape does not match the graph");
  }
  if (seeds.size() != g.outputs().size()) {
    throw Error("seed count does not match the graph outputs");
  }

  std::vector<double> adj(n, 0.0);
  for (std::size_t i = 0; i < seeds.size(); ++i) adj[g.outputs()[i]] += seeds[i];

  const auto& v = tape.values;
  auto push = [&](NodeId id, Op op, NodeId to, double contribution) {
    check_finite(id, op, contribution, "backward");
    adj[to] += contribution;
  };

  for (auto it = g.order().rbegin(); it != g.order().rend(); ++it) {
    NodeId id = *it;
    double w = adj[id];
    if (w == 0.0) continue;
    const NodeSpec& s = g.node(id);
    const auto& a = s.args;
    switch (s.op) {
      case Op::Const:
      case Op::Param:
      case Op::Input: break;
      case Op::Add:
        push(id, s.op, a[0], w);
        push(id, s.op, a[1], w);
        break;
      case Op::Sub:
        push(id, s.op, a[0], w);
        push(id, s.op, a[1], -w);
        break;
      case Op::Mul:
        push(id, s.op, a[0], w * v[a[1]]);
        push(id, s.op, a[1], w * v[a[0]]);
        break;
      case Op::Div:
        push(id, s.op, a[0], w / v[a[1]]);
        push(id, s.op, a[1], -w * v[a[0]] / (v[a[1]] * v[a[1]]));
        break;
      case Op::Neg: push(id, s.op, a[0], -w); break;
      case Op::Exp: push(id, s.op, a[0], w * v[id]); break;
      case Op::Ln: push(id, s.op, a[0], w / v[a[0]]); break;
      case Op::Sqrt: push(id, s.op, a[0], w / (2.0 * v[id])); break;
      case Op::PowConst:
        push(id, s.op, a[0], w * s.value * std::pow(v[a[0]], s.value - 1.0));
        break;
      case Op::Pow:
        push(id, s.op, a[0], w * v[a[1]] * std::pow(v[a[0]], v[a[1]] - 1.0));
        push(id, s.op, a[1], w * v[id] * std::log(v[a[0]]));
        break;
      case Op::Sum:
        for (NodeId t : a) push(id, s.op, t, w);
        break;
      case Op::Select:
        // The predicate has derivative zero; only the taken branch flows.
        push(id, s.op, tape.flags[id] ? a[1] : a[2], w);
        break;
      case Op::Loop: {
        const LoopSpec& ls = g.loops()[s.loop_index];
        LoopTape& lt = tape.loops[s.loop_index];
        if (lt.iter_tapes.size() != std::size_t(lt.iterations)) {
          throw Error("empty loop stack (backward without a fresh forward) at " +
                      node_label(id, s.op));
        }
        LoopBinding body_bind = bind_loop_inputs(*ls.body, ls);
        if (!lt.flags.empty()) lt.flags.pop_back();
        double state_adj = w;
        std::vector<double> extra_adj(a.size() - 1, 0.0);
        std::vector<double> body_param_adj;
        std::vector<double> body_input_adj;
        std::vector<double> seed(1);
        while (!lt.iter_tapes.empty()) {
          Tape body_tape = std::move(lt.iter_tapes.back());
          lt.iter_tapes.pop_back();
          if (!lt.flags.empty()) lt.flags.pop_back();
          seed[0] = state_adj;
          backward_full(*ls.body, body_tape, seed, body_param_adj,
                        body_input_adj);
          state_adj = body_bind.state_pos >= 0
                          ? body_input_adj[body_bind.state_pos]
                          : 0.0;
          for (std::size_t j = 0; j < extra_adj.size(); ++j) {
            if (body_bind.extra_pos[j] >= 0) {
              extra_adj[j] += body_input_adj[body_bind.extra_pos[j]];
            }
          }
        }
        push(id, s.op, a[0], state_adj);
        for (std::size_t j = 0; j < extra_adj.size(); ++j) {
          push(id, s.op, a[1 + j], extra_adj[j]);
        }
        break;
      }
    }
  }

  param_adj.assign(g.param_names().size(), 0.0);
  for (std::size_t i = 0; i < g.param_ids().size(); ++i) {
    param_adj[i] = adj[g.param_ids()[i]];
  }
  input_adj.assign(g.input_names().size(), 0.0);
  for (std::size_t i = 0; i < g.input_ids().size(); ++i) {
    input_adj[i] = adj[g.input_ids()[i]];
  }
}

}  // namespace

void forward(const Graph& g, std::span<const double> params,
             std::span<const double> inputs, Tape& tape) {
  run_forward(g, params, inputs, tape);
}

std::vector<double> backward(const Graph& g, Tape& tape,
                             std::span<const double> seeds) {
  std::vector<double> param_adj;
  std::vector<double> input_adj;
  backward_full(g, tape, seeds, param_adj, input_adj);
  return param_adj;
}

double eval(const Graph& g, std::span<const double> params,
            std::span<const double> inputs) {
  Tape tape;
  run_forward(g, params, inputs, tape);
  return tape.outputs[0];
}

NodeId GraphBuilder::push(NodeSpec spec) {
  for (NodeId a : spec.args) {
    if (a >= specs_.size()) {
      throw GraphBuildError("operand references an undeclared node");
    }
  }
  specs_.push_back(std::move(spec));
  return NodeId(specs_.size() - 1);
}

NodeId GraphBuilder::push(Op op, std::vector<NodeId> args, double value) {
  NodeSpec spec;
  spec.op = op;
  spec.args = std::move(args);
  spec.value = value;
  return push(std::move(spec));
}

NodeId GraphBuilder::constant(double v) { return push(Op::Const, {}, v); }
NodeId GraphBuilder::param(std::string name) {
  NodeSpec spec;
  spec.op = Op::Param;
  spec.name = std::move(name);
  return push(std::move(spec));
}
NodeId GraphBuilder::input(std::string name) {
  NodeSpec spec;
  spec.op = Op::Input;
  spec.name = std::move(name);
  return push(std::move(spec));
}
NodeId GraphBuilder::add(NodeId a, NodeId b) { return push(Op::Add, {a, b}); }
NodeId GraphBuilder::sub(NodeId a, NodeId b) { return push(Op::Sub, {a, b}); }
NodeId GraphBuilder::mul(NodeId a, NodeId b) { return push(Op::Mul, {a, b}); }
NodeId GraphBuilder::div(NodeId a, NodeId b) { return push(Op::Div, {a, b}); }
NodeId GraphBuilder::neg(NodeId a) { return push(Op::Neg, {a}); }
NodeId GraphBuilder::exp(NodeId a) { return push(Op::Exp, {a}); }
NodeId GraphBuilder::ln(NodeId a) { return push(Op::Ln, {a}); }
NodeId GraphBuilder::sqrt(NodeId a) { return push(Op::Sqrt, {a}); }
NodeId GraphBuilder::pow_const(NodeId base, double exponent) {
  return push(Op::PowConst, {base}, exponent);
}
NodeId GraphBuilder::pow(NodeId base, NodeId exponent) {
  return push(Op::Pow, {base, exponent});
}
NodeId GraphBuilder::sum(std::vector<NodeId> terms) {
  return push(Op::Sum, std::move(terms));
}
NodeId GraphBuilder::select(NodeId predicate, NodeId when_pos, NodeId when_neg) {
  return push(Op::Select, {predicate, when_pos, when_neg});
}
NodeId GraphBuilder::loop(NodeId initial, std::vector<NodeId> extras,
                          LoopSpec spec) {
  std::vector<NodeId> args;
  args.reserve(1 + extras.size());
  args.push_back(initial);
  for (NodeId e : extras) args.push_back(e);
  loops_.push_back(std::move(spec));
  NodeSpec node;
  node.op = Op::Loop;
  node.args = std::move(args);
  node.loop_index = int(loops_.size() - 1);
  return push(std::move(node));
}

NodeId GraphBuilder::min(NodeId a, NodeId b) { return select(sub(a, b), b, a); }
NodeId GraphBuilder::max(NodeId a, NodeId b) { return select(sub(a, b), a, b); }
NodeId GraphBuilder::clamp_min(NodeId x, double lo) {
  NodeId c = constant(lo);
  return select(sub(x, c), x, c);
}
NodeId GraphBuilder::safe_exp(NodeId x) {
  NodeId cap = constant(500.0);
  return exp(select(sub(x, cap), cap, x));
}

void GraphBuilder::add_check(NodeId residual, NodeId reference, double tol,
                             std::string what) {
  checks_.push_back({residual, reference, tol, std::move(what)});
}

Graph GraphBuilder::build(std::vector<NodeId> outputs) {
  return Graph(std::move(specs_), std::move(outputs), std::move(loops_),
               std::move(checks_));
}

Graph build_graph(std::vector<NodeSpec> specs, std::vector<NodeId> outputs,
                  std::vector<LoopSpec> loops,
                  std::vector<ConvergenceCheck> checks) {
  return Graph(std::move(specs), std::move(outputs), std::move(loops),
               std::move(checks));
}

}  // namespace mosfit
