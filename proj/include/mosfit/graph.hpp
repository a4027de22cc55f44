#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mosfit {

using NodeId = std::uint32_t;
inline constexpr NodeId kNoNode = 0xffffffffu;

enum class Op : std::uint8_t {
  Const,
  Param,
  Input,
  Add,
  Sub,
  Mul,
  Div,
  Neg,
  Exp,
  Ln,
  Sqrt,
  PowConst,
  Pow,
  Sum,
  Select,
  Loop,
};

const char* op_name(Op op);

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed graph description (cycle, dangling operand, bad arity, ...).
class GraphBuildError : public Error {
 public:
  using Error::Error;
};

/// Arithmetic left the operation's domain at a specific node.
class DomainError : public Error {
 public:
  DomainError(NodeId node, Op op, const std::string& what);
  NodeId node() const { return node_; }

 private:
  NodeId node_ = kNoNode;
};

/// An iterative construct failed to converge (loop cap, residual check).
class ConvergenceError : public Error {
 public:
  using Error::Error;
};

/// One node of a computational graph. Operands are ids of previously
/// validated nodes; `value` holds the Const payload or PowConst exponent.
struct NodeSpec {
  Op op = Op::Const;
  std::vector<NodeId> args;
  double value = 0.0;
  std::string name;     // Param / Input leaf name
  int loop_index = -1;  // Loop nodes: index into the graph's loop list
};

class Graph;

/// While-loop attached to a Loop node. The body and predicate are evaluated
/// with `state_input` bound to the loop-carried value; any `extra_inputs`
/// bind positionally to the Loop node's operands after the first.
struct LoopSpec {
  std::shared_ptr<const Graph> body;
  std::shared_ptr<const Graph> predicate;
  std::string state_input;
  std::vector<std::string> extra_inputs;
  int max_iterations = 100;
};

struct GraphStats {
  std::size_t vertices = 0;
  std::size_t edges = 0;
};

struct Tape;

/// Check applied after forward evaluation: |value(residual)| must not exceed
/// tol * max(1, |value(reference)|).
struct ConvergenceCheck {
  NodeId residual = kNoNode;
  NodeId reference = kNoNode;
  double tol = 1e-9;
  std::string what;
};

/// Immutable validated computational graph. Node ids are the declaration
/// indices of the specs the graph was built from; evaluation follows a
/// deterministic topological order fixed at build time.
class Graph {
 public:
  Graph() = default;
  Graph(std::vector<NodeSpec> specs, std::vector<NodeId> outputs,
        std::vector<LoopSpec> loops = {},
        std::vector<ConvergenceCheck> checks = {});

  std::size_t size() const { return nodes_.size(); }
  const NodeSpec& node(NodeId id) const { return nodes_[id]; }
  const std::vector<NodeId>& outputs() const { return outputs_; }
  const std::vector<NodeId>& order() const { return order_; }
  const std::vector<LoopSpec>& loops() const { return loops_; }
  const std::vector<ConvergenceCheck>& checks() const { return checks_; }

  const std::vector<std::string>& param_names() const { return param_names_; }
  const std::vector<std::string>& input_names() const { return input_names_; }
  const std::vector<NodeId>& param_ids() const { return param_ids_; }
  const std::vector<NodeId>& input_ids() const { return input_ids_; }

  /// Index of a named leaf, or -1 when absent.
  int param_index(const std::string& name) const;
  int input_index(const std::string& name) const;

  /// Vertex/edge counts including loop bodies and predicates; each loop
  /// contributes one feedback edge.
  GraphStats stats() const;

  /// Edge list, one line per edge: "src_id -> dst_id opkind".
  std::string dump() const;

 private:
  std::vector<NodeSpec> nodes_;
  std::vector<NodeId> order_;
  std::vector<NodeId> outputs_;
  std::vector<LoopSpec> loops_;
  std::vector<ConvergenceCheck> checks_;
  std::vector<std::string> param_names_;
  std::vector<std::string> input_names_;
  std::vector<NodeId> param_ids_;
  std::vector<NodeId> input_ids_;
};

/// Execution record of one Loop node: one body tape per executed iteration
/// plus the predicate flags in evaluation order. Backward consumes both in
/// reverse, leaving them empty.
struct LoopTape {
  int iterations = 0;
  std::vector<Tape> iter_tapes;
  std::vector<char> flags;
};

/// Forward-pass record: per-node values, Select flags, loop stacks.
struct Tape {
  std::vector<double> values;
  std::vector<char> evaluated;
  std::vector<char> flags;
  std::vector<LoopTape> loops;
  std::vector<double> outputs;
};

/// Evaluates the graph. Parameter and input values align with the graph's
/// param_names()/input_names() order. The tape is reset and refilled.
void forward(const Graph& g, std::span<const double> params,
             std::span<const double> inputs, Tape& tape);

/// Reverse pass over a forward tape. `seeds` aligns with outputs(); the
/// returned vector holds one adjoint per parameter leaf in param_names()
/// order. Loop stacks are popped and must be full (one forward per backward).
std::vector<double> backward(const Graph& g, Tape& tape,
                             std::span<const double> seeds);

/// Convenience single-output evaluation.
double eval(const Graph& g, std::span<const double> params,
            std::span<const double> inputs);

/// Incremental graph description; emits specs in declaration order so the
/// result is topological by construction. build() runs full validation.
class GraphBuilder {
 public:
  NodeId constant(double v);
  NodeId param(std::string name);
  NodeId input(std::string name);

  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId div(NodeId a, NodeId b);
  NodeId neg(NodeId a);
  NodeId exp(NodeId a);
  NodeId ln(NodeId a);
  NodeId sqrt(NodeId a);
  NodeId pow_const(NodeId base, double exponent);
  NodeId pow(NodeId base, NodeId exponent);
  NodeId sum(std::vector<NodeId> terms);
  /// predicate > 0 selects `when_pos`, otherwise `when_neg`.
  NodeId select(NodeId predicate, NodeId when_pos, NodeId when_neg);
  NodeId loop(NodeId initial, std::vector<NodeId> extras, LoopSpec spec);

  NodeId min(NodeId a, NodeId b);
  NodeId max(NodeId a, NodeId b);
  NodeId clamp_min(NodeId x, double lo);
  /// exp with the exponent clamped at 500 to keep intermediates finite.
  NodeId safe_exp(NodeId x);

  void add_check(NodeId residual, NodeId reference, double tol,
                 std::string what);

  std::size_t size() const { return specs_.size(); }
  Graph build(std::vector<NodeId> outputs);

 private:
  NodeId push(NodeSpec spec);
  NodeId push(Op op, std::vector<NodeId> args, double value = 0.0);
  std::vector<NodeSpec> specs_;
  std::vector<LoopSpec> loops_;
  std::vector<ConvergenceCheck> checks_;
};

/// Validates arbitrary-order specs and produces an evaluable graph.
Graph build_graph(std::vector<NodeSpec> specs, std::vector<NodeId> outputs,
                  std::vector<LoopSpec> loops = {},
                  std::vector<ConvergenceCheck> checks = {});

}  // namespace mosfit
