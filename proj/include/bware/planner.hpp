#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "bware/cframe.hpp"
#include "bware/cla.hpp"
#include "bware/colgroup.hpp"
#include "bware/frame.hpp"
#include "bware/matrix.hpp"

namespace bware {

// ---------------------------------------------------------------- training

struct CgStats {
  std::size_t iterations = 0;
  double residual = 0.0;
};

// Conjugate gradient on (X^T X + reg I) beta = X^T y. maxiter defaults to
// min(ncols, 1000). Compressed inputs only go through right_mm / left_mm.
Matrix train_lm_cg(const Matrix& X, const Matrix& y, std::optional<std::size_t> maxiter = std::nullopt,
                   double reg = 1e-7, CgStats* stats = nullptr);
Matrix train_lm_cg(const CompressedMatrix& X, const Matrix& y, std::optional<std::size_t> maxiter = std::nullopt,
                   double reg = 1e-7, CgStats* stats = nullptr);

// ---------------------------------------------------------------- graph

enum class NodeKind : std::uint8_t {
  READ,
  TRANSFORM_ENCODE,
  SCALAR,
  CBIND,
  LMM,
  SELECTION_MM,
  SLICE,
  LOOP,
  TRAIN_LM_CG,
  WRITE,
  MORPH,
};

const char* to_string(NodeKind k);

// Literal argument or a reference to an enclosing loop variable.
struct Arg {
  enum class Kind : std::uint8_t { NUMBER, STRING, VAR, LIST };
  Kind kind = Kind::NUMBER;
  double number = 0.0;
  std::string text;
  std::vector<Arg> list;

  static Arg num(double v) { return {Kind::NUMBER, v, {}, {}}; }
  static Arg str(std::string s) { return {Kind::STRING, 0.0, std::move(s), {}}; }
  static Arg var(std::string s) { return {Kind::VAR, 0.0, std::move(s), {}}; }
};

struct Node {
  std::size_t id = 0;
  NodeKind kind = NodeKind::READ;
  int line = 0;
  // Variable the node is assigned to, if any.
  std::string name;
  std::vector<std::size_t> inputs;
  std::map<std::string, Arg> params;
  // Enclosing loop node.
  std::optional<std::size_t> loop;

  // LOOP
  std::string var;
  Arg range;
  bool parallel = false;
  std::vector<std::size_t> body;

  // Set by inject_morphs: MORPH workload, and frame compression on READ.
  WorkloadVector workload;
  bool injected = false;
  bool compress = false;
};

struct PipelineGraph {
  std::vector<Node> nodes;
  // Top-level statement order.
  std::vector<std::size_t> top;
  // Relative paths in the script resolve against this directory.
  std::string base_dir = ".";

  const Node& node(std::size_t id) const { return nodes.at(id); }
  std::size_t count(NodeKind k) const;
  std::vector<std::size_t> consumers(std::size_t id) const;
  std::string to_text() const;
};

// Mini-language:
//   X = read("data.csv")
//   for t in [5, 10, 20] { M = transformencode(X, "spec.json", bins=t) ... }
//   parfor a in 1:8 { A = augment(M, a); B = lmCG(A, Y, maxiter=20, reg=1) }
// Calls: read, transformencode, scalar, cbind, augment, lmm, select, slice,
// lmCG, write, morph. Statements end at a newline or ';', '#' starts a
// comment. Throws ParseError naming the line.
PipelineGraph parse_pipeline(const std::string& text, const std::string& base_dir = ".");

struct PlannerOptions {
  // Trip count assumed for loops whose range is not literal.
  double default_trip = 10.0;
  // Inject when predicted benefit exceeds this multiple of the morph cost.
  double benefit_factor = 2.0;
  // Compile time: no sizes are known, so a morph is priced at morph_scans
  // passes over its input and each downstream op saves nominal_saving of a pass.
  double morph_scans = 2.0;
  double nominal_saving = 0.5;
};

// Workload of every candidate node (zero vectors for dead intermediates).
std::map<std::size_t, WorkloadVector> extract_workload(const PipelineGraph& g, const PlannerOptions& opts = {});

bool is_candidate(const Node& n);

PipelineGraph inject_morphs(const PipelineGraph& g, const std::map<std::size_t, WorkloadVector>& vectors,
                            const PlannerOptions& opts = {});

// ---------------------------------------------------------------- execution

using Value = std::variant<std::monostate, double, std::string, std::shared_ptr<const Frame>,
                           std::shared_ptr<const CompressedFrame>, std::shared_ptr<const Matrix>,
                           std::shared_ptr<const CompressedMatrix>>;

std::uint64_t value_bytes(const Value& v);

struct NodeMetric {
  std::size_t node = 0;
  std::string op;
  // Loop variable bindings of this evaluation, e.g. "t=5,a=2".
  std::string bindings;
  double ms = 0.0;
  std::uint64_t bytes_in = 0;
  std::uint64_t bytes_out = 0;
  std::size_t groups = 0;
  // MORPH: whether the runtime check applied the plan.
  bool applied = false;
};

std::string metric_to_json(const NodeMetric& m);

struct ModelResult {
  std::size_t node = 0;
  std::string bindings;
  Matrix beta;
  std::size_t iterations = 0;
};

struct ExecOptions {
  PlannerOptions planner;
  // Runtime benefit check for MORPH nodes.
  bool runtime_check = true;
  // Worker count for parfor iterations; 0 uses num_threads().
  std::size_t threads = 0;
};

struct ExecResult {
  std::vector<ModelResult> models;
  std::vector<NodeMetric> metrics;
  // Sum of bytes_in over all evaluations.
  std::uint64_t bytes_touched = 0;
};

// Runtime errors are rethrown with the failing node id prepended.
ExecResult execute(const PipelineGraph& g, const ExecOptions& opts = {});

}  // namespace bware
