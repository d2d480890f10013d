#include "bware/planner.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "bware/morph.hpp"
#include "bware/tio.hpp"
#include "bware/transform.hpp"
#include "json.hpp"

namespace bware {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- training

namespace {

double dot(const Matrix& a, const Matrix& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.values().size(); ++i) s += a.values()[i] * b.values()[i];
  return s;
}

void axpy(double alpha, const Matrix& x, Matrix& y) {
  auto& v = y.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] += alpha * x.values()[i];
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

bool all_finite(const CompressedMatrix& cm) {
  for (const auto& g : cm.groups()) {
    bool ok = std::visit(overloaded{
                             [](const DdcGroup& d) { return d.dict.is_identity() || all_finite(d.dict.matrix()->values()); },
                             [](const SdcGroup& s) {
                               return all_finite(s.default_tuple) &&
                                      (s.dict.is_identity() || all_finite(s.dict.matrix()->values()));
                             },
                             [](const ConstGroup& k) { return all_finite(k.tuple); },
                             [](const EmptyGroup&) { return true; },
                             [](const UncompressedGroup& u) { return all_finite(u.block->values()); },
                         },
                         g.body());
    if (!ok) return false;
  }
  return true;
}

// xv: X p (n x 1), xtv: X^T v (m x 1).
Matrix conjugate_gradient(std::size_t m, const Matrix& y, const std::function<Matrix(const Matrix&)>& xv,
                          const std::function<Matrix(const Matrix&)>& xtv, std::optional<std::size_t> maxiter,
                          double reg, CgStats* stats) {
  if (!all_finite(y.values()) || !std::isfinite(reg)) throw TypeError("non-finite value in lmCG input");
  const std::size_t limit = maxiter.value_or(std::min<std::size_t>(m, 1000));
  Matrix beta(m, 1);
  Matrix r = xtv(y);
  Matrix p = r;
  double rr = dot(r, r);
  const double stop = 1e-24 * rr;
  std::size_t it = 0;
  while (it < limit && rr > stop && rr > 0) {
    Matrix q = xtv(xv(p));
    axpy(reg, p, q);
    double pq = dot(p, q);
    if (!(pq > 0)) break;
    double alpha = rr / pq;
    axpy(alpha, p, beta);
    axpy(-alpha, q, r);
    double rr_new = dot(r, r);
    ++it;
    double b = rr_new / rr;
    rr = rr_new;
    for (std::size_t i = 0; i < m; ++i) p.data()[i] = r.values()[i] + b * p.values()[i];
  }
  if (stats) *stats = {it, std::sqrt(rr)};
  return beta;
}

void check_rows(std::size_t xr, const Matrix& y) {
  if (y.rows() != xr || y.cols() != 1)
    throw ShapeError("lmCG expects y with " + std::to_string(xr) + " rows and one column, got " +
                     std::to_string(y.rows()) + "x" + std::to_string(y.cols()));
}

}  // namespace

Matrix train_lm_cg(const Matrix& X, const Matrix& y, std::optional<std::size_t> maxiter, double reg, CgStats* stats) {
  check_rows(X.rows(), y);
  if (!all_finite(X.values())) throw TypeError("non-finite value in lmCG input");
  return conjugate_gradient(
      X.cols(), y, [&](const Matrix& p) { return multiply(X, p); },
      [&](const Matrix& v) {
        Matrix t = multiply(Matrix(1, v.rows(), std::vector<double>(v.values().begin(), v.values().end())), X);
        return Matrix(t.cols(), 1, std::move(t.data()));
      },
      maxiter, reg, stats);
}

Matrix train_lm_cg(const CompressedMatrix& X, const Matrix& y, std::optional<std::size_t> maxiter, double reg,
                   CgStats* stats) {
  check_rows(X.nrows(), y);
  if (!all_finite(X)) throw TypeError("non-finite value in lmCG input");
  return conjugate_gradient(
      X.ncols(), y, [&](const Matrix& p) { return right_mm(X, p); },
      [&](const Matrix& v) {
        Matrix t = left_mm(Matrix(1, v.rows(), std::vector<double>(v.values().begin(), v.values().end())), X);
        return Matrix(t.cols(), 1, std::move(t.data()));
      },
      maxiter, reg, stats);
}

// ---------------------------------------------------------------- graph

const char* to_string(NodeKind k) {
  switch (k) {
    case NodeKind::READ: return "READ";
    case NodeKind::TRANSFORM_ENCODE: return "TRANSFORM_ENCODE";
    case NodeKind::SCALAR: return "SCALAR";
    case NodeKind::CBIND: return "CBIND";
    case NodeKind::LMM: return "LMM";
    case NodeKind::SELECTION_MM: return "SELECTION_MM";
    case NodeKind::SLICE: return "SLICE";
    case NodeKind::LOOP: return "LOOP";
    case NodeKind::TRAIN_LM_CG: return "TRAIN_LM_CG";
    case NodeKind::WRITE: return "WRITE";
    case NodeKind::MORPH: return "MORPH";
  }
  return "?";
}

std::size_t PipelineGraph::count(NodeKind k) const {
  return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [&](const Node& n) { return n.kind == k; }));
}

std::vector<std::size_t> PipelineGraph::consumers(std::size_t id) const {
  std::vector<std::size_t> out;
  for (const auto& n : nodes)
    if (std::find(n.inputs.begin(), n.inputs.end(), id) != n.inputs.end()) out.push_back(n.id);
  return out;
}

namespace {

std::string arg_text(const Arg& a) {
  switch (a.kind) {
    case Arg::Kind::NUMBER: {
      std::ostringstream s;
      s << a.number;
      return s.str();
    }
    case Arg::Kind::STRING: return nlohmann::json(a.text).dump();
    case Arg::Kind::VAR: return a.text;
    case Arg::Kind::LIST: {
      if (a.text == ":") return arg_text(a.list[0]) + ":" + arg_text(a.list[1]);
      std::string s = "[";
      for (std::size_t i = 0; i < a.list.size(); ++i) s += (i ? ", " : "") + arg_text(a.list[i]);
      return s + "]";
    }
  }
  return "";
}

void dump(const PipelineGraph& g, const std::vector<std::size_t>& seq, int depth, std::ostringstream& out) {
  for (auto id : seq) {
    const Node& n = g.node(id);
    out << std::string(2 * depth, ' ') << "%" << n.id << " " << to_string(n.kind);
    if (n.kind == NodeKind::LOOP) {
      out << (n.parallel ? " parfor " : " for ") << n.var << " in " << arg_text(n.range) << "\n";
      dump(g, n.body, depth + 1, out);
      continue;
    }
    out << "(";
    for (std::size_t i = 0; i < n.inputs.size(); ++i) out << (i ? ", " : "") << "%" << n.inputs[i];
    out << ")";
    for (const auto& [k, v] : n.params) out << " " << k << "=" << arg_text(v);
    if (n.compress) out << " compress";
    if (n.injected) out << " injected";
    if (!n.name.empty()) out << " -> " << n.name;
    out << "\n";
  }
}

}  // namespace

std::string PipelineGraph::to_text() const {
  std::ostringstream out;
  dump(*this, top, 0, out);
  return out.str();
}

// ---------------------------------------------------------------- parsing

namespace {

enum class Tok { IDENT, NUMBER, STRING, PUNCT, END_STMT, END };

struct Token {
  Tok kind;
  std::string text;
  double number = 0.0;
  int line = 0;
};

[[noreturn]] void syntax(int line, const std::string& msg) { throw ParseError("line " + std::to_string(line) + ": " + msg); }

std::vector<Token> lex(const std::string& src) {
  std::vector<Token> out;
  int line = 1;
  std::size_t i = 0;
  while (i < src.size()) {
    char c = src[i];
    if (c == '#') {
      while (i < src.size() && src[i] != '\n') ++i;
    } else if (c == '\n' || c == ';') {
      out.push_back({Tok::END_STMT, std::string(1, c), 0, line});
      line += c == '\n';
      ++i;
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
    } else if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t j = i;
      while (j < src.size() && (std::isalnum(static_cast<unsigned char>(src[j])) || src[j] == '_')) ++j;
      out.push_back({Tok::IDENT, src.substr(i, j - i), 0, line});
      i = j;
    } else if (std::isdigit(static_cast<unsigned char>(c)) || (c == '.' && i + 1 < src.size() && std::isdigit(static_cast<unsigned char>(src[i + 1])))) {
      std::size_t used = 0;
      double v = std::stod(src.substr(i), &used);
      out.push_back({Tok::NUMBER, src.substr(i, used), v, line});
      i += used;
    } else if (c == '"') {
      std::string s;
      ++i;
      while (true) {
        if (i >= src.size() || src[i] == '\n') syntax(line, "unterminated string");
        if (src[i] == '"') break;
        if (src[i] == '\\' && i + 1 < src.size()) ++i;
        s += src[i++];
      }
      ++i;
      out.push_back({Tok::STRING, s, 0, line});
    } else if (std::string("()[]{},=:-").find(c) != std::string::npos) {
      out.push_back({Tok::PUNCT, std::string(1, c), 0, line});
      ++i;
    } else {
      syntax(line, std::string("unexpected character '") + c + "'");
    }
  }
  out.push_back({Tok::END, "", 0, line});
  return out;
}

struct Signature {
  NodeKind kind;
  std::size_t min_data, max_data;
  std::vector<std::string> positional;
  std::size_t required;
  std::set<std::string> named;
};

const std::map<std::string, Signature>& signatures() {
  static const std::map<std::string, Signature> table = {
      {"read", {NodeKind::READ, 0, 0, {"path"}, 1, {}}},
      {"transformencode", {NodeKind::TRANSFORM_ENCODE, 1, 1, {"spec"}, 1, {"bins", "path"}}},
      {"scalar", {NodeKind::SCALAR, 1, 1, {"op", "c"}, 1, {}}},
      {"cbind", {NodeKind::CBIND, 2, 64, {}, 0, {}}},
      {"augment", {NodeKind::CBIND, 1, 1, {"powers"}, 1, {}}},
      {"lmm", {NodeKind::LMM, 2, 2, {}, 0, {}}},
      {"select", {NodeKind::SELECTION_MM, 1, 1, {"rows"}, 1, {}}},
      {"slice", {NodeKind::SLICE, 1, 1, {"lo", "hi"}, 2, {}}},
      {"lmCG", {NodeKind::TRAIN_LM_CG, 2, 2, {"maxiter", "reg"}, 0, {"maxiter", "reg"}}},
      {"write", {NodeKind::WRITE, 1, 1, {"path"}, 1, {}}},
      {"morph", {NodeKind::MORPH, 1, 1, {}, 0, {}}},
  };
  return table;
}

const std::set<std::string>& scalar_ops() {
  static const std::set<std::string> ops = {"add", "sub", "mul", "div", "pow", "log", "sqrt", "abs", "round",
                                            "floor", "ceil", "eq", "ne", "lt", "le", "gt", "ge"};
  return ops;
}

bool integer_op(const std::string& op) {
  static const std::set<std::string> ops = {"round", "floor", "ceil", "eq", "ne", "lt", "le", "gt", "ge"};
  return ops.count(op) > 0;
}

struct Scope {
  std::map<std::string, std::size_t> data;
  std::set<std::string> loop_vars;
};

class Parser {
 public:
  Parser(std::vector<Token> toks, PipelineGraph& g) : t_(std::move(toks)), g_(g) {}

  void program() {
    Scope scope;
    g_.top = block(scope, std::nullopt, false);
  }

 private:
  std::vector<Token> t_;
  std::size_t p_ = 0;
  PipelineGraph& g_;

  const Token& peek() const { return t_[p_]; }
  const Token& next() { return t_[p_++]; }
  bool is(const char* punct) const { return peek().kind == Tok::PUNCT && peek().text == punct; }
  void expect(const char* punct) {
    if (!is(punct)) syntax(peek().line, std::string("expected '") + punct + "' but found '" + peek().text + "'");
    ++p_;
  }
  void skip_ends() {
    while (peek().kind == Tok::END_STMT) ++p_;
  }

  std::vector<std::size_t> block(Scope scope, std::optional<std::size_t> loop, bool braced) {
    std::vector<std::size_t> seq;
    while (true) {
      skip_ends();
      if (braced && is("}")) {
        ++p_;
        return seq;
      }
      if (peek().kind == Tok::END) {
        if (braced) syntax(peek().line, "missing '}'");
        return seq;
      }
      seq.push_back(statement(scope, loop));
      if (peek().kind != Tok::END_STMT && peek().kind != Tok::END && !(braced && is("}")))
        syntax(peek().line, "expected end of statement, found '" + peek().text + "'");
    }
  }

  std::size_t statement(Scope& scope, std::optional<std::size_t> loop) {
    const Token& first = peek();
    if (first.kind != Tok::IDENT) syntax(first.line, "expected a statement, found '" + first.text + "'");
    if (first.text == "for" || first.text == "parfor") return loop_stmt(scope, loop);
    if (t_[p_ + 1].kind == Tok::PUNCT && t_[p_ + 1].text == "=") {
      std::string name = next().text;
      ++p_;
      if (signatures().count(name) || name == "for" || name == "parfor" || name == "in")
        syntax(first.line, "cannot assign to reserved name '" + name + "'");
      if (scope.loop_vars.count(name)) syntax(first.line, "cannot assign to loop variable '" + name + "'");
      std::size_t id = call(scope, loop);
      g_.nodes[id].name = name;
      scope.data[name] = id;
      return id;
    }
    return call(scope, loop);
  }

  std::size_t loop_stmt(Scope& scope, std::optional<std::size_t> loop) {
    const Token& kw = next();
    Node n;
    n.id = g_.nodes.size();
    n.kind = NodeKind::LOOP;
    n.line = kw.line;
    n.loop = loop;
    n.parallel = kw.text == "parfor";
    bool paren = is("(");
    if (paren) ++p_;
    if (peek().kind != Tok::IDENT) syntax(peek().line, "expected loop variable");
    n.var = next().text;
    if (peek().kind != Tok::IDENT || peek().text != "in") syntax(peek().line, "expected 'in'");
    ++p_;
    n.range = range(scope);
    if (paren) expect(")");
    skip_ends();
    if (!is("{")) syntax(peek().line, "expected '{' to open the loop body");
    ++p_;
    g_.nodes.push_back(n);
    Scope inner = scope;
    inner.loop_vars.insert(n.var);
    inner.data.erase(n.var);
    auto body = block(inner, n.id, true);
    g_.nodes[n.id].body = std::move(body);
    return n.id;
  }

  Arg range(const Scope& scope) {
    if (is("[")) {
      Arg a = list(scope);
      if (a.list.empty()) syntax(peek().line, "empty loop range");
      return a;
    }
    int line = peek().line;
    Arg lo = scalar_literal(scope);
    expect(":");
    Arg hi = scalar_literal(scope);
    if (lo.kind == Arg::Kind::NUMBER && hi.kind == Arg::Kind::NUMBER) {
      if (hi.number < lo.number) syntax(line, "empty loop range");
      Arg out{Arg::Kind::LIST, 0.0, {}, {}};
      for (double v = lo.number; v <= hi.number; v += 1.0) out.list.push_back(Arg::num(v));
      return out;
    }
    return {Arg::Kind::LIST, 0.0, ":", {lo, hi}};
  }

  Arg scalar_literal(const Scope& scope) {
    const Token& tk = peek();
    if (is("-")) {
      ++p_;
      if (peek().kind != Tok::NUMBER) syntax(tk.line, "expected a number after '-'");
      return Arg::num(-next().number);
    }
    if (tk.kind == Tok::NUMBER) return Arg::num(next().number);
    if (tk.kind == Tok::STRING) return Arg::str(next().text);
    if (tk.kind == Tok::IDENT) {
      if (!scope.loop_vars.count(tk.text)) {
        if (scope.data.count(tk.text)) syntax(tk.line, "'" + tk.text + "' is data, expected a literal or loop variable");
        syntax(tk.line, "use of undefined variable '" + tk.text + "'");
      }
      return Arg::var(next().text);
    }
    syntax(tk.line, "expected a value, found '" + tk.text + "'");
  }

  Arg list(const Scope& scope) {
    expect("[");
    Arg a{Arg::Kind::LIST, 0.0, {}, {}};
    while (!is("]")) {
      a.list.push_back(scalar_literal(scope));
      if (!is("]")) expect(",");
    }
    ++p_;
    return a;
  }

  std::size_t call(const Scope& scope, std::optional<std::size_t> loop) {
    const Token& fn = peek();
    if (fn.kind != Tok::IDENT) syntax(fn.line, "expected a call");
    auto it = signatures().find(fn.text);
    if (it == signatures().end()) syntax(fn.line, "unknown function '" + fn.text + "'");
    const Signature& sig = it->second;
    ++p_;
    expect("(");
    Node n;
    n.id = g_.nodes.size();
    n.kind = sig.kind;
    n.line = fn.line;
    n.loop = loop;
    std::size_t positional = 0;
    std::vector<std::pair<std::string, Arg>> named;
    while (!is(")")) {
      if (peek().kind == Tok::END) syntax(fn.line, "unterminated call to " + fn.text);
      const Token& tk = peek();
      if (tk.kind == Tok::IDENT && t_[p_ + 1].kind == Tok::PUNCT && t_[p_ + 1].text == "=") {
        std::string key = next().text;
        ++p_;
        if (!sig.named.count(key)) syntax(tk.line, fn.text + "() has no parameter '" + key + "'");
        named.emplace_back(key, is("[") ? list(scope) : scalar_literal(scope));
      } else if (!named.empty()) {
        syntax(tk.line, "positional argument after named argument in " + fn.text + "()");
      } else if (n.inputs.size() < sig.max_data && positional == 0 &&
                 (n.inputs.size() < sig.min_data || (tk.kind == Tok::IDENT && scope.data.count(tk.text)))) {
        if (tk.kind != Tok::IDENT) syntax(tk.line, fn.text + "() expects a data variable as argument " + std::to_string(n.inputs.size() + 1));
        auto d = scope.data.find(tk.text);
        if (d == scope.data.end()) {
          if (scope.loop_vars.count(tk.text)) syntax(tk.line, "loop variable '" + tk.text + "' used as data");
          syntax(tk.line, "use of undefined variable '" + tk.text + "'");
        }
        n.inputs.push_back(d->second);
        ++p_;
      } else {
        if (positional >= sig.positional.size()) syntax(tk.line, "too many arguments to " + fn.text + "()");
        n.params[sig.positional[positional++]] = is("[") ? list(scope) : scalar_literal(scope);
      }
      if (!is(")")) expect(",");
    }
    ++p_;
    if (n.inputs.size() < sig.min_data)
      syntax(fn.line, fn.text + "() expects at least " + std::to_string(sig.min_data) + " data argument(s), got " +
                          std::to_string(n.inputs.size()));
    for (auto& [k, v] : named) {
      if (n.params.count(k)) syntax(fn.line, "parameter '" + k + "' given twice");
      n.params[k] = v;
    }
    for (std::size_t i = 0; i < sig.required; ++i)
      if (!n.params.count(sig.positional[i]))
        syntax(fn.line, fn.text + "() is missing argument '" + sig.positional[i] + "'");
    if (n.kind == NodeKind::SCALAR) {
      const Arg& op = n.params.at("op");
      if (op.kind == Arg::Kind::STRING && !scalar_ops().count(op.text))
        syntax(fn.line, "unknown scalar op '" + op.text + "'");
    }
    g_.nodes.push_back(std::move(n));
    return g_.nodes.back().id;
  }
};

}  // namespace

PipelineGraph parse_pipeline(const std::string& text, const std::string& base_dir) {
  PipelineGraph g;
  g.base_dir = base_dir;
  Parser(lex(text), g).program();
  return g;
}

// ---------------------------------------------------------------- workload

namespace {

double trip_count(const Node& loop, const PlannerOptions& opts) {
  if (loop.range.text == ":") return opts.default_trip;
  return static_cast<double>(loop.range.list.size());
}

double trips(const PipelineGraph& g, const Node& n, const PlannerOptions& opts) {
  double t = 1.0;
  for (auto l = n.loop; l; l = g.node(*l).loop) t *= trip_count(g.node(*l), opts);
  return t;
}

// Structure-preserving consumers pass the candidate's representation on.
bool forwards(const Node& n) {
  switch (n.kind) {
    case NodeKind::SCALAR:
    case NodeKind::CBIND:
    case NodeKind::SLICE:
    case NodeKind::SELECTION_MM:
    case NodeKind::MORPH:
    case NodeKind::TRANSFORM_ENCODE: return true;
    default: return false;
  }
}

double literal_number(const Node& n, const char* key, double fallback) {
  auto it = n.params.find(key);
  if (it == n.params.end() || it->second.kind != Arg::Kind::NUMBER) return fallback;
  return it->second.number;
}

WorkloadVector op_cost(const Node& u, std::size_t from, const PlannerOptions& opts) {
  WorkloadVector w;
  switch (u.kind) {
    case NodeKind::SCALAR: w.scalar = 1; break;
    case NodeKind::LMM: w.lmm = 1; break;
    case NodeKind::TRAIN_LM_CG:
      if (u.inputs[0] == from) {
        double it = literal_number(u, "maxiter", opts.default_trip);
        w.lmm = it;
        w.rmm = it;
      } else {
        w.scan = 1;
      }
      break;
    case NodeKind::TRANSFORM_ENCODE:
    case NodeKind::CBIND:
    case NodeKind::SLICE:
    case NodeKind::SELECTION_MM:
    case NodeKind::WRITE: w.scan = 1; break;
    default: break;
  }
  return w;
}

}  // namespace

bool is_candidate(const Node& n) {
  if (n.kind == NodeKind::READ || n.kind == NodeKind::TRANSFORM_ENCODE) return true;
  if (n.kind == NodeKind::SCALAR) {
    const Arg& op = n.params.at("op");
    return op.kind == Arg::Kind::STRING && integer_op(op.text);
  }
  return false;
}

std::map<std::size_t, WorkloadVector> extract_workload(const PipelineGraph& g, const PlannerOptions& opts) {
  std::vector<std::vector<std::size_t>> consumers(g.nodes.size());
  for (const auto& n : g.nodes)
    for (auto in : n.inputs)
      if (std::find(consumers[in].begin(), consumers[in].end(), n.id) == consumers[in].end()) consumers[in].push_back(n.id);

  std::map<std::size_t, WorkloadVector> out;
  for (const auto& c : g.nodes) {
    if (!is_candidate(c)) continue;
    const double base = trips(g, c, opts);
    WorkloadVector w;
    std::set<std::size_t> seen;
    std::function<void(std::size_t)> walk = [&](std::size_t v) {
      for (auto u : consumers[v]) {
        if (!seen.insert(u).second) continue;
        const Node& un = g.node(u);
        w += op_cost(un, v, opts).scaled(trips(g, un, opts) / base);
        // A frame feeds on into transform outputs; matrices stop at a second encode.
        if (forwards(un) && (un.kind != NodeKind::TRANSFORM_ENCODE || c.kind == NodeKind::READ)) walk(u);
      }
    };
    walk(c.id);
    out[c.id] = w;
  }
  return out;
}

PipelineGraph inject_morphs(const PipelineGraph& g, const std::map<std::size_t, WorkloadVector>& vectors,
                            const PlannerOptions& opts) {
  PipelineGraph out = g;
  for (const auto& [id, w] : vectors) {
    // Nominal check in units of one pass over the intermediate.
    if (!(opts.nominal_saving * w.total() > opts.benefit_factor * opts.morph_scans)) continue;
    Node& c = out.nodes[id];
    if (c.kind == NodeKind::READ) {
      const Arg& path = c.params.at("path");
      // A tiled input is read compressed as is.
      bool tiled = path.kind == Arg::Kind::STRING &&
                   fs::exists(fs::path(out.base_dir) / path.text / "meta.bwt");
      if (!tiled && !c.compress) {
        c.compress = true;
        c.workload = w;
      }
      continue;
    }
    auto users = out.consumers(id);
    if (users.empty()) continue;
    if (users.size() == 1 && out.node(users[0]).kind == NodeKind::MORPH) continue;
    Node m;
    m.id = out.nodes.size();
    m.kind = NodeKind::MORPH;
    m.line = c.line;
    m.loop = c.loop;
    m.inputs = {id};
    m.workload = w;
    m.injected = true;
    for (auto u : users)
      for (auto& in : out.nodes[u].inputs)
        if (in == id) in = m.id;
    auto& seq = c.loop ? out.nodes[*c.loop].body : out.top;
    seq.insert(std::find(seq.begin(), seq.end(), id) + 1, m.id);
    out.nodes.push_back(std::move(m));
  }
  return out;
}

// ---------------------------------------------------------------- execution

std::uint64_t value_bytes(const Value& v) {
  return std::visit(overloaded{
                        [](const std::monostate&) -> std::uint64_t { return 0; },
                        [](double) -> std::uint64_t { return 8; },
                        [](const std::string& s) -> std::uint64_t { return s.size(); },
                        [](const std::shared_ptr<const Frame>& f) -> std::uint64_t {
                          std::uint64_t b = 0;
                          for (const auto& c : f->columns()) b += c.payload_bytes();
                          return b;
                        },
                        [](const std::shared_ptr<const CompressedFrame>& f) -> std::uint64_t {
                          return frame_memory_estimate(*f);
                        },
                        [](const std::shared_ptr<const Matrix>& m) -> std::uint64_t { return m->memory_bytes(); },
                        [](const std::shared_ptr<const CompressedMatrix>& m) -> std::uint64_t {
                          return m->memory_size();
                        },
                    },
                    v);
}

std::string metric_to_json(const NodeMetric& m) {
  nlohmann::json j;
  j["node"] = m.node;
  j["op"] = m.op;
  j["bindings"] = m.bindings;
  j["ms"] = m.ms;
  j["bytes_in"] = m.bytes_in;
  j["bytes_out"] = m.bytes_out;
  j["groups"] = m.groups;
  if (m.op == "MORPH") j["applied"] = m.applied;
  return j.dump();
}

namespace {

using Binding = std::pair<std::string, Arg>;

struct Env {
  std::vector<Value> vals;
  std::vector<Binding> bind;
};

struct Sink {
  std::vector<ModelResult> models;
  std::vector<NodeMetric> metrics;
};

[[noreturn]] void rethrow_at(const Node& n, const std::exception& e) {
  std::string msg = "node " + std::to_string(n.id) + " (" + to_string(n.kind) + ", line " + std::to_string(n.line) +
                    "): " + e.what();
  if (dynamic_cast<const ParseError*>(&e)) throw ParseError(msg);
  if (dynamic_cast<const IoError*>(&e)) throw IoError(msg);
  if (dynamic_cast<const FormatError*>(&e)) throw FormatError(msg);
  if (dynamic_cast<const TypeError*>(&e)) throw TypeError(msg);
  if (dynamic_cast<const ShapeError*>(&e)) throw ShapeError(msg);
  if (dynamic_cast<const BoundsError*>(&e)) throw BoundsError(msg);
  if (dynamic_cast<const SpecError*>(&e)) throw SpecError(msg);
  if (dynamic_cast<const PlanError*>(&e)) throw PlanError(msg);
  if (dynamic_cast<const UnsupportedError*>(&e)) throw UnsupportedError(msg);
  throw Error(msg);
}

template <class T>
Value wrap(T v) {
  return std::make_shared<const T>(std::move(v));
}

Value wrap_encoded(EncodedMatrix m) {
  if (auto* c = std::get_if<CompressedMatrix>(&m)) return wrap(std::move(*c));
  if (auto* d = std::get_if<Matrix>(&m)) return wrap(std::move(*d));
  return wrap(materialize(m));
}

Value wrap_tiled(TiledObject o) {
  return std::visit([](auto&& x) -> Value { return wrap(std::move(x)); }, std::move(o));
}

Matrix frame_numbers(const Frame& f) {
  TransformSpec spec;
  spec.columns.resize(f.ncols());
  return materialize(transform_encode(f, spec, EncodePath::F_M).matrix);
}

class Interpreter {
 public:
  Interpreter(const PipelineGraph& g, const ExecOptions& o) : g_(g), o_(o) {}

  void run(const std::vector<std::size_t>& seq, Env& env, Sink& sink, bool may_fork) {
    for (auto id : seq) {
      const Node& n = g_.node(id);
      if (n.kind == NodeKind::LOOP) loop(n, env, sink, may_fork);
      else eval(n, env, sink);
    }
  }

 private:
  const PipelineGraph& g_;
  const ExecOptions& o_;

  Arg resolve(const Arg& a, const Env& env) const {
    if (a.kind == Arg::Kind::VAR) {
      for (auto it = env.bind.rbegin(); it != env.bind.rend(); ++it)
        if (it->first == a.text) return it->second;
      throw PlanError("unbound loop variable " + a.text);
    }
    if (a.kind == Arg::Kind::LIST) {
      Arg out = a;
      for (auto& x : out.list) x = resolve(x, env);
      return out;
    }
    return a;
  }

  std::optional<Arg> param(const Node& n, const char* key, const Env& env) const {
    auto it = n.params.find(key);
    if (it == n.params.end()) return std::nullopt;
    return resolve(it->second, env);
  }

  double number(const Node& n, const char* key, const Env& env) const {
    auto a = param(n, key, env);
    if (!a || a->kind != Arg::Kind::NUMBER) throw SpecError(std::string("parameter '") + key + "' must be a number");
    return a->number;
  }

  std::string text(const Node& n, const char* key, const Env& env) const {
    auto a = param(n, key, env);
    if (!a) throw SpecError(std::string("missing parameter '") + key + "'");
    if (a->kind == Arg::Kind::STRING) return a->text;
    if (a->kind == Arg::Kind::NUMBER) return arg_text(*a);
    throw SpecError(std::string("parameter '") + key + "' must be a string");
  }

  std::string path(const std::string& p) const {
    fs::path q(p);
    return q.is_absolute() ? p : (fs::path(g_.base_dir) / q).string();
  }

  static std::string bindings(const Env& env) {
    std::string s;
    for (const auto& [k, v] : env.bind) s += (s.empty() ? "" : ",") + k + "=" + (v.kind == Arg::Kind::STRING ? v.text : arg_text(v));
    return s;
  }

  void loop(const Node& n, Env& env, Sink& sink, bool may_fork) {
    Arg r = resolve(n.range, env);
    std::vector<Arg> items;
    if (r.text == ":") {
      if (r.list[0].kind != Arg::Kind::NUMBER || r.list[1].kind != Arg::Kind::NUMBER)
        throw SpecError("loop range bounds must be numbers");
      for (double v = r.list[0].number; v <= r.list[1].number; v += 1.0) items.push_back(Arg::num(v));
    } else {
      items = r.list;
    }
    std::vector<Sink> parts(items.size());
    auto iteration = [&](std::size_t i, bool fork) {
      Env local = env;
      local.bind.emplace_back(n.var, items[i]);
      run(n.body, local, parts[i], fork);
    };
    std::size_t workers = o_.threads ? o_.threads : num_threads();
    if (n.parallel && may_fork && workers > 1 && items.size() > 1) {
      // Iterations get private environments; only the outermost parfor forks.
      std::atomic<std::size_t> next{0};
      std::exception_ptr error;
      std::mutex mu;
      std::vector<std::thread> pool;
      for (std::size_t w = 0; w < std::min(workers, items.size()); ++w)
        pool.emplace_back([&] {
          for (std::size_t i; (i = next.fetch_add(1)) < items.size();) {
            try {
              iteration(i, false);
            } catch (...) {
              std::lock_guard lock(mu);
              if (!error) error = std::current_exception();
            }
          }
        });
      for (auto& t : pool) t.join();
      if (error) std::rethrow_exception(error);
    } else {
      for (std::size_t i = 0; i < items.size(); ++i) iteration(i, may_fork);
    }
    for (auto& p : parts) {
      sink.models.insert(sink.models.end(), std::make_move_iterator(p.models.begin()),
                         std::make_move_iterator(p.models.end()));
      sink.metrics.insert(sink.metrics.end(), p.metrics.begin(), p.metrics.end());
    }
  }

  template <class T>
  std::shared_ptr<const T> get(const Value& v) const {
    if (auto* p = std::get_if<std::shared_ptr<const T>>(&v)) return *p;
    return nullptr;
  }

  Matrix dense(const Value& v) const {
    if (auto m = get<Matrix>(v)) return *m;
    if (auto c = get<CompressedMatrix>(v)) return decompress(*c);
    if (auto f = get<Frame>(v)) return frame_numbers(*f);
    if (auto f = get<CompressedFrame>(v)) return frame_numbers(decompress_frame(*f));
    throw TypeError("expected a matrix or frame");
  }

  void eval(const Node& n, Env& env, Sink& sink) {
    auto t0 = std::chrono::steady_clock::now();
    NodeMetric metric;
    metric.node = n.id;
    metric.op = to_string(n.kind);
    metric.bindings = bindings(env);
    try {
      std::vector<Value> in;
      for (auto i : n.inputs) {
        in.push_back(env.vals.at(i));
        metric.bytes_in += value_bytes(in.back());
      }
      Value out = compute(n, in, env, sink, metric);
      metric.bytes_out = value_bytes(out);
      if (auto c = get<CompressedMatrix>(out)) metric.groups = c->groups().size();
      if (env.vals.size() < g_.nodes.size()) env.vals.resize(g_.nodes.size());
      env.vals[n.id] = std::move(out);
    } catch (const std::exception& e) {
      rethrow_at(n, e);
    }
    metric.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    sink.metrics.push_back(std::move(metric));
  }

  CellOp cell_op(const std::string& op, double c) const {
    if (op == "add") return [c](double x) { return x + c; };
    if (op == "sub") return [c](double x) { return x - c; };
    if (op == "mul") return [c](double x) { return x * c; };
    if (op == "div") return [c](double x) { return x / c; };
    if (op == "pow") return [c](double x) { return std::pow(x, c); };
    if (op == "log") return [](double x) { return std::log(x); };
    if (op == "sqrt") return [](double x) { return std::sqrt(x); };
    if (op == "abs") return [](double x) { return std::fabs(x); };
    if (op == "round") return [](double x) { return std::round(x); };
    if (op == "floor") return [](double x) { return std::floor(x); };
    if (op == "ceil") return [](double x) { return std::ceil(x); };
    if (op == "eq") return [c](double x) { return x == c ? 1.0 : 0.0; };
    if (op == "ne") return [c](double x) { return x != c ? 1.0 : 0.0; };
    if (op == "lt") return [c](double x) { return x < c ? 1.0 : 0.0; };
    if (op == "le") return [c](double x) { return x <= c ? 1.0 : 0.0; };
    if (op == "gt") return [c](double x) { return x > c ? 1.0 : 0.0; };
    if (op == "ge") return [c](double x) { return x >= c ? 1.0 : 0.0; };
    throw SpecError("unknown scalar op '" + op + "'");
  }

  Value apply_scalar(const Value& x, const CellOp& f) const {
    if (auto c = get<CompressedMatrix>(x)) return wrap(scalar_op(*c, f));
    Matrix m = dense(x);
    for (auto& v : m.data()) v = f(v);
    return wrap(std::move(m));
  }

  Value compute(const Node& n, const std::vector<Value>& in, Env& env, Sink& sink, NodeMetric& metric) {
    switch (n.kind) {
      case NodeKind::READ: {
        std::string p = path(text(n, "path", env));
        if (fs::exists(fs::path(p) / "meta.bwt")) return wrap_tiled(read_tiled(p, {ReadMode::POOLED, o_.threads}));
        Frame f = read_csv(p);
        if (n.compress) return wrap(compress_frame(f));
        return wrap(std::move(f));
      }
      case NodeKind::TRANSFORM_ENCODE: {
        std::string spec = text(n, "spec", env);
        auto first = spec.find_first_not_of(" \t\r\n");
        if (first == std::string::npos || spec[first] != '{') {
          std::ifstream f(path(spec));
          if (!f) throw IoError("cannot open spec " + path(spec));
          spec.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
        }
        auto cf = get<CompressedFrame>(in[0]);
        auto fr = get<Frame>(in[0]);
        if (!cf && !fr) throw TypeError("transformencode expects a frame");
        const auto& names = cf ? cf->names() : fr->names();
        TransformSpec ts = parse_transform_spec(spec, names, g_.base_dir);
        if (param(n, "bins", env)) {
          auto bins = static_cast<std::uint32_t>(number(n, "bins", env));
          for (auto& c : ts.columns)
            if (c.kind == Directive::BIN) c.bins = bins;
        }
        EncodePath route = cf ? EncodePath::CF_CM : EncodePath::F_M;
        if (param(n, "path", env)) route = encode_path_from_string(text(n, "path", env));
        if (cf && route != EncodePath::CF_CM) return wrap_encoded(transform_encode(decompress_frame(*cf), ts, route).matrix);
        if (cf) return wrap_encoded(transform_encode(*cf, ts, route).matrix);
        if (route == EncodePath::CF_CM) return wrap_encoded(transform_encode(compress_frame(*fr), ts, route).matrix);
        return wrap_encoded(transform_encode(*fr, ts, route).matrix);
      }
      case NodeKind::SCALAR: {
        std::string op = text(n, "op", env);
        double c = param(n, "c", env) ? number(n, "c", env) : 0.0;
        return apply_scalar(in[0], cell_op(op, c));
      }
      case NodeKind::CBIND: {
        std::vector<Value> parts = in;
        if (param(n, "powers", env)) {
          double k = number(n, "powers", env);
          if (k < 1 || k != std::floor(k)) throw SpecError("augment degree must be a positive integer");
          for (int j = 2; j <= static_cast<int>(k); ++j) parts.push_back(apply_scalar(in[0], cell_op("pow", j)));
        }
        bool compressed = std::all_of(parts.begin(), parts.end(), [&](const Value& v) { return get<CompressedMatrix>(v) != nullptr; });
        if (compressed) {
          std::vector<CompressedMatrix> cms;
          for (const auto& v : parts) cms.push_back(*get<CompressedMatrix>(v));
          return wrap(cbind(cms));
        }
        Matrix acc = dense(parts[0]);
        for (std::size_t i = 1; i < parts.size(); ++i) acc = cbind(acc, dense(parts[i]));
        return wrap(std::move(acc));
      }
      case NodeKind::LMM: {
        Matrix a = dense(in[0]);
        if (auto c = get<CompressedMatrix>(in[1])) return wrap(left_mm(a, *c));
        return wrap(multiply(a, dense(in[1])));
      }
      case NodeKind::SELECTION_MM: {
        Arg rows = *param(n, "rows", env);
        if (rows.kind != Arg::Kind::LIST) throw SpecError("select expects a list of row indexes");
        std::vector<std::uint32_t> idx;
        for (const auto& r : rows.list) {
          if (r.kind != Arg::Kind::NUMBER || r.number < 0) throw SpecError("row indexes must be non-negative numbers");
          idx.push_back(static_cast<std::uint32_t>(r.number));
        }
        if (auto c = get<CompressedMatrix>(in[0])) return wrap(selection_mm(SelectionMatrix(c->nrows(), idx), *c));
        Matrix m = dense(in[0]);
        SelectionMatrix s(m.rows(), idx);
        Matrix out(idx.size(), m.cols());
        for (std::size_t i = 0; i < idx.size(); ++i) std::copy(m.row(idx[i]), m.row(idx[i]) + m.cols(), out.row(i));
        return wrap(std::move(out));
      }
      case NodeKind::SLICE: {
        double lo = number(n, "lo", env), hi = number(n, "hi", env);
        if (lo < 0 || hi < lo) throw BoundsError("bad slice bounds");
        if (auto c = get<CompressedMatrix>(in[0])) return wrap(slice_rows(*c, static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)));
        Matrix m = dense(in[0]);
        if (hi > m.rows()) throw BoundsError("slice beyond the last row");
        return wrap(m.slice_rows(static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)));
      }
      case NodeKind::TRAIN_LM_CG: {
        Matrix y = dense(in[1]);
        std::optional<std::size_t> maxiter;
        if (param(n, "maxiter", env)) maxiter = static_cast<std::size_t>(number(n, "maxiter", env));
        double reg = param(n, "reg", env) ? number(n, "reg", env) : 1e-7;
        CgStats st;
        Matrix beta;
        if (auto c = get<CompressedMatrix>(in[0])) beta = train_lm_cg(*c, y, maxiter, reg, &st);
        else beta = train_lm_cg(dense(in[0]), y, maxiter, reg, &st);
        // X is scanned twice per iteration plus once for X^T y.
        metric.bytes_in = value_bytes(in[0]) * (2 * st.iterations + 1) + value_bytes(in[1]);
        sink.models.push_back({n.id, bindings(env), beta, st.iterations});
        return wrap(std::move(beta));
      }
      case NodeKind::WRITE: {
        std::string p = path(text(n, "path", env));
        bool csv = p.size() >= 4 && p.substr(p.size() - 4) == ".csv";
        if (auto f = get<Frame>(in[0])) {
          write_csv(*f, p);
        } else if (auto cf = get<CompressedFrame>(in[0])) {
          if (csv) write_csv(decompress_frame(*cf), p);
          else write_tiled(*cf, p);
        } else if (auto c = get<CompressedMatrix>(in[0]); c && !csv) {
          write_tiled(*c, p);
        } else {
          Matrix m = dense(in[0]);
          if (!csv) {
            write_tiled(m, p);
          } else {
            std::vector<std::string> names;
            std::vector<TypedColumn> cols;
            for (std::size_t j = 0; j < m.cols(); ++j) {
              std::vector<double> v(m.rows());
              for (std::size_t r = 0; r < m.rows(); ++r) v[r] = m(r, j);
              names.push_back("V" + std::to_string(j + 1));
              cols.push_back(TypedColumn::fp64(std::move(v)));
            }
            write_csv(Frame(std::move(names), std::move(cols)), p);
          }
        }
        return std::monostate{};
      }
      case NodeKind::MORPH: return morph_node(n, in[0], metric);
      case NodeKind::LOOP: break;
    }
    throw PlanError("cannot evaluate node kind");
  }

  Value morph_node(const Node& n, const Value& x, NodeMetric& metric) {
    if (auto m = get<Matrix>(x)) {
      // Uncompressed at runtime: morphing compresses it.
      metric.applied = true;
      return wrap(morph(*m, n.workload));
    }
    auto cm = get<CompressedMatrix>(x);
    if (!cm) return x;
    Classification stats = classify(*cm);
    MorphPlan plan = group(stats, n.workload);
    if (o_.runtime_check) {
      double after = 0.0;
      for (const auto& pg : plan.groups) after += pg.est_bytes;
      double saved = (static_cast<double>(cm->memory_size()) - after) * std::max(1.0, n.workload.total());
      if (!(saved > o_.planner.benefit_factor * estimate_morph_cost(*cm, plan))) return x;
    }
    metric.applied = true;
    return wrap(execute_plan(*cm, stats, plan));
  }
};

}  // namespace

ExecResult execute(const PipelineGraph& g, const ExecOptions& opts) {
  Interpreter interp(g, opts);
  Env env;
  env.vals.resize(g.nodes.size());
  Sink sink;
  interp.run(g.top, env, sink, true);
  ExecResult r;
  r.models = std::move(sink.models);
  r.metrics = std::move(sink.metrics);
  for (const auto& m : r.metrics) r.bytes_touched += m.bytes_in;
  return r;
}

}  // namespace bware
