#include <gtest/gtest.h>

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "bware/morph.hpp"
#include "bware/planner.hpp"
#include "bware/tio.hpp"
#include "json.hpp"
#include "pipeline_data.hpp"

using namespace bware;
namespace fs = std::filesystem;

namespace {

struct Workspace {
  fs::path dir;
  explicit Workspace(std::size_t n = 600, std::size_t m = 3) {
    static int counter = 0;
    dir = fs::temp_directory_path() / ("bware_planner_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(dir);
    fs::create_directories(dir);
    gen::write_regression_csv(dir.string(), n, m, 17);
    std::ofstream(dir / "spec.json") << gen::bin_spec_json(m);
  }
  ~Workspace() { fs::remove_all(dir); }
  std::string str() const { return dir.string(); }
};

std::string error_of(const std::string& script) {
  try {
    parse_pipeline(script);
  } catch (const ParseError& e) {
    return e.what();
  }
  return "";
}

double rel_norm_diff(const Matrix& a, const Matrix& b) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < a.values().size(); ++i) {
    num += (a.values()[i] - b.values()[i]) * (a.values()[i] - b.values()[i]);
    den += b.values()[i] * b.values()[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-300);
}

}  // namespace

// ---------------------------------------------------------------- parsing

TEST(Parse, NestedLoopPipelineShape) {
  PipelineGraph g = parse_pipeline(gen::grid_script("[5, 10]", "1:3", 4, 1.0));
  EXPECT_EQ(g.count(NodeKind::READ), 2u);
  EXPECT_EQ(g.count(NodeKind::LOOP), 2u);
  EXPECT_EQ(g.count(NodeKind::TRANSFORM_ENCODE), 1u);
  EXPECT_EQ(g.count(NodeKind::TRAIN_LM_CG), 1u);
  ASSERT_EQ(g.top.size(), 3u);
  const Node& outer = g.node(g.top[2]);
  ASSERT_EQ(outer.kind, NodeKind::LOOP);
  EXPECT_TRUE(outer.parallel);
  EXPECT_EQ(outer.var, "t");
  EXPECT_EQ(outer.range.list.size(), 2u);
  ASSERT_EQ(outer.body.size(), 3u);
  EXPECT_EQ(g.node(outer.body[0]).kind, NodeKind::TRANSFORM_ENCODE);
  const Node& inner = g.node(outer.body[2]);
  ASSERT_EQ(inner.kind, NodeKind::LOOP);
  EXPECT_EQ(inner.loop, outer.id);
  EXPECT_EQ(inner.range.list.size(), 3u);
  const Node& cg = g.node(inner.body[1]);
  EXPECT_EQ(cg.kind, NodeKind::TRAIN_LM_CG);
  EXPECT_EQ(cg.loop, inner.id);
  EXPECT_EQ(cg.inputs, (std::vector<std::size_t>{inner.body[0], g.top[1]}));
  EXPECT_EQ(cg.params.at("maxiter").number, 4.0);
}

TEST(Parse, ReadWriteIsTwoNodes) {
  PipelineGraph g = parse_pipeline("X = read(\"in.csv\")\nwrite(X, \"out.csv\")\n");
  ASSERT_EQ(g.nodes.size(), 2u);
  EXPECT_EQ(g.nodes[0].kind, NodeKind::READ);
  EXPECT_EQ(g.nodes[1].kind, NodeKind::WRITE);
  EXPECT_EQ(g.nodes[1].inputs, std::vector<std::size_t>{0});
}

TEST(Parse, ErrorsCarryLineNumbers) {
  EXPECT_NE(error_of("X = read(\"a\")\nY = scalar(Z, \"add\", 1)\n").find("line 2: use of undefined variable 'Z'"),
            std::string::npos);
  EXPECT_NE(error_of("\n\nX = frobnicate(1)").find("line 3: unknown function"), std::string::npos);
  EXPECT_NE(error_of("X = read()").find("line 1"), std::string::npos);
  EXPECT_NE(error_of("X = read(\"a\")\nY = lmm(X)").find("line 2"), std::string::npos);
  EXPECT_NE(error_of("X = read(\"a\")\nfor i in [1,2] {\n  Y = scalar(i, \"add\", 1)\n}").find("line 3: loop variable"),
            std::string::npos);
  EXPECT_NE(error_of("for i in [1] {\n X = read(\"a\")\n").find("missing '}'"), std::string::npos);
  EXPECT_NE(error_of("X = read(\"a)").find("unterminated string"), std::string::npos);
  EXPECT_NE(error_of("X = read(\"a\")\nY = scalar(X, \"bogus\")").find("line 2: unknown scalar op"), std::string::npos);
  EXPECT_NE(error_of("X = read(\"a\") Y = read(\"b\")").find("expected end of statement"), std::string::npos);
  // Loop bodies are scoped.
  EXPECT_NE(error_of("for i in [1] { X = read(\"a\") }\nwrite(X, \"b\")").find("line 2"), std::string::npos);
  EXPECT_EQ(error_of("X = read(\"a\"); Y = slice(X, 0, 5); write(Y, \"b\") # done"), "");
}

// ---------------------------------------------------------------- workload

TEST(Workload, LoopOfEightLmms) {
  PipelineGraph g = parse_pipeline(
      "F = read(\"x.csv\")\nW = read(\"w.csv\")\nM = transformencode(F, \"{}\")\n"
      "for i in 1:8 {\n  L = lmm(W, M)\n}\nD = transformencode(F, \"{}\")\n");
  auto w = extract_workload(g);
  EXPECT_EQ(w.at(2).lmm, 8.0);
  EXPECT_EQ(w.at(2).total(), 8.0);
  // Dead intermediate: zero vector and never injected.
  const std::size_t dead = g.top.back();
  EXPECT_EQ(w.at(dead), WorkloadVector{});
  PipelineGraph inj = inject_morphs(g, w);
  EXPECT_TRUE(inj.consumers(dead).empty());
  for (const auto& n : inj.nodes)
    if (n.kind == NodeKind::MORPH) EXPECT_NE(n.inputs[0], dead);
}

TEST(Workload, NestedLoopsCountTripProducts) {
  const int m = 7;
  PipelineGraph g = parse_pipeline(gen::grid_script("1:8", "[1,2,3,4,5,6,7,8]", m, 1.0));
  auto w = extract_workload(g);
  const std::size_t te = g.node(g.top[2]).body[0];
  const std::size_t fx = g.top[0];
  // Hand count: the encode runs 8 times; per run, 8 augmentations each
  // training with m iterations (one LMM and one RMM each), 8 divides and 8 cbinds.
  EXPECT_EQ(w.at(te).lmm, m * 8.0);
  EXPECT_EQ(w.at(te).rmm, m * 8.0);
  EXPECT_EQ(w.at(te).scalar, 1.0);
  EXPECT_EQ(w.at(te).scan, 8.0);
  // From the top-level read, everything is multiplied by the outer loop too.
  EXPECT_EQ(w.at(fx).lmm, m * 64.0);
  EXPECT_EQ(w.at(fx).rmm, m * 64.0);
  EXPECT_EQ(w.at(fx).scan, 8.0 + 64.0);
  // Non-literal ranges use the default trip count.
  PipelineGraph h = parse_pipeline("F = read(\"x\")\nfor a in [4] {\n for i in 1:a {\n  M = transformencode(F, \"{}\")\n }\n}");
  EXPECT_EQ(extract_workload(h).at(0).scan, 10.0);
}

TEST(Workload, IsSyntactic) {
  Workspace a(100), b(400);
  std::string s = gen::grid_script("[5]", "[2]", 3, 1.0);
  auto wa = extract_workload(parse_pipeline(s, a.str()));
  auto wb = extract_workload(parse_pipeline(s, b.str()));
  EXPECT_EQ(wa, wb);
}

TEST(Inject, MorphBetweenEncodeAndAugmentationLoop) {
  PipelineGraph g = parse_pipeline(gen::grid_script("[5, 10]", "1:3", 4, 1.0));
  PipelineGraph inj = inject_morphs(g, extract_workload(g));
  ASSERT_EQ(inj.count(NodeKind::MORPH), 1u);
  const Node& outer = inj.node(inj.top[2]);
  const Node& te = inj.node(outer.body[0]);
  const Node& morph = inj.node(outer.body[1]);
  EXPECT_EQ(te.kind, NodeKind::TRANSFORM_ENCODE);
  EXPECT_EQ(morph.kind, NodeKind::MORPH);
  EXPECT_TRUE(morph.injected);
  EXPECT_EQ(morph.inputs, std::vector<std::size_t>{te.id});
  EXPECT_EQ(inj.node(outer.body[2]).inputs[0], morph.id);
  EXPECT_EQ(inj.consumers(te.id), std::vector<std::size_t>{morph.id});
  // The frame read is compressed; y's read has too little work.
  EXPECT_TRUE(inj.node(inj.top[0]).compress);
  EXPECT_FALSE(inj.node(inj.top[1]).compress);
  EXPECT_GT(morph.workload.lmm, 0.0);
}

TEST(Inject, BelowThresholdLeavesGraphUnchanged) {
  PipelineGraph g = parse_pipeline("F = read(\"x.csv\")\nW = read(\"w.csv\")\nM = transformencode(F, \"{}\")\nL = lmm(W, M)\n");
  PipelineGraph inj = inject_morphs(g, extract_workload(g));
  EXPECT_EQ(inj.to_text(), g.to_text());
  EXPECT_EQ(inj.nodes.size(), g.nodes.size());
}

TEST(Inject, TiledReadIsUsedAsIs) {
  Workspace ws;
  write_tiled(compress_frame(read_csv(ws.str() + "/x.csv")), ws.str() + "/x.bwt");
  std::string s = gen::grid_script("[5, 10]", "1:3", 4, 1.0);
  s.replace(s.find("x.csv"), 5, "x.bwt");
  PipelineGraph g = parse_pipeline(s, ws.str());
  PipelineGraph inj = inject_morphs(g, extract_workload(g));
  EXPECT_FALSE(inj.node(inj.top[0]).compress);
  EXPECT_EQ(inj.count(NodeKind::MORPH), 1u);
  ExecResult r = execute(inj);
  EXPECT_EQ(r.models.size(), 6u);
}

// ---------------------------------------------------------------- execution

TEST(Execute, InjectionPreservesCoefficients) {
  Workspace ws(800, 3);
  PipelineGraph g = parse_pipeline(gen::grid_script("[4, 9]", "1:3", 12, 0.5), ws.str());
  PipelineGraph inj = inject_morphs(g, extract_workload(g));
  ExecResult plain = execute(g);
  ExecResult fast = execute(inj);
  ASSERT_EQ(plain.models.size(), 6u);
  ASSERT_EQ(fast.models.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(plain.models[i].bindings, fast.models[i].bindings);
    EXPECT_LE(rel_norm_diff(fast.models[i].beta, plain.models[i].beta), 1e-8) << plain.models[i].bindings;
    EXPECT_LE(max_relative_error(fast.models[i].beta, plain.models[i].beta), 1e-8);
  }
  EXPECT_LT(fast.bytes_touched, plain.bytes_touched);
  // Metrics: one JSON object per evaluated node.
  for (const auto& m : fast.metrics) {
    auto j = nlohmann::json::parse(metric_to_json(m));
    for (const char* key : {"node", "op", "ms", "bytes_in", "bytes_out", "groups"}) EXPECT_TRUE(j.contains(key));
  }
  bool saw_morph = false;
  for (const auto& m : fast.metrics) saw_morph |= m.op == "MORPH";
  EXPECT_TRUE(saw_morph);
}

TEST(Execute, GridOfEightByEightReportsSixtyFourModels) {
  Workspace ws(300, 2);
  PipelineGraph g = parse_pipeline(gen::grid_script("[5, 10, 20, 40, 60, 120, 240, 480]", "1:8", 5, 1.0), ws.str());
  ExecOptions opts;
  opts.threads = 2;
  ExecResult r = execute(inject_morphs(g, extract_workload(g)), opts);
  ASSERT_EQ(r.models.size(), 64u);
  EXPECT_EQ(r.models.front().bindings, "t=5,a=1");
  EXPECT_EQ(r.models.back().bindings, "t=480,a=8");
  EXPECT_EQ(r.models.back().beta.rows(), 16u);
}

TEST(Execute, MorphAcceptsUncompressedInput) {
  Workspace ws;
  std::string s =
      "F = read(\"x.csv\")\nY = read(\"y.csv\")\nM = transformencode(F, \"spec.json\", path=\"F-M\")\n"
      "Z = morph(M)\nB = lmCG(Z, Y, reg=0.1)\nC = lmCG(M, Y, reg=0.1)\n";
  ExecResult r = execute(parse_pipeline(s, ws.str()));
  ASSERT_EQ(r.models.size(), 2u);
  EXPECT_LE(rel_norm_diff(r.models[0].beta, r.models[1].beta), 1e-8);
  for (const auto& m : r.metrics)
    if (m.op == "MORPH") {
      EXPECT_TRUE(m.applied);
      EXPECT_GT(m.groups, 0u);
    }
}

TEST(Execute, StructuralNodesAgreeOnBothRepresentations) {
  Workspace ws;
  std::string body =
      "M = transformencode(F, \"spec.json\")\n"
      "R = scalar(M, \"ge\", 5)\nS = select(M, [3, 1, 4, 1, 5])\nT = slice(R, 10, 20)\nC = cbind(S, S)\n"
      "write(T, \"t.csv\")\nwrite(C, \"c.csv\")\n";
  execute(parse_pipeline("F = read(\"x.csv\")\n" + body, ws.str()));
  std::ifstream t1(ws.dir / "t.csv"), c1(ws.dir / "c.csv");
  std::stringstream a1, b1;
  a1 << t1.rdbuf();
  b1 << c1.rdbuf();
  // Same body on a compressed frame read from a tiled directory.
  write_tiled(compress_frame(read_csv(ws.str() + "/x.csv")), ws.str() + "/x.bwt");
  execute(parse_pipeline("F = read(\"x.bwt\")\n" + body, ws.str()));
  std::ifstream t2(ws.dir / "t.csv"), c2(ws.dir / "c.csv");
  std::stringstream a2, b2;
  a2 << t2.rdbuf();
  b2 << c2.rdbuf();
  EXPECT_EQ(a1.str(), a2.str());
  EXPECT_EQ(b1.str(), b2.str());
}

TEST(Execute, RuntimeErrorsNameTheNode) {
  Workspace ws;
  try {
    execute(parse_pipeline("X = read(\"x.csv\")\nZ = read(\"missing.csv\")\n", ws.str()));
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("node 1 (READ, line 2)"), std::string::npos) << e.what();
  }
  try {
    execute(parse_pipeline("X = read(\"x.csv\")\nY = read(\"x.csv\")\nB = lmCG(X, Y)\n", ws.str()));
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("node 2"), std::string::npos);
  }
}

// ---------------------------------------------------------------- lmCG

TEST(LmCg, OrthonormalDesignGivesProjection) {
  // Columns of a scaled Hadamard matrix are orthonormal.
  Matrix X(4, 3, {0.5, 0.5, 0.5, 0.5, -0.5, 0.5, 0.5, 0.5, -0.5, 0.5, -0.5, -0.5});
  Matrix y = Matrix::column({1.0, -2.0, 3.5, 0.25});
  Matrix beta = train_lm_cg(X, y, std::nullopt, 0.0);
  Matrix want = multiply(X.transpose(), y);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(beta(j, 0), want(j, 0), 1e-12);
}

TEST(LmCg, CompressedMatchesDense) {
  std::mt19937_64 rng(2);
  for (int iter = 0; iter < 10; ++iter) {
    std::size_t n = 200 + rng() % 800, m = 1 + rng() % 8;
    Matrix X(n, m);
    for (auto& v : X.data()) v = static_cast<double>(rng() % 7) - 3.0;
    Matrix y(n, 1);
    for (auto& v : y.data()) v = static_cast<double>(rng() % 1000) / 100.0;
    CompressedMatrix cx = morph(X, WorkloadVector{0, 10, 10, 0, 0});
    CgStats sd, sc;
    Matrix bd = train_lm_cg(X, y, std::nullopt, 0.01, &sd);
    Matrix bc = train_lm_cg(cx, y, std::nullopt, 0.01, &sc);
    EXPECT_LE(rel_norm_diff(bc, bd), 1e-8);
    EXPECT_LE(sd.iterations, std::min<std::size_t>(m, 1000));
  }
}

TEST(LmCg, RegularizationShrinksMonotonically) {
  std::mt19937_64 rng(8);
  Matrix X(100, 4);
  for (auto& v : X.data()) v = static_cast<double>(rng() % 11) - 5.0;
  Matrix y(100, 1);
  for (auto& v : y.data()) v = static_cast<double>(rng() % 100) / 10.0;
  double last = INFINITY;
  for (double reg : {0.0, 1.0, 10.0, 100.0, 1e4, 1e8, 1e14}) {
    Matrix b = train_lm_cg(X, y, std::nullopt, reg);
    double norm = std::sqrt(multiply(b.transpose(), b)(0, 0));
    EXPECT_LT(norm, last + 1e-12) << reg;
    last = norm;
  }
  EXPECT_LT(last, 1e-9);
}

TEST(LmCg, RejectsBadInput) {
  Matrix X(3, 1, {1, 2, 3});
  EXPECT_THROW(train_lm_cg(X, Matrix::column({1, 2})), ShapeError);
  EXPECT_THROW(train_lm_cg(X, Matrix::column({1, NAN, 2})), TypeError);
  EXPECT_THROW(train_lm_cg(Matrix(3, 1, {1, INFINITY, 3}), Matrix::column({1, 2, 3})), TypeError);
}
