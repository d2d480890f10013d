#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "bware/cla.hpp"
#include "bware/transform.hpp"
#include "generators.hpp"
#include "test_util.hpp"

using namespace bware;

namespace {

std::vector<std::uint32_t> u32(std::initializer_list<std::uint32_t> v) { return v; }

ColumnSpec directive(Directive k, bool dummy = false) {
  ColumnSpec s;
  s.kind = k;
  s.dummy = dummy;
  return s;
}

}  // namespace

TEST(Quantize, EquiWidth) {
  std::vector<double> x{0, 1, 2, 3, 4};
  EXPECT_EQ(quantize_equiwidth(x, 2), u32({0, 0, 1, 1, 1}));
  EXPECT_EQ(quantize_equiwidth(std::vector<double>{3, 3, 3}, 4), u32({0, 0, 0}));
  EXPECT_EQ(quantize_equiwidth(x, 1), u32({0, 0, 0, 0, 0}));
  EXPECT_THROW(quantize_equiwidth(std::vector<double>{1, NAN}, 2), TypeError);
  // Brute force: every id within [0, bins-1] and monotone in x.
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-50, 50);
  std::vector<double> r(500);
  for (auto& v : r) v = u(rng);
  auto ids = quantize_equiwidth(r, 7);
  double lo = *std::min_element(r.begin(), r.end()), hi = *std::max_element(r.begin(), r.end());
  for (std::size_t i = 0; i < r.size(); ++i) {
    auto expect = static_cast<std::uint32_t>(std::min(6.0, std::floor(7 * (r[i] - lo) / (hi - lo))));
    EXPECT_EQ(ids[i], expect);
  }
}

TEST(Quantize, EquiHeight) {
  EXPECT_EQ(quantize_equiheight(std::vector<double>{1, 2, 3, 4}, 2), u32({0, 0, 1, 1}));
  EXPECT_EQ(quantize_equiheight(std::vector<double>{5, 5, 5, 5}, 4), u32({0, 0, 0, 0}));
  EXPECT_EQ(quantize_equiheight(std::vector<double>{4, 1, 3}, 1), u32({0, 0, 0}));
  // Sorting oracle: counts per bin differ by at most one on distinct data.
  std::vector<double> x(1000);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>((i * 7919) % 1000);
  auto ids = quantize_equiheight(x, 8);
  std::vector<int> count(8, 0);
  for (auto id : ids) ++count[id];
  for (int c : count) EXPECT_EQ(c, 125);
  // Weighted fit over distinct values matches the row-level fit.
  std::vector<double> vals{3, 1, 2};
  std::vector<std::uint64_t> cnt{2, 5, 1};
  std::vector<double> rows{3, 3, 1, 1, 1, 1, 1, 2};
  EXPECT_EQ(fit_equiheight_weighted(vals, cnt, 3).boundaries, fit_equiheight(rows, 3).boundaries);
}

TEST(Quantize, Mae) {
  EXPECT_EQ(mae(std::vector<double>{1, 2}, std::vector<double>{1, 2}), 0.0);
  EXPECT_EQ(mae(std::vector<double>{0, 4}, std::vector<double>{1, 3}), 1.0);
  EXPECT_THROW(mae(std::vector<double>{0}, std::vector<double>{1, 3}), ShapeError);
}

TEST(Transform, RecodeDummyWidths) {
  std::vector<std::string> a(1000), b(1000);
  for (std::size_t i = 0; i < 1000; ++i) {
    a[i] = "v" + std::to_string(i % 200);
    b[i] = i % 3 ? "x" : "y";
  }
  Frame f({"a", "b"}, {TypedColumn::strings(a), TypedColumn::strings(b)});
  TransformSpec spec{{directive(Directive::RECODE, true), directive(Directive::RECODE, true)}};
  auto r = transform_encode(f, spec, EncodePath::F_CM);
  const auto& cm = std::get<CompressedMatrix>(r.matrix);
  ASSERT_EQ(cm.groups().size(), 2u);
  EXPECT_EQ(cm.groups()[0].as<DdcGroup>().map->width(), MapWidth::W1B);
  EXPECT_EQ(cm.groups()[1].as<DdcGroup>().map->width(), MapWidth::W1bit);
  EXPECT_TRUE(cm.groups()[0].as<DdcGroup>().dict.is_identity());
  EXPECT_EQ(cm.ncols(), 202u);
  EXPECT_EQ(group_memory_size(cm.groups()[0]), 1000u + 4 + 8 + kGroupOverhead);
}

TEST(Transform, CfCmReusesMap) {
  std::vector<std::int32_t> v(5000);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<std::int32_t>(i % 100);
  CompressedFrame cf = compress_frame(Frame({"a"}, {TypedColumn::int32(v)}));
  for (bool dummy : {false, true})
    for (Directive k : {Directive::RECODE, Directive::PASS}) {
      auto r = transform_encode(cf, TransformSpec{{directive(k, dummy)}}, EncodePath::CF_CM);
      const auto& g = std::get<CompressedMatrix>(r.matrix).groups()[0].as<DdcGroup>();
      EXPECT_EQ(g.map, cf.column(0).map());
    }
}

TEST(Transform, BinExample) {
  Frame f({"x"}, {TypedColumn::fp64({0, 1, 2, 3, 4})});
  ColumnSpec s = directive(Directive::BIN);
  s.bins = 2;
  auto r = transform_encode(f, TransformSpec{{s}}, EncodePath::F_CM);
  const auto& g = std::get<CompressedMatrix>(r.matrix).groups()[0].as<DdcGroup>();
  EXPECT_EQ(g.map->decode(), u32({0, 0, 1, 1, 1}));
  EXPECT_EQ(*g.dict.matrix(), Matrix::column({0, 1}));
  s.dummy = true;
  auto d = transform_encode(f, TransformSpec{{s}}, EncodePath::F_CM);
  EXPECT_TRUE(std::get<CompressedMatrix>(d.matrix).groups()[0].as<DdcGroup>().dict.is_identity());
}

TEST(Transform, ErrorsAndApply) {
  Frame f({"s"}, {TypedColumn::strings({"a", "b", "a"})});
  EXPECT_THROW(transform_encode(f, TransformSpec{{directive(Directive::PASS)}}, EncodePath::F_M), TypeError);
  ColumnSpec emb = directive(Directive::WORD_EMBED, true);
  emb.embedding = std::make_shared<const Matrix>(Matrix(4, 2, 1.0));
  EXPECT_THROW(transform_encode(f, TransformSpec{{emb}}, EncodePath::F_M), SpecError);

  auto fit = transform_encode(f, TransformSpec{{directive(Directive::RECODE)}}, EncodePath::F_CM);
  auto again = transform_apply(f, fit.meta, EncodePath::F_CM);
  EXPECT_EQ(materialize(again.matrix), materialize(fit.matrix));
  Frame g({"s"}, {TypedColumn::strings({"a", "zz", "q"})});
  try {
    transform_apply(g, fit.meta, EncodePath::F_M);
    FAIL();
  } catch (const SpecError& e) {
    EXPECT_NE(std::string(e.what()).find("'zz'"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("'q'"), std::string::npos);
  }

  Frame x({"x"}, {TypedColumn::fp64({0, 10})});
  ColumnSpec b = directive(Directive::BIN);
  b.bins = 4;
  auto bf = transform_encode(x, TransformSpec{{b}}, EncodePath::F_M);
  auto above = transform_apply(Frame({"x"}, {TypedColumn::fp64({99, -5})}), bf.meta, EncodePath::F_M);
  EXPECT_EQ(std::get<Matrix>(above.matrix), Matrix::column({3, 0}));

  ColumnSpec h = directive(Directive::HASH);
  h.buckets = 13;
  auto hf = transform_encode(f, TransformSpec{{h}}, EncodePath::F_M);
  auto hz = transform_apply(Frame({"s"}, {TypedColumn::strings({"new"})}), hf.meta, EncodePath::F_M);
  EXPECT_EQ(std::get<Matrix>(hz.matrix)(0, 0), static_cast<double>(fnv1a("new") % 13));
}

TEST(Transform, SpecJson) {
  std::vector<std::string> names{"a", "b", "c", "d"};
  auto s = parse_transform_spec(R"({"recode":["a"],"bin":[{"col":1,"bins":4,"mode":"height"}],
                                    "hash":[{"col":"c","k":9}],"dummy":["a",2]})",
                                names);
  EXPECT_EQ(s.columns[0].kind, Directive::RECODE);
  EXPECT_TRUE(s.columns[0].dummy);
  EXPECT_EQ(s.columns[1].mode, BinMode::EQUI_HEIGHT);
  EXPECT_EQ(s.columns[2].buckets, 9u);
  EXPECT_TRUE(s.columns[2].dummy);
  EXPECT_EQ(s.columns[3].kind, Directive::PASS);
  try {
    parse_transform_spec(R"({"recode":["zz",7],"bin":[{"col":0,"bins":0}],"bogus":1})", names);
    FAIL();
  } catch (const SpecError& e) {
    std::string m = e.what();
    for (const char* part : {"zz", "7", "bins", "bogus"}) EXPECT_NE(m.find(part), std::string::npos) << part;
  }
}

TEST(Transform, SizeModelTable) {
  ColumnSpec r = directive(Directive::RECODE);
  EXPECT_EQ(output_size_model(r, 1000, 200).f_m, 8000.0);
  EXPECT_EQ(output_size_model(r, 1000, 200).f_cm, 1000.0 + 1600.0);
  r.dummy = true;
  EXPECT_EQ(output_size_model(r, 1000, 200).f_cm, 1000.0);
  EXPECT_EQ(output_size_model(r, 1000, 200).f_m, 12000.0);
  EXPECT_EQ(output_size_model(r, 1000, 200).cf_cm, kConstantSize);
  ColumnSpec w = directive(Directive::WORD_EMBED);
  w.embedding = std::make_shared<const Matrix>(Matrix(300, 32));
  EXPECT_EQ(output_size_model(w, 1000, 200).f_m, (8.0 * 32 + 12) * 1000);
  EXPECT_EQ(output_size_model(w, 1000, 200).cf_cm, kConstantSize);
}

TEST(Transform, OracleEquivalenceAcrossPaths) {
  std::mt19937_64 rng(99);
  for (int t = 0; t < 60; ++t) {
    auto rf = gen::random_frame(rng, 300, 4);
    auto spec = gen::random_spec(rng, rf, 4 * 300 + 1);
    Frame typed = apply_schema(rf.frame, detect_schema(rf.frame, 1.0));
    Matrix fm = materialize(transform_encode(typed, spec, EncodePath::F_M).matrix);
    // Text "true"/"false" only reads as numeric once typed.
    bool text_ok = true;
    for (std::size_t c = 0; c < rf.gens.size(); ++c)
      if (rf.gens[c] == gen::Gen::BOOL && (spec.columns[c].kind == Directive::PASS || spec.columns[c].kind == Directive::BIN))
        text_ok = false;
    if (text_ok) EXPECT_EQ(materialize(transform_encode(rf.frame, spec, EncodePath::F_M).matrix), fm) << t;
    EXPECT_EQ(materialize(transform_encode(typed, spec, EncodePath::F_CM).matrix), fm) << t;
    CompressOptions opts;
    opts.max_dict_ratio = t % 2 ? 0.5 : 1.0;
    CompressedFrame cf = compress_frame(rf.frame, opts);
    auto cfcm = transform_encode(cf, spec, EncodePath::CF_CM);
    EXPECT_EQ(materialize(cfcm.matrix), fm) << t;
    EXPECT_EQ(materialize(transform_apply(cf, cfcm.meta, EncodePath::CF_CM).matrix), fm) << t;
    EXPECT_EQ(materialize(transform_apply(typed, cfcm.meta, EncodePath::F_M).matrix), fm) << t;
  }
}
