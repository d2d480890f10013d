#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <random>
#include <set>

#include "bware/cla.hpp"
#include "bware/morph.hpp"
#include "bware/transform.hpp"
#include "generators.hpp"
#include "test_util.hpp"

using namespace bware;
using bware::gen::ids;
using bware::gen::random_group;

namespace {

// Dense oracle of two groups side by side in merged column order.
Matrix concat_oracle(const ColumnGroup& a, const ColumnGroup& b) {
  ColIndexes cols = a.cols().merged(b.cols());
  Matrix out(a.nrows(), cols.size());
  auto place = [&](const ColumnGroup& g) {
    Matrix m = decompress_group(g);
    for (std::size_t j = 0; j < g.ncols(); ++j) {
      auto pos = std::lower_bound(cols.begin(), cols.end(), g.cols()[j]) - cols.begin();
      for (std::size_t r = 0; r < m.rows(); ++r) out(r, pos) = m(r, j);
    }
  };
  place(a);
  place(b);
  return out;
}

// Cartesian oracle: every (i1, i2) tuple materialized, then unused ones pruned.
std::size_t cartesian_distinct(const ColumnGroup& a, const ColumnGroup& b) {
  const auto& da = a.as<DdcGroup>();
  const auto& db = b.as<DdcGroup>();
  std::size_t d1 = da.dict.rows(), d2 = db.dict.rows();
  std::vector<bool> used(d1 * d2, false);
  for (std::size_t r = 0; r < a.nrows(); ++r) used[da.map->get(r) + d1 * db.map->get(r)] = true;
  return static_cast<std::size_t>(std::count(used.begin(), used.end(), true));
}

std::pair<ColIndexes, ColIndexes> split_cols(std::mt19937_64& rng, std::uint32_t total) {
  std::vector<std::uint32_t> a, b;
  for (std::uint32_t c = 0; c < total; ++c) (c == 0 || (c != 1 && rng() % 2) ? a : b).push_back(c);
  return {ColIndexes(a), ColIndexes(b)};
}

ColumnGroup random_ddc(std::mt19937_64& rng, std::size_t n, ColIndexes cols, std::size_t d) {
  std::vector<std::uint32_t> m(n);
  for (auto& x : m) x = static_cast<std::uint32_t>(rng() % d);
  Matrix dict(d, cols.size());
  for (auto& x : dict.data()) x = static_cast<double>(rng() % 1000) / 8.0;
  return ColumnGroup::ddc(std::move(cols), ids(m, d), Dictionary::dense(std::move(dict)));
}

std::size_t total_size(const CompressedMatrix& cm) { return cm.memory_size(); }

}  // namespace

TEST(Morph, CombineDdcExample) {
  auto a = ColumnGroup::ddc(ColIndexes::range(0, 1), ids({0, 1, 0, 2, 1, 2}, 3),
                            Dictionary::dense(Matrix::column({7.0, 7.1, 9.3})));
  auto b = ColumnGroup::ddc(ColIndexes::range(1, 2), ids({0, 1, 0, 1, 1, 1}, 2),
                            Dictionary::dense(Matrix::column({2.2, 3.1})));
  auto c = combine_ddc(a, b);
  const auto& d = c.as<DdcGroup>();
  EXPECT_EQ(d.map->decode(), (std::vector<std::uint32_t>{0, 1, 0, 2, 1, 2}));
  EXPECT_EQ(*d.dict.matrix(), Matrix(3, 2, {7.0, 2.2, 7.1, 3.1, 9.3, 3.1}));
  EXPECT_EQ(c.cols(), ColIndexes::range(0, 2));
  EXPECT_THROW(combine_ddc(a, ColumnGroup::empty(5, ColIndexes::range(1, 2))), ShapeError);
}

TEST(Morph, CombineDdcMatchesCartesianOracle) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 300; ++t) {
    std::size_t n = 1 + rng() % 3000;
    auto [ca, cb] = split_cols(rng, 2 + static_cast<std::uint32_t>(rng() % 4));
    auto a = random_ddc(rng, n, ca, 1 + rng() % 64);
    auto b = random_ddc(rng, n, cb, 1 + rng() % 64);
    auto c = combine_ddc(a, b);
    ASSERT_EQ(decompress_group(c), concat_oracle(a, b)) << t;
    const auto& d = c.as<DdcGroup>();
    EXPECT_EQ(d.dict.rows(), cartesian_distinct(a, b)) << t;
    // Ids are dense: exactly [0, d_R) appear.
    std::set<std::uint32_t> seen;
    d.map->for_each([&](std::size_t, std::uint32_t id) { seen.insert(id); });
    EXPECT_EQ(seen.size(), d.dict.rows());
    EXPECT_EQ(*seen.rbegin() + 1, d.dict.rows());
    EXPECT_EQ(d.map->width(), map_width_for(d.dict.rows()));
  }
}

TEST(Morph, CombineAnyAllEncodings) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 400; ++t) {
    std::size_t n = 1 + rng() % 200;
    auto [ca, cb] = split_cols(rng, 2 + static_cast<std::uint32_t>(rng() % 4));
    int ka = t % 6, kb = (t / 6) % 6;
    if (ka == 4 && ca.size() < 2) ka = 0;
    if (kb == 4 && cb.size() < 2) kb = 0;
    auto a = random_group(rng, n, ca, ka);
    auto b = random_group(rng, n, cb, kb);
    MorphCounters k;
    auto c = combine_any(a, b, &k);
    ASSERT_EQ(decompress_group(c), concat_oracle(a, b)) << t << " " << ka << "x" << kb;
    EXPECT_EQ(k.combines + k.fallbacks, 1u);
  }
  auto d = ColumnGroup::ddc(ColIndexes::range(0, 1), ids({0, 1, 1}, 2), Dictionary::dense(Matrix::column({1, 2})));
  auto e = combine_any(d, ColumnGroup::empty(3, ColIndexes::range(1, 3)));
  EXPECT_EQ(e.as<DdcGroup>().map, d.as<DdcGroup>().map);
  EXPECT_EQ(*e.as<DdcGroup>().dict.matrix(), Matrix(2, 3, {1, 0, 0, 2, 0, 0}));
  auto ee = combine_any(ColumnGroup::empty(3, ColIndexes::range(0, 1)), ColumnGroup::empty(3, ColIndexes::range(1, 3)));
  EXPECT_EQ(ee.encoding(), Encoding::EMPTY);
  EXPECT_EQ(ee.cols(), ColIndexes::range(0, 3));
  MorphCounters k;
  Matrix u(3, 1, {1.5, 2.5, 3.5});
  auto f = combine_any(ColumnGroup::uncompressed(ColIndexes::range(0, 1), u), d.with_cols(ColIndexes::range(1, 2)), &k);
  EXPECT_EQ(k.fallbacks, 1u);
  EXPECT_EQ(decompress_group(f), Matrix(3, 2, {1.5, 1, 2.5, 2, 3.5, 2}));
}

TEST(Morph, EncodingConversions) {
  auto one = ColumnGroup::ddc(ColIndexes::range(0, 2), ids({0, 0, 0}, 1), Dictionary::dense(Matrix(1, 2, {4, 5})));
  auto k = morph_encoding(one, Encoding::CONST);
  EXPECT_EQ(k.encoding(), Encoding::CONST);
  EXPECT_EQ(decompress_group(k), decompress_group(one));
  EXPECT_THROW(morph_encoding(one, Encoding::EMPTY), PlanError);

  std::vector<std::uint32_t> m(1000, 2);
  std::map<std::uint32_t, int> freq;
  for (std::size_t r = 0; r < m.size(); r += 20) m[r] = static_cast<std::uint32_t>(r % 3 == 0 ? 0 : 1);
  for (auto x : m) ++freq[x];
  auto ddc = ColumnGroup::ddc(ColIndexes::range(0, 1), ids(m, 3), Dictionary::dense(Matrix::column({1, 2, 3})));
  auto sdc = morph_encoding(ddc, Encoding::SDC);
  const auto& s = sdc.as<SdcGroup>();
  EXPECT_EQ(s.default_tuple, std::vector<double>{3});
  EXPECT_EQ(s.rows->size(), 1000u - freq[2]);
  EXPECT_TRUE(s.dict.same_as(ddc.as<DdcGroup>().dict));
  EXPECT_EQ(decompress_group(sdc), decompress_group(ddc));
  EXPECT_EQ(decompress_group(morph_encoding(sdc, Encoding::DDC)), decompress_group(ddc));
  EXPECT_THROW(morph_encoding(ddc, Encoding::CONST), PlanError);

  // A W1B map holding only small ids repacks to the narrowest width.
  auto wide = ColumnGroup::ddc(ColIndexes::range(0, 1), make_map(MapVector::pack(std::vector<std::uint32_t>{0, 1, 1}, MapWidth::W1B)),
                               Dictionary::dense(Matrix::column({1, 2})));
  EXPECT_EQ(morph_encoding(wide, Encoding::DDC).as<DdcGroup>().map->width(), MapWidth::W1bit);

  std::mt19937_64 rng(6);
  for (int t = 0; t < 200; ++t) {
    auto g = random_group(rng, 1 + rng() % 100, ColIndexes::range(0, 2), static_cast<int>(t % 6));
    for (Encoding e : {Encoding::DDC, Encoding::SDC, Encoding::UNCOMPRESSED, Encoding::CONST, Encoding::EMPTY}) {
      try {
        EXPECT_EQ(decompress_group(morph_encoding(g, e)), decompress_group(g)) << t << to_string(e);
      } catch (const PlanError&) {
        EXPECT_TRUE(e == Encoding::CONST || e == Encoding::EMPTY);
      }
    }
  }
}

TEST(Morph, Classify) {
  std::mt19937_64 rng(8);
  auto g = random_ddc(rng, 5000, ColIndexes::range(0, 2), 17);
  auto c = classify(CompressedMatrix(5000, 2, {g}));
  ASSERT_EQ(c.units.size(), 1u);
  EXPECT_EQ(c.units[0].d, 17.0);
  EXPECT_TRUE(c.units[0].exact);

  Matrix x(100000, 3);
  std::vector<std::size_t> truth(3);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    x(r, 1) = static_cast<double>(rng() % 40);
    x(r, 2) = static_cast<double>(rng() % 300);
  }
  auto s = classify(x);
  ASSERT_EQ(s.units.size(), 3u);
  EXPECT_TRUE(s.units[0].all_zero);
  EXPECT_EQ(s.units[0].nonzero_share, 0.0);
  EXPECT_FALSE(s.units[1].exact);
  EXPECT_NEAR(s.units[1].d, 40.0, 8.0);
  EXPECT_NEAR(s.units[2].d, 300.0, 60.0);
}

TEST(Morph, GroupDecisions) {
  const std::size_t n = 2000;
  Matrix x(n, 4);
  std::mt19937_64 rng(9);
  for (std::size_t r = 0; r < n; ++r) {
    auto v = rng() % 10;
    x(r, 0) = static_cast<double>(v);
    x(r, 1) = static_cast<double>(v) * 3 + 1;  // perfectly correlated with column 0
    x(r, 2) = static_cast<double>(r) + 0.5;      // all distinct
    x(r, 3) = 7.0;                               // constant
  }
  auto stats = classify(x);
  EXPECT_EQ(estimate_cocode(stats, 0, 1).ratio, 1.0);
  auto plan = group(stats, WorkloadVector{});
  std::map<std::uint32_t, const PlanGroup*> by_col;
  for (const auto& g : plan.groups)
    for (auto c : g.cols) by_col[c] = &g;
  EXPECT_EQ(by_col[0], by_col[1]);
  EXPECT_EQ(by_col[0]->target, Encoding::DDC);
  EXPECT_EQ(by_col[2]->target, Encoding::UNCOMPRESSED);
  EXPECT_EQ(by_col[3]->target, Encoding::CONST);
  EXPECT_NE(plan_to_json(plan).find("\"encoding\":\"CONST\""), std::string::npos);
  auto out = morph(x, WorkloadVector{});
  EXPECT_EQ(decompress(out), x);
}

TEST(Morph, OneHotMergesAndShrinks) {
  std::vector<std::string> cells(3000);
  for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = "k" + std::to_string(i * 7 % 12);
  Frame f({"a"}, {TypedColumn::strings(cells)});
  ColumnSpec s;
  s.kind = Directive::RECODE;
  s.dummy = true;
  Matrix onehot = materialize(transform_encode(f, TransformSpec{{s}}, EncodePath::F_M).matrix);
  // Column-wise compression of the one-hot block as the starting point.
  std::vector<ColumnGroup> per;
  for (std::uint32_t c = 0; c < onehot.cols(); ++c)
    per.push_back(compress_block(onehot.select_columns(std::vector<std::uint32_t>{c}), ColIndexes({c})));
  CompressedMatrix cm(onehot.rows(), onehot.cols(), per);
  MorphCounters k;
  auto out = morph(cm, WorkloadVector{}, {}, &k);
  EXPECT_LT(out.groups().size(), cm.groups().size());
  EXPECT_LT(total_size(out), total_size(cm));
  EXPECT_EQ(decompress(out), onehot);
  EXPECT_GT(k.combines, 0u);
}

TEST(Morph, IncompressibleBecomesOneUncompressedGroup) {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(-1, 1);
  Matrix x(500, 6);
  for (auto& v : x.data()) v = u(rng);
  auto out = morph(x, WorkloadVector{});
  ASSERT_EQ(out.groups().size(), 1u);
  EXPECT_EQ(out.groups()[0].encoding(), Encoding::UNCOMPRESSED);
  EXPECT_EQ(decompress(out), x);
}

TEST(Morph, RandomInputsPreserveDecompressionAndAreIdempotent) {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 120; ++t) {
    std::size_t n = 1 + rng() % 1500;
    std::vector<ColumnGroup> groups;
    std::uint32_t c = 0;
    std::size_t ng = 1 + rng() % 6;
    for (std::size_t i = 0; i < ng; ++i) {
      std::uint32_t w = 1 + static_cast<std::uint32_t>(rng() % 3);
      int kind = static_cast<int>(rng() % 6);
      if (kind == 4 && w < 2) kind = 0;
      groups.push_back(random_group(rng, n, ColIndexes::range(c, c + w), kind));
      c += w;
    }
    CompressedMatrix cm(n, c, groups);
    WorkloadVector w;
    w.lmm = static_cast<double>(rng() % 3) * 10;
    auto once = morph(cm, w);
    ASSERT_EQ(decompress(once), decompress(cm)) << t;
    auto twice = morph(once, w);
    ASSERT_EQ(twice.groups().size(), once.groups().size()) << t;
    for (std::size_t i = 0; i < once.groups().size(); ++i)
      EXPECT_TRUE(structurally_equal(twice.groups()[i], once.groups()[i])) << t << " group " << i;
    // Dense input takes the compression path.
    EXPECT_EQ(decompress(morph(decompress(cm), w)), decompress(cm)) << t;
  }
}

TEST(Morph, PlanNeverIncreasesEstimate) {
  std::mt19937_64 rng(12);
  for (int t = 0; t < 40; ++t) {
    Matrix x(800, 1 + rng() % 10);
    for (std::size_t r = 0; r < x.rows(); ++r)
      for (std::size_t c = 0; c < x.cols(); ++c) x(r, c) = static_cast<double>(rng() % (1 + c * c * 3));
    auto plan = group(classify(x), WorkloadVector{});
    double after = 0.0;
    for (const auto& g : plan.groups) after += g.est_bytes;
    EXPECT_LE(after, plan.est_bytes_before);
  }
}

TEST(Morph, WideInputUsesCandidateCap) {
  std::mt19937_64 rng(13);
  Matrix x(600, 80);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto v = rng() % 4;
    for (std::size_t c = 0; c < x.cols(); ++c) x(r, c) = static_cast<double>((v + c) % 4);
  }
  MorphPlan plan;
  auto out = morph(x, WorkloadVector{}, {}, nullptr, &plan);
  EXPECT_EQ(decompress(out), x);
  EXPECT_LT(plan.groups.size(), 80u);
}
