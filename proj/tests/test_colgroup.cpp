#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "bware/cla.hpp"
#include "bware/colgroup.hpp"
#include "generators.hpp"
#include "test_util.hpp"

using namespace bware;
using bware::gen::ids;
using bware::gen::random_group;

namespace {

Matrix col(std::vector<double> v) { return Matrix::column(std::move(v)); }

}  // namespace

TEST(ColGroup, DecompressExamples) {
  auto g = ColumnGroup::ddc(ColIndexes::range(0, 1), ids({0, 1, 0}, 2), Dictionary::dense(col({7.0, 9.3})));
  EXPECT_EQ(decompress_group(g), col({7.0, 9.3, 7.0}));
  EXPECT_EQ(decompress_group(ColumnGroup::empty(3, ColIndexes::range(0, 2))), Matrix(3, 2));
  auto oh = ColumnGroup::ddc(ColIndexes::range(0, 3), ids({2, 0}, 3), Dictionary::identity(3));
  EXPECT_EQ(decompress_group(oh), Matrix(2, 3, {0, 0, 1, 1, 0, 0}));
}

TEST(ColGroup, MemorySize) {
  std::vector<std::uint32_t> m(1000);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = static_cast<std::uint32_t>(i % 200);
  auto g = ColumnGroup::ddc(ColIndexes::range(0, 200), ids(m, 200), Dictionary::identity(200));
  EXPECT_EQ(group_memory_size(g), 1000u + 4 + 8 + kGroupOverhead);
  auto shared = ColumnGroup::ddc(ColIndexes::range(0, 200), ids(m, 200), Dictionary::identity(200), true);
  std::vector<std::uint32_t> big(100000, 3);
  auto shared_big = ColumnGroup::ddc(ColIndexes::range(0, 900), ids(big, 900), Dictionary::identity(900), true);
  EXPECT_EQ(group_memory_size(shared), group_memory_size(shared_big));
  auto k = ColumnGroup::constant(10, ColIndexes::range(0, 3), {1, 2, 3});
  EXPECT_EQ(group_memory_size(k), 24u + 8 + kGroupOverhead);
}

TEST(ColGroup, SliceMatchesOracle) {
  std::mt19937_64 rng(11);
  auto g = ColumnGroup::ddc(ColIndexes::range(0, 1), ids({0, 1, 0, 2}, 3), Dictionary::dense(col({1, 2, 3})));
  auto s = slice_group_rows(g, 1, 3);
  EXPECT_EQ(s.as<DdcGroup>().map->decode(), (std::vector<std::uint32_t>{1, 0}));
  EXPECT_TRUE(s.as<DdcGroup>().dict.same_as(g.as<DdcGroup>().dict));
  EXPECT_THROW(slice_group_rows(g, 2, 2), BoundsError);
  for (int t = 0; t < 300; ++t) {
    std::size_t n = 1 + rng() % 50;
    std::size_t c = 1 + rng() % 3;
    auto grp = random_group(rng, n, ColIndexes::range(0, static_cast<std::uint32_t>(c)), static_cast<int>(t % 6));
    std::size_t lo = rng() % n;
    std::size_t hi = lo + 1 + rng() % (n - lo);
    EXPECT_EQ(decompress_group(slice_group_rows(grp, lo, hi)), decompress_group(grp).slice_rows(lo, hi));
    EXPECT_EQ(slice_group_rows(grp, lo, hi).encoding(), grp.encoding());
  }
}

TEST(ColGroup, MatrixPartitionChecked) {
  auto a = ColumnGroup::empty(2, ColIndexes::range(0, 2));
  auto b = ColumnGroup::empty(2, ColIndexes::range(1, 3));
  EXPECT_THROW(CompressedMatrix(2, 3, {a, b}), ShapeError);
  EXPECT_THROW(CompressedMatrix(2, 3, {a}), ShapeError);
  EXPECT_NO_THROW(CompressedMatrix(2, 3, {a, ColumnGroup::empty(2, ColIndexes::range(2, 3))}));
}

TEST(Cla, ScalarOpOnDictionaryOnly) {
  auto g = ColumnGroup::ddc(ColIndexes::range(0, 1), ids({0, 1, 0, 2, 1, 2}, 3), Dictionary::dense(col({7.0, 7.1, 9.3})));
  CompressedMatrix x(6, 1, {g});
  auto sq = scalar_op(x, [](double v) { return v * v; });
  const auto& d = sq.groups()[0].as<DdcGroup>();
  EXPECT_EQ(d.map, g.as<DdcGroup>().map);
  EXPECT_EQ(*d.dict.matrix(), col({7.0 * 7.0, 7.1 * 7.1, 9.3 * 9.3}));
  EXPECT_NEAR((*d.dict.matrix())(1, 0), 50.41, 1e-12);

  auto xx = cbind(x, sq);
  ASSERT_EQ(xx.groups().size(), 1u);
  EXPECT_EQ(xx.groups()[0].as<DdcGroup>().map, g.as<DdcGroup>().map);
  EXPECT_EQ(decompress(xx), cbind(decompress(x), decompress(sq)));

  CompressedMatrix e(3, 2, {ColumnGroup::empty(3, ColIndexes::range(0, 2))});
  EXPECT_EQ(scalar_op(e, [](double v) { return 2 * v; }).groups()[0].encoding(), Encoding::EMPTY);
  EXPECT_EQ(scalar_op(e, [](double v) { return v + 1; }).groups()[0].encoding(), Encoding::CONST);
}

TEST(Cla, KernelsMatchDenseOracle) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> val(-1, 1);
  for (int t = 0; t < 200; ++t) {
    std::size_t n = 1 + rng() % 60;
    std::vector<ColumnGroup> groups;
    std::uint32_t c = 0;
    int ng = 1 + static_cast<int>(rng() % 4);
    for (int i = 0; i < ng; ++i) {
      std::uint32_t w = 1 + static_cast<std::uint32_t>(rng() % 3);
      groups.push_back(random_group(rng, n, ColIndexes::range(c, c + w), static_cast<int>(rng() % 6)));
      c += w;
    }
    CompressedMatrix cm(n, c, groups);
    Matrix X = decompress(cm);

    Matrix A(3, n);
    for (auto& x : A.data()) x = val(rng);
    LmmStats stats;
    EXPECT_LE(max_relative_error(left_mm(A, cm, &stats), multiply(A, X)), 1e-10);
    Matrix B(c, 2);
    for (auto& x : B.data()) x = val(rng);
    EXPECT_LE(max_relative_error(right_mm(cm, B), multiply(X, B)), 1e-10);

    std::vector<std::uint32_t> sel(1 + rng() % 20);
    for (auto& s : sel) s = static_cast<std::uint32_t>(rng() % n);
    SelectionMatrix S(n, sel);
    // Row gather is the exact S*X (a dense product would turn -0.0 into 0.0).
    Matrix gathered(sel.size(), c);
    for (std::size_t i = 0; i < sel.size(); ++i) std::copy(X.row(sel[i]), X.row(sel[i]) + c, gathered.row(i));
    EXPECT_LE(max_relative_error(multiply(S.to_dense(), X), gathered), 0.0);
    EXPECT_EQ(decompress(selection_mm(S, cm)), gathered);
    EXPECT_EQ(selection_mm_dense(S, cm), gathered);

    std::size_t lo = rng() % n;
    std::size_t hi = lo + 1 + rng() % (n - lo);
    EXPECT_EQ(decompress(slice_rows(cm, lo, hi)), X.slice_rows(lo, hi));
  }
}

TEST(Cla, PreaggregationIndependentOfColumnCount) {
  std::vector<std::uint32_t> m(100);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = static_cast<std::uint32_t>(i % 5);
  auto map = ids(m, 5);
  Matrix A(2, 100, 1.0);
  for (std::uint32_t c : {1u, 8u}) {
    CompressedMatrix cm(100, c, {ColumnGroup::ddc(ColIndexes::range(0, c), map, Dictionary::dense(Matrix(5, c, 1.5)))});
    LmmStats s;
    left_mm(A, cm, &s);
    EXPECT_EQ(s.max_buffer_cells, 2u * 5u);
  }
}

TEST(Cla, MultiWayCbindKeepsOneGroup) {
  auto g = ColumnGroup::ddc(ColIndexes::range(0, 1), ids({0, 1, 0, 2}, 3), Dictionary::dense(col({1.0, 4.0, 9.0})));
  CompressedMatrix x(4, 1, {g});
  auto r = cbind({x, scalar_op(x, [](double v) { return v * v; }), scalar_op(x, [](double v) { return std::log(v + 1); }),
                  scalar_op(x, [](double v) { return std::sqrt(v); })});
  EXPECT_EQ(r.groups().size(), 1u);
  EXPECT_EQ(r.ncols(), 4u);
  CompressedMatrix other(4, 1, {ColumnGroup::constant(4, ColIndexes::range(0, 1), {3.0})});
  EXPECT_EQ(cbind(x, other).groups().size(), 2u);
  EXPECT_THROW(cbind(x, CompressedMatrix(3, 1, {ColumnGroup::empty(3, ColIndexes::range(0, 1))})), ShapeError);
}

TEST(Cla, SelectionValidatesIndexes) {
  EXPECT_THROW(SelectionMatrix(3, {0, 3}), BoundsError);
  CompressedMatrix k(5, 1, {ColumnGroup::constant(5, ColIndexes::range(0, 1), {2.0})});
  auto s = selection_mm(SelectionMatrix(5, std::vector<std::uint32_t>(7, 0)), k);
  EXPECT_EQ(s.groups()[0].encoding(), Encoding::CONST);
  EXPECT_EQ(s.nrows(), 7u);
}
