#include "bware/colgroup.hpp"

#include <algorithm>
#include <cstring>
#include <string>

namespace bware {

Dictionary Dictionary::dense(Matrix values) { return dense(std::make_shared<const Matrix>(std::move(values))); }

Dictionary Dictionary::dense(MatrixRef values) {
  if (!values) throw Error("dense dictionary requires values");
  Dictionary d;
  d.kind_ = Kind::Dense;
  d.values_ = std::move(values);
  return d;
}

Dictionary Dictionary::identity(std::uint32_t dim) {
  Dictionary d;
  d.kind_ = Kind::Identity;
  d.dim_ = dim;
  d.values_ = nullptr;
  return d;
}

Dictionary Dictionary::shared(MatrixRef values) {
  Dictionary d = dense(std::move(values));
  d.kind_ = Kind::SharedRef;
  return d;
}

Matrix Dictionary::materialize() const {
  if (kind_ == Kind::Identity) return Matrix::identity(dim_);
  return *values_;
}

std::size_t Dictionary::memory_bytes() const {
  switch (kind_) {
    case Kind::Dense: return values_->memory_bytes();
    case Kind::Identity: return 4;
    case Kind::SharedRef: return 8;
  }
  return 0;
}

std::size_t Dictionary::scan_bytes() const {
  return kind_ == Kind::Identity ? 4 : values_->memory_bytes();
}

bool Dictionary::same_as(const Dictionary& o) const {
  if (kind_ == Kind::Identity || o.kind_ == Kind::Identity)
    return kind_ == o.kind_ && dim_ == o.dim_;
  return values_ == o.values_;
}

ColIndexes::ColIndexes(std::vector<std::uint32_t> idx) : idx_(std::move(idx)) {
  for (std::size_t i = 1; i < idx_.size(); ++i)
    if (idx_[i] <= idx_[i - 1]) throw ShapeError("column indexes must be strictly increasing");
}

ColIndexes ColIndexes::range(std::uint32_t start, std::uint32_t end) {
  if (start > end) throw ShapeError("column range start after end");
  ColIndexes c;
  c.idx_.resize(end - start);
  for (std::uint32_t i = start; i < end; ++i) c.idx_[i - start] = i;
  return c;
}

bool ColIndexes::is_range() const {
  return !idx_.empty() && idx_.back() - idx_.front() + 1 == idx_.size();
}

ColIndexes ColIndexes::shifted(std::uint32_t offset) const {
  ColIndexes c = *this;
  for (auto& i : c.idx_) i += offset;
  return c;
}

ColIndexes ColIndexes::merged(const ColIndexes& o) const {
  std::vector<std::uint32_t> out;
  out.reserve(idx_.size() + o.idx_.size());
  std::merge(idx_.begin(), idx_.end(), o.idx_.begin(), o.idx_.end(), std::back_inserter(out));
  if (std::adjacent_find(out.begin(), out.end()) != out.end())
    throw ShapeError("merging overlapping column sets");
  return ColIndexes(std::move(out));
}

const char* to_string(Encoding e) {
  switch (e) {
    case Encoding::DDC: return "DDC";
    case Encoding::SDC: return "SDC";
    case Encoding::CONST: return "CONST";
    case Encoding::EMPTY: return "EMPTY";
    case Encoding::UNCOMPRESSED: return "UNCOMPRESSED";
  }
  return "?";
}

namespace {

void check_dict_cols(const Dictionary& dict, const ColIndexes& cols) {
  if (dict.cols() != cols.size())
    throw ShapeError("dictionary has " + std::to_string(dict.cols()) + " columns, group covers " +
                     std::to_string(cols.size()));
}

}  // namespace

ColumnGroup ColumnGroup::ddc(ColIndexes cols, MapRef map, Dictionary dict, bool shared_map) {
  if (!map) throw Error("DDC group requires a map");
  if (cols.empty()) throw ShapeError("group without columns");
  check_dict_cols(dict, cols);
  if (dict.rows() == 0 && map->size() > 0) throw ShapeError("DDC group with empty dictionary");
  std::size_t n = map->size();
  return ColumnGroup(n, std::move(cols), DdcGroup{std::move(map), std::move(dict), shared_map});
}

ColumnGroup ColumnGroup::sdc(std::size_t nrows, ColIndexes cols, std::vector<double> default_tuple,
                             std::vector<std::uint32_t> rows, MapRef map, Dictionary dict) {
  return sdc(nrows, std::move(cols), std::move(default_tuple),
             std::make_shared<const std::vector<std::uint32_t>>(std::move(rows)), std::move(map),
             std::move(dict));
}

ColumnGroup ColumnGroup::sdc(std::size_t nrows, ColIndexes cols, std::vector<double> default_tuple,
                             std::shared_ptr<const std::vector<std::uint32_t>> rows, MapRef map,
                             Dictionary dict) {
  if (!rows || !map) throw Error("SDC group requires exception rows and a map");
  if (cols.empty()) throw ShapeError("group without columns");
  check_dict_cols(dict, cols);
  if (default_tuple.size() != cols.size()) throw ShapeError("SDC default tuple width mismatch");
  if (map->size() != rows->size()) throw ShapeError("SDC map and exception list differ in length");
  const auto& r = *rows;
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (r[i] >= nrows) throw BoundsError("SDC exception row " + std::to_string(r[i]) + " out of range");
    if (i > 0 && r[i] <= r[i - 1]) throw ShapeError("SDC exception rows must be strictly increasing");
  }
  return ColumnGroup(nrows, std::move(cols),
                     SdcGroup{std::move(default_tuple), std::move(rows), std::move(map), std::move(dict)});
}

ColumnGroup ColumnGroup::constant(std::size_t nrows, ColIndexes cols, std::vector<double> tuple) {
  if (cols.empty()) throw ShapeError("group without columns");
  if (tuple.size() != cols.size()) throw ShapeError("CONST tuple width mismatch");
  return ColumnGroup(nrows, std::move(cols), ConstGroup{std::move(tuple)});
}

ColumnGroup ColumnGroup::empty(std::size_t nrows, ColIndexes cols) {
  if (cols.empty()) throw ShapeError("group without columns");
  return ColumnGroup(nrows, std::move(cols), EmptyGroup{});
}

ColumnGroup ColumnGroup::uncompressed(ColIndexes cols, Matrix block) {
  return uncompressed(std::move(cols), std::make_shared<const Matrix>(std::move(block)));
}

ColumnGroup ColumnGroup::uncompressed(ColIndexes cols, MatrixRef block) {
  if (!block) throw Error("uncompressed group requires a block");
  if (cols.empty()) throw ShapeError("group without columns");
  if (block->cols() != cols.size()) throw ShapeError("uncompressed block width mismatch");
  std::size_t n = block->rows();
  return ColumnGroup(n, std::move(cols), UncompressedGroup{std::move(block)});
}

std::size_t ColumnGroup::distinct() const {
  return std::visit(overloaded{
                        [](const DdcGroup& g) { return g.dict.rows(); },
                        [](const SdcGroup& g) { return g.dict.rows() + 1; },
                        [](const ConstGroup&) -> std::size_t { return 1; },
                        [](const EmptyGroup&) -> std::size_t { return 1; },
                        [&](const UncompressedGroup&) { return nrows_; },
                    },
                    body_);
}

ColumnGroup ColumnGroup::with_cols(ColIndexes cols) const {
  if (cols.size() != cols_.size()) throw ShapeError("with_cols: column count differs");
  ColumnGroup g = *this;
  g.cols_ = std::move(cols);
  return g;
}

Matrix decompress_group(const ColumnGroup& g) {
  Matrix out(g.nrows(), g.ncols());
  ColumnGroup local = g.with_cols(ColIndexes::range(0, static_cast<std::uint32_t>(g.ncols())));
  decompress_into(local, out, 0, g.nrows());
  return out;
}

void decompress_into(const ColumnGroup& g, Matrix& out, std::size_t lo, std::size_t hi) {
  if (lo > hi || hi > g.nrows()) throw BoundsError("decompress range out of bounds");
  if (out.rows() < hi - lo) throw ShapeError("decompress target too small");
  const auto& cols = g.cols().values();
  const std::size_t c = cols.size();
  auto put_tuple = [&](std::size_t orow, const Dictionary& dict, std::uint32_t id) {
    double* o = out.row(orow);
    if (dict.is_identity()) {
      for (std::size_t j = 0; j < c; ++j) o[cols[j]] = 0.0;
      o[cols[id]] = 1.0;
    } else {
      const double* v = dict.matrix()->row(id);
      for (std::size_t j = 0; j < c; ++j) o[cols[j]] = v[j];
    }
  };
  auto fill = [&](std::size_t from, std::size_t to, const double* tuple) {
    for (std::size_t r = from; r < to; ++r) {
      double* o = out.row(r);
      for (std::size_t j = 0; j < c; ++j) o[cols[j]] = tuple ? tuple[j] : 0.0;
    }
  };
  std::visit(overloaded{
                 [&](const DdcGroup& d) {
                   d.map->for_each(lo, hi, [&](std::size_t r, std::uint32_t id) { put_tuple(r - lo, d.dict, id); });
                 },
                 [&](const SdcGroup& s) {
                   fill(0, hi - lo, s.default_tuple.data());
                   const auto& rows = *s.rows;
                   auto first = std::lower_bound(rows.begin(), rows.end(), lo) - rows.begin();
                   for (auto i = static_cast<std::size_t>(first); i < rows.size() && rows[i] < hi; ++i)
                     put_tuple(rows[i] - lo, s.dict, s.map->get(i));
                 },
                 [&](const ConstGroup& k) { fill(0, hi - lo, k.tuple.data()); },
                 [&](const EmptyGroup&) { fill(0, hi - lo, nullptr); },
                 [&](const UncompressedGroup& u) {
                   for (std::size_t r = lo; r < hi; ++r) {
                     const double* v = u.block->row(r);
                     double* o = out.row(r - lo);
                     for (std::size_t j = 0; j < c; ++j) o[cols[j]] = v[j];
                   }
                 },
             },
             g.body());
}

std::size_t group_memory_size(const ColumnGroup& g) {
  std::size_t base = kGroupOverhead + g.cols().memory_bytes();
  return base + std::visit(overloaded{
                               [](const DdcGroup& d) {
                                 return (d.shared_map ? 0 : d.map->payload_bytes()) + d.dict.memory_bytes();
                               },
                               [](const SdcGroup& s) {
                                 return 8 * s.default_tuple.size() + 4 * s.rows->size() +
                                        s.map->payload_bytes() + s.dict.memory_bytes();
                               },
                               [](const ConstGroup& k) { return 8 * k.tuple.size(); },
                               [](const EmptyGroup&) -> std::size_t { return 0; },
                               [](const UncompressedGroup& u) { return u.block->memory_bytes(); },
                           },
                           g.body());
}

std::size_t group_scan_bytes(const ColumnGroup& g) {
  return std::visit(overloaded{
                        [](const DdcGroup& d) { return d.map->payload_bytes() + d.dict.scan_bytes(); },
                        [](const SdcGroup& s) {
                          return 8 * s.default_tuple.size() + 4 * s.rows->size() + s.map->payload_bytes() +
                                 s.dict.scan_bytes();
                        },
                        [](const ConstGroup& k) { return 8 * k.tuple.size(); },
                        [](const EmptyGroup&) -> std::size_t { return 0; },
                        [](const UncompressedGroup& u) { return u.block->memory_bytes(); },
                    },
                    g.body());
}

ColumnGroup slice_group_rows(const ColumnGroup& g, std::size_t lo, std::size_t hi) {
  if (lo >= hi || hi > g.nrows())
    throw BoundsError("row slice [" + std::to_string(lo) + ", " + std::to_string(hi) +
                      ") invalid for " + std::to_string(g.nrows()) + " rows");
  return std::visit(
      overloaded{
          [&](const DdcGroup& d) { return ColumnGroup::ddc(g.cols(), make_map(d.map->slice(lo, hi)), d.dict); },
          [&](const SdcGroup& s) {
            const auto& rows = *s.rows;
            auto p0 = static_cast<std::size_t>(std::lower_bound(rows.begin(), rows.end(), lo) - rows.begin());
            auto p1 = static_cast<std::size_t>(std::lower_bound(rows.begin(), rows.end(), hi) - rows.begin());
            std::vector<std::uint32_t> sub(rows.begin() + static_cast<std::ptrdiff_t>(p0),
                                           rows.begin() + static_cast<std::ptrdiff_t>(p1));
            for (auto& r : sub) r -= static_cast<std::uint32_t>(lo);
            return ColumnGroup::sdc(hi - lo, g.cols(), s.default_tuple, std::move(sub),
                                    make_map(s.map->slice(p0, p1)), s.dict);
          },
          [&](const ConstGroup& k) { return ColumnGroup::constant(hi - lo, g.cols(), k.tuple); },
          [&](const EmptyGroup&) { return ColumnGroup::empty(hi - lo, g.cols()); },
          [&](const UncompressedGroup& u) { return ColumnGroup::uncompressed(g.cols(), u.block->slice_rows(lo, hi)); },
      },
      g.body());
}

namespace {

bool same_doubles(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

bool same_dict(const Dictionary& a, const Dictionary& b) {
  if (a.is_identity() || b.is_identity()) return a.is_identity() && b.is_identity() && a.rows() == b.rows();
  return *a.matrix() == *b.matrix();
}

}  // namespace

bool structurally_equal(const ColumnGroup& a, const ColumnGroup& b) {
  if (a.encoding() != b.encoding() || a.nrows() != b.nrows() || !(a.cols() == b.cols())) return false;
  switch (a.encoding()) {
    case Encoding::DDC: {
      const auto& x = a.as<DdcGroup>();
      const auto& y = b.as<DdcGroup>();
      return *x.map == *y.map && same_dict(x.dict, y.dict);
    }
    case Encoding::SDC: {
      const auto& x = a.as<SdcGroup>();
      const auto& y = b.as<SdcGroup>();
      return same_doubles(x.default_tuple, y.default_tuple) && *x.rows == *y.rows && *x.map == *y.map &&
             same_dict(x.dict, y.dict);
    }
    case Encoding::CONST: return same_doubles(a.as<ConstGroup>().tuple, b.as<ConstGroup>().tuple);
    case Encoding::EMPTY: return true;
    case Encoding::UNCOMPRESSED: return *a.as<UncompressedGroup>().block == *b.as<UncompressedGroup>().block;
  }
  return false;
}

CompressedMatrix::CompressedMatrix(std::size_t nrows, std::size_t ncols, std::vector<ColumnGroup> groups)
    : nrows_(nrows), ncols_(ncols), groups_(std::move(groups)) {
  std::vector<std::uint8_t> seen(ncols, 0);
  for (const auto& g : groups_) {
    if (g.nrows() != nrows)
      throw ShapeError("group has " + std::to_string(g.nrows()) + " rows, matrix has " + std::to_string(nrows));
    for (auto c : g.cols()) {
      if (c >= ncols) throw ShapeError("group column " + std::to_string(c) + " out of range");
      if (seen[c]++) throw ShapeError("column " + std::to_string(c) + " covered by two groups");
    }
  }
  for (std::size_t c = 0; c < ncols; ++c)
    if (!seen[c]) throw ShapeError("column " + std::to_string(c) + " not covered by any group");
}

std::size_t CompressedMatrix::memory_size() const {
  std::size_t total = 0;
  for (const auto& g : groups_) total += group_memory_size(g);
  return total;
}

std::size_t CompressedMatrix::scan_bytes() const {
  std::size_t total = 0;
  for (const auto& g : groups_) total += group_scan_bytes(g);
  return total;
}

}  // namespace bware
