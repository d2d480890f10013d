#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <variant>
#include <vector>

#include "bware/map_vector.hpp"
#include "bware/matrix.hpp"

namespace bware {

using MatrixRef = std::shared_ptr<const Matrix>;

// Group dictionary: d rows of tuples. Identity(d) is the virtual d x d
// identity; SharedRef aliases a matrix owned elsewhere (an embedding table).
class Dictionary {
 public:
  enum class Kind : std::uint8_t { Dense, Identity, SharedRef };

  Dictionary() : values_(std::make_shared<const Matrix>()) {}
  static Dictionary dense(Matrix values);
  static Dictionary dense(MatrixRef values);
  static Dictionary identity(std::uint32_t dim);
  static Dictionary shared(MatrixRef values);

  Kind kind() const { return kind_; }
  bool is_identity() const { return kind_ == Kind::Identity; }
  std::size_t rows() const { return kind_ == Kind::Identity ? dim_ : values_->rows(); }
  std::size_t cols() const { return kind_ == Kind::Identity ? dim_ : values_->cols(); }

  double at(std::size_t r, std::size_t c) const {
    if (kind_ == Kind::Identity) return r == c ? 1.0 : 0.0;
    return (*values_)(r, c);
  }
  // Backing storage; null for Identity.
  const MatrixRef& matrix() const { return values_; }
  Matrix materialize() const;

  // Dense: 8 B per cell. Identity: one integer. SharedRef: one reference.
  std::size_t memory_bytes() const;
  // Full payload a kernel reads, regardless of ownership.
  std::size_t scan_bytes() const;

  // True when both refer to the same storage (or are equal identities).
  bool same_as(const Dictionary& o) const;

 private:
  Kind kind_ = Kind::Dense;
  std::uint32_t dim_ = 0;
  MatrixRef values_;
};

// Sorted, duplicate-free list of matrix column indexes.
class ColIndexes {
 public:
  ColIndexes() = default;
  explicit ColIndexes(std::vector<std::uint32_t> idx);
  static ColIndexes range(std::uint32_t start, std::uint32_t end);

  std::size_t size() const { return idx_.size(); }
  bool empty() const { return idx_.empty(); }
  std::uint32_t operator[](std::size_t i) const { return idx_[i]; }
  auto begin() const { return idx_.begin(); }
  auto end() const { return idx_.end(); }
  const std::vector<std::uint32_t>& values() const { return idx_; }

  bool is_range() const;
  ColIndexes shifted(std::uint32_t offset) const;
  // Union of disjoint sets; throws ShapeError on overlap.
  ColIndexes merged(const ColIndexes& o) const;
  // A range is stored as two integers, otherwise 4 B per index.
  std::size_t memory_bytes() const { return is_range() ? 8 : 4 * idx_.size(); }

  friend bool operator==(const ColIndexes&, const ColIndexes&) = default;

 private:
  std::vector<std::uint32_t> idx_;
};

enum class Encoding : std::uint8_t { DDC = 0, SDC = 1, CONST = 2, EMPTY = 3, UNCOMPRESSED = 4 };
const char* to_string(Encoding e);

struct DdcGroup {
  MapRef map;
  Dictionary dict;
  // Map is owned by another object (reused by reference); not counted in size.
  bool shared_map = false;
};

// Every row holds the default tuple except the listed exception rows, which
// index the dictionary through the map.
struct SdcGroup {
  std::vector<double> default_tuple;
  std::shared_ptr<const std::vector<std::uint32_t>> rows;
  MapRef map;
  Dictionary dict;
};

struct ConstGroup {
  std::vector<double> tuple;
};

struct EmptyGroup {};

struct UncompressedGroup {
  MatrixRef block;
};

class ColumnGroup {
 public:
  using Body = std::variant<DdcGroup, SdcGroup, ConstGroup, EmptyGroup, UncompressedGroup>;

  ColumnGroup() = default;
  static ColumnGroup ddc(ColIndexes cols, MapRef map, Dictionary dict, bool shared_map = false);
  static ColumnGroup sdc(std::size_t nrows, ColIndexes cols, std::vector<double> default_tuple,
                         std::vector<std::uint32_t> rows, MapRef map, Dictionary dict);
  static ColumnGroup sdc(std::size_t nrows, ColIndexes cols, std::vector<double> default_tuple,
                         std::shared_ptr<const std::vector<std::uint32_t>> rows, MapRef map,
                         Dictionary dict);
  static ColumnGroup constant(std::size_t nrows, ColIndexes cols, std::vector<double> tuple);
  static ColumnGroup empty(std::size_t nrows, ColIndexes cols);
  static ColumnGroup uncompressed(ColIndexes cols, Matrix block);
  static ColumnGroup uncompressed(ColIndexes cols, MatrixRef block);

  Encoding encoding() const { return static_cast<Encoding>(body_.index()); }
  std::size_t nrows() const { return nrows_; }
  const ColIndexes& cols() const { return cols_; }
  std::size_t ncols() const { return cols_.size(); }
  const Body& body() const { return body_; }

  template <class T>
  const T& as() const { return std::get<T>(body_); }
  template <class T>
  const T* try_as() const { return std::get_if<T>(&body_); }

  // Distinct tuples: dictionary rows (+1 default for SDC), 1 for CONST/EMPTY,
  // nrows for UNCOMPRESSED.
  std::size_t distinct() const;

  // Same group over different column indexes (same count).
  ColumnGroup with_cols(ColIndexes cols) const;

 private:
  ColumnGroup(std::size_t nrows, ColIndexes cols, Body body)
      : nrows_(nrows), cols_(std::move(cols)), body_(std::move(body)) {}

  std::size_t nrows_ = 0;
  ColIndexes cols_;
  Body body_ = EmptyGroup{};
};

// nrows x |cols| dense block of the group's columns.
Matrix decompress_group(const ColumnGroup& g);
// Writes the group's rows [lo, hi) into out at out rows [0, hi-lo), columns
// taken from the group's column indexes. out must have enough columns.
void decompress_into(const ColumnGroup& g, Matrix& out, std::size_t lo, std::size_t hi);

// Fixed bookkeeping cost per group, shared with the frame estimator.
inline constexpr std::size_t kGroupOverhead = 20;

std::size_t group_memory_size(const ColumnGroup& g);
// Bytes a full scan of the group reads (map + dictionary, shared or not).
std::size_t group_scan_bytes(const ColumnGroup& g);

ColumnGroup slice_group_rows(const ColumnGroup& g, std::size_t lo, std::size_t hi);

// Same encoding, columns and decompressed content with identical dictionary
// rows and map ids.
bool structurally_equal(const ColumnGroup& a, const ColumnGroup& b);

class CompressedMatrix {
 public:
  CompressedMatrix() = default;
  // Throws ShapeError unless the groups partition [0, ncols) over nrows rows.
  CompressedMatrix(std::size_t nrows, std::size_t ncols, std::vector<ColumnGroup> groups);

  std::size_t nrows() const { return nrows_; }
  std::size_t ncols() const { return ncols_; }
  const std::vector<ColumnGroup>& groups() const { return groups_; }
  std::size_t memory_size() const;
  std::size_t scan_bytes() const;

 private:
  std::size_t nrows_ = 0;
  std::size_t ncols_ = 0;
  std::vector<ColumnGroup> groups_;
};

}  // namespace bware
