#pragma once

#include <memory>
#include <string>
#include <vector>

#include "bware/frame.hpp"
#include "bware/map_vector.hpp"

namespace bware {

using ColumnRef = std::shared_ptr<const TypedColumn>;

// One frame column: DDC (map + typed dictionary of distinct values) or the
// type-converted raw column when dictionary coding does not pay off.
class CompressedColumn {
 public:
  CompressedColumn() = default;
  static CompressedColumn ddc(MapRef map, ColumnRef dict);
  static CompressedColumn raw(ColumnRef values);

  bool is_compressed() const { return map_ != nullptr; }
  const MapRef& map() const { return map_; }
  const ColumnRef& dict() const { return dict_; }
  const ColumnRef& raw_values() const { return raw_; }

  ValueType type() const;
  std::uint8_t hex_digits() const;
  std::size_t nrows() const;
  // Dictionary size, 0 for raw columns.
  std::size_t distinct() const { return dict_ ? dict_->size() : 0; }

  TypedColumn decompress() const;
  CompressedColumn slice(std::size_t lo, std::size_t hi) const;

 private:
  MapRef map_;
  ColumnRef dict_;
  ColumnRef raw_;
};

class CompressedFrame {
 public:
  CompressedFrame() = default;
  CompressedFrame(std::vector<std::string> names, std::vector<CompressedColumn> columns);

  std::size_t nrows() const { return nrows_; }
  std::size_t ncols() const { return columns_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::vector<CompressedColumn>& columns() const { return columns_; }
  const CompressedColumn& column(std::size_t i) const { return columns_.at(i); }
  Schema schema() const;

 private:
  std::vector<std::string> names_;
  std::vector<CompressedColumn> columns_;
  std::size_t nrows_ = 0;
};

struct CompressOptions {
  // <= 0 selects default_sample_fraction(nrows).
  double sample_fraction = 0.0;
  double max_dict_ratio = 0.5;
  std::uint64_t seed = 7;
};

// Fixed per-column bookkeeping cost used by all size estimates.
inline constexpr std::size_t kColumnOverhead = 20;

// Fused detect + convert + dictionary-encode of one column. Typed input skips
// detection. Ids are assigned in first-occurrence order.
CompressedColumn compress_column(const TypedColumn& col, const CompressOptions& opts = {},
                                 std::uint64_t seed_offset = 0);

// Same as compress_column but never falls back; used where a map is required.
CompressedColumn dictionary_encode(const TypedColumn& typed);

// Unpacked form: per-row ids in first-occurrence order plus distinct values.
struct DictionaryCode {
  std::vector<std::uint32_t> ids;
  TypedColumn dict;
};
DictionaryCode dictionary_code(const TypedColumn& typed);

CompressedFrame compress_frame(const Frame& frame, const CompressOptions& opts = {});
Frame decompress_frame(const CompressedFrame& cf);

// Dictionary payload bytes: d * sizeof(type), strings as 4 + length.
std::size_t dictionary_bytes(const TypedColumn& dict);
std::size_t column_memory_estimate(const CompressedColumn& c);
std::size_t frame_memory_estimate(const CompressedFrame& cf);

}  // namespace bware
