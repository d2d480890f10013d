#pragma once

#include <bit>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "bware/common.hpp"

namespace bware {

// Value types ordered by the detection lattice: the first type that parses
// every sampled value wins.
enum class ValueType : std::uint8_t {
  BOOLEAN = 0,
  INT32 = 1,
  INT64 = 2,
  FP32 = 3,
  FP64 = 4,
  CHAR = 5,
  HEX = 6,
  STRING = 7,
};

inline constexpr ValueType kLattice[] = {ValueType::BOOLEAN, ValueType::INT32, ValueType::INT64,
                                         ValueType::FP32,    ValueType::FP64,  ValueType::CHAR,
                                         ValueType::HEX,     ValueType::STRING};

std::string_view to_string(ValueType t);
ValueType value_type_from_string(std::string_view name);
bool is_numeric(ValueType t);

// Payload size of one value; strings report 0 (variable).
std::size_t value_size(ValueType t);

// Variant alternatives are indexed by ValueType. Booleans are bytes, hex
// codes are stored as integers with a fixed digit count on the column.
using ColumnData =
    std::variant<std::vector<std::uint8_t>, std::vector<std::int32_t>, std::vector<std::int64_t>,
                 std::vector<float>, std::vector<double>, std::vector<char>,
                 std::vector<std::uint64_t>, std::vector<std::string>>;

template <ValueType T>
using storage_t = std::variant_alternative_t<static_cast<std::size_t>(T), ColumnData>;

class TypedColumn {
 public:
  TypedColumn() : data_(std::vector<std::string>{}) {}
  explicit TypedColumn(ColumnData data, std::uint8_t hex_digits = 0)
      : data_(std::move(data)), hex_digits_(hex_digits) {}

  static TypedColumn strings(std::vector<std::string> v) { return TypedColumn(std::move(v)); }
  static TypedColumn fp64(std::vector<double> v) { return TypedColumn(std::move(v)); }
  static TypedColumn int32(std::vector<std::int32_t> v) { return TypedColumn(std::move(v)); }
  static TypedColumn int64(std::vector<std::int64_t> v) { return TypedColumn(std::move(v)); }
  static TypedColumn booleans(std::vector<std::uint8_t> v) { return TypedColumn(std::move(v)); }
  static TypedColumn allocate(ValueType t, std::size_t n, std::uint8_t hex_digits = 0);

  ValueType type() const { return static_cast<ValueType>(data_.index()); }
  std::size_t size() const;
  bool empty() const { return size() == 0; }
  std::uint8_t hex_digits() const { return hex_digits_; }

  const ColumnData& data() const { return data_; }
  ColumnData& data() { return data_; }

  template <class T>
  const std::vector<T>& values() const { return std::get<std::vector<T>>(data_); }

  // Canonical text form: shortest round-trip floats, "true"/"false",
  // zero-padded lowercase hex. Hashing and recoding use this form.
  std::string to_string(std::size_t row) const;

  // Numeric cast; strings are parsed, CHAR/HEX are rejected.
  double to_double(std::size_t row) const;

  // Gathers rows [lo, hi).
  TypedColumn slice(std::size_t lo, std::size_t hi) const;
  TypedColumn gather(std::span<const std::uint32_t> rows) const;

  // Raw payload bytes (strings count 4 + length each).
  std::size_t payload_bytes() const;

  friend bool operator==(const TypedColumn& a, const TypedColumn& b);

 private:
  ColumnData data_;
  std::uint8_t hex_digits_ = 0;
};

// Calls fn(const std::vector<T>&) with the concrete storage.
template <class Fn>
decltype(auto) visit_column(const TypedColumn& col, Fn&& fn) {
  return std::visit(std::forward<Fn>(fn), col.data());
}

// Hash-table key for a typed value: floats compare by bit pattern so that
// -0.0 and 0.0 stay distinct like their text forms.
template <class T>
struct ValueKey {
  using type = T;
  static T of(const T& v) { return v; }
};
template <>
struct ValueKey<double> {
  using type = std::uint64_t;
  static std::uint64_t of(double v) { return std::bit_cast<std::uint64_t>(v); }
};
template <>
struct ValueKey<float> {
  using type = std::uint32_t;
  static std::uint32_t of(float v) { return std::bit_cast<std::uint32_t>(v); }
};
template <>
struct ValueKey<std::string> {
  using type = std::string_view;
  static std::string_view of(const std::string& v) { return v; }
};

struct ColumnSchema {
  ValueType type = ValueType::STRING;
  bool nullable = false;
  std::uint8_t hex_digits = 0;
  friend bool operator==(const ColumnSchema&, const ColumnSchema&) = default;
};
using Schema = std::vector<ColumnSchema>;

class Frame {
 public:
  Frame() = default;
  Frame(std::vector<std::string> names, std::vector<TypedColumn> columns);

  std::size_t nrows() const { return nrows_; }
  std::size_t ncols() const { return columns_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::vector<TypedColumn>& columns() const { return columns_; }
  const TypedColumn& column(std::size_t i) const { return columns_.at(i); }
  std::size_t column_index(std::string_view name) const;

  Schema schema() const;

  friend bool operator==(const Frame&, const Frame&) = default;

 private:
  std::vector<std::string> names_;
  std::vector<TypedColumn> columns_;
  std::size_t nrows_ = 0;
};

// True when the text cell casts to t without loss. Empty text casts to every
// type (it becomes the type's zero).
bool parses_as(ValueType t, std::string_view text);

template <ValueType T>
using value_t = typename storage_t<T>::value_type;

// Single-cell cast; nullopt when the text does not cast to T losslessly.
template <ValueType T>
std::optional<value_t<T>> cast_cell(std::string_view text, std::uint8_t hex_digits = 0);

// Narrowest lattice type for the given cells. Empty cells are skipped;
// all-empty input yields STRING.
ColumnSchema detect_type(const std::vector<std::string>& cells, std::span<const std::uint32_t> rows);

// Converts to `target`; throws TypeError on the first unparseable cell.
TypedColumn convert_column(const TypedColumn& col, const ColumnSchema& target);

double default_sample_fraction(std::size_t nrows);

// Sample of round(fraction * n) rows (at least one), uniform without
// replacement, sorted ascending.
std::vector<std::uint32_t> sample_rows(std::size_t n, double fraction, std::uint64_t seed);

Schema detect_schema(const Frame& frame, double sample_fraction, std::uint64_t seed = 7);
Schema detect_schema(const Frame& frame);

// Never fails: a column whose cast fails is re-detected over all rows.
Frame apply_schema(const Frame& frame, const Schema& schema);

struct CsvOptions {
  bool header = true;
  char delimiter = ',';
  std::optional<Schema> schema;
};

Frame read_csv(const std::string& path, const CsvOptions& options = {});
Frame parse_csv(std::string_view text, const CsvOptions& options = {});
void write_csv(const Frame& frame, const std::string& path, char delimiter = ',');

}  // namespace bware
