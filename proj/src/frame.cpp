#include "bware/frame.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_set>

namespace bware {

std::string_view to_string(ValueType t) {
  switch (t) {
    case ValueType::BOOLEAN: return "BOOLEAN";
    case ValueType::INT32: return "INT32";
    case ValueType::INT64: return "INT64";
    case ValueType::FP32: return "FP32";
    case ValueType::FP64: return "FP64";
    case ValueType::CHAR: return "CHAR";
    case ValueType::HEX: return "HEX";
    case ValueType::STRING: return "STRING";
  }
  return "?";
}

ValueType value_type_from_string(std::string_view name) {
  for (ValueType t : kLattice)
    if (to_string(t) == name) return t;
  throw ParseError("unknown value type '" + std::string(name) + "'");
}

bool is_numeric(ValueType t) {
  return t == ValueType::BOOLEAN || t == ValueType::INT32 || t == ValueType::INT64 ||
         t == ValueType::FP32 || t == ValueType::FP64;
}

std::size_t value_size(ValueType t) {
  switch (t) {
    case ValueType::BOOLEAN:
    case ValueType::CHAR: return 1;
    case ValueType::INT32:
    case ValueType::FP32: return 4;
    case ValueType::INT64:
    case ValueType::FP64:
    case ValueType::HEX: return 8;
    case ValueType::STRING: return 0;
  }
  return 0;
}

namespace {

template <class T>
std::optional<T> parse_int(std::string_view s) {
  if (s.empty()) return T{0};
  T v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

std::optional<double> parse_fp64(std::string_view s) {
  if (s.empty()) return 0.0;
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::optional<float> parse_fp32(std::string_view s) {
  auto d = parse_fp64(s);
  if (!d) return std::nullopt;
  float f = static_cast<float>(*d);
  if (static_cast<double>(f) != *d) return std::nullopt;
  return f;
}

std::optional<std::uint8_t> parse_bool(std::string_view s) {
  if (s.empty()) return std::uint8_t{0};
  if (s == "true" || s == "TRUE" || s == "True") return std::uint8_t{1};
  if (s == "false" || s == "FALSE" || s == "False") return std::uint8_t{0};
  return std::nullopt;
}

std::optional<char> parse_char(std::string_view s) {
  if (s.empty()) return '\0';
  if (s.size() != 1) return std::nullopt;
  return s[0];
}

bool is_lower_hex(std::string_view s) {
  if (s.empty() || s.size() > 16) return false;
  return std::all_of(s.begin(), s.end(),
                     [](char c) { return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'); });
}

std::optional<std::uint64_t> parse_hex(std::string_view s, std::uint8_t digits) {
  if (s.empty()) return std::uint64_t{0};
  if (s.size() != digits || !is_lower_hex(s)) return std::nullopt;
  std::uint64_t v = 0;
  std::from_chars(s.data(), s.data() + s.size(), v, 16);
  return v;
}

template <class T>
std::string format_number(T v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::string format_hex(std::uint64_t v, std::uint8_t digits) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v, 16);
  std::string s(buf, ptr);
  if (s.size() < digits) s.insert(0, digits - s.size(), '0');
  return s;
}

[[noreturn]] void cast_failure(std::string_view text, std::size_t row, ValueType t) {
  throw TypeError("cannot cast '" + std::string(text) + "' at row " + std::to_string(row) + " to " +
                  std::string(to_string(t)));
}

template <class T>
bool bitwise_equal(const std::vector<T>& a, const std::vector<T>& b) {
  if constexpr (std::is_floating_point_v<T>) {
    return a.size() == b.size() &&
           (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0);
  } else {
    return a == b;
  }
}

}  // namespace

TypedColumn TypedColumn::allocate(ValueType t, std::size_t n, std::uint8_t hex_digits) {
  ColumnData d;
  switch (t) {
    case ValueType::BOOLEAN: d = std::vector<std::uint8_t>(n); break;
    case ValueType::INT32: d = std::vector<std::int32_t>(n); break;
    case ValueType::INT64: d = std::vector<std::int64_t>(n); break;
    case ValueType::FP32: d = std::vector<float>(n); break;
    case ValueType::FP64: d = std::vector<double>(n); break;
    case ValueType::CHAR: d = std::vector<char>(n); break;
    case ValueType::HEX: d = std::vector<std::uint64_t>(n); break;
    case ValueType::STRING: d = std::vector<std::string>(n); break;
  }
  return TypedColumn(std::move(d), hex_digits);
}

std::size_t TypedColumn::size() const {
  return std::visit([](const auto& v) { return v.size(); }, data_);
}

std::string TypedColumn::to_string(std::size_t row) const {
  return std::visit(
      [&](const auto& v) -> std::string {
        using T = typename std::decay_t<decltype(v)>::value_type;
        const T& x = v[row];
        if constexpr (std::is_same_v<T, std::string>) {
          return x;
        } else if constexpr (std::is_same_v<T, std::uint8_t>) {
          return x ? "true" : "false";
        } else if constexpr (std::is_same_v<T, char>) {
          return x == '\0' ? std::string() : std::string(1, x);
        } else if constexpr (std::is_same_v<T, std::uint64_t>) {
          return format_hex(x, hex_digits_);
        } else {
          return format_number(x);
        }
      },
      data_);
}

double TypedColumn::to_double(std::size_t row) const {
  return std::visit(
      [&](const auto& v) -> double {
        using T = typename std::decay_t<decltype(v)>::value_type;
        if constexpr (std::is_same_v<T, std::string>) {
          auto d = parse_fp64(v[row]);
          if (!d) throw TypeError("non-numeric value '" + v[row] + "' at row " + std::to_string(row));
          return *d;
        } else if constexpr (std::is_same_v<T, char> || std::is_same_v<T, std::uint64_t>) {
          throw TypeError("column of type " + std::string(bware::to_string(type())) +
                          " is not numeric");
        } else {
          return static_cast<double>(v[row]);
        }
      },
      data_);
}

TypedColumn TypedColumn::slice(std::size_t lo, std::size_t hi) const {
  return std::visit(
      [&](const auto& v) {
        using V = std::decay_t<decltype(v)>;
        return TypedColumn(V(v.begin() + lo, v.begin() + hi), hex_digits_);
      },
      data_);
}

TypedColumn TypedColumn::gather(std::span<const std::uint32_t> rows) const {
  return std::visit(
      [&](const auto& v) {
        std::decay_t<decltype(v)> out;
        out.reserve(rows.size());
        for (auto r : rows) out.push_back(v[r]);
        return TypedColumn(std::move(out), hex_digits_);
      },
      data_);
}

std::size_t TypedColumn::payload_bytes() const {
  return std::visit(
      [](const auto& v) -> std::size_t {
        using T = typename std::decay_t<decltype(v)>::value_type;
        if constexpr (std::is_same_v<T, std::string>) {
          std::size_t total = 0;
          for (const auto& s : v) total += 4 + s.size();
          return total;
        } else {
          return v.size() * sizeof(T);
        }
      },
      data_);
}

bool operator==(const TypedColumn& a, const TypedColumn& b) {
  if (a.data_.index() != b.data_.index()) return false;
  if (a.type() == ValueType::HEX && a.hex_digits_ != b.hex_digits_) return false;
  return std::visit(
      [&](const auto& va) {
        using V = std::decay_t<decltype(va)>;
        return bitwise_equal(va, std::get<V>(b.data_));
      },
      a.data_);
}

Frame::Frame(std::vector<std::string> names, std::vector<TypedColumn> columns)
    : names_(std::move(names)), columns_(std::move(columns)) {
  if (names_.size() != columns_.size())
    throw ShapeError("frame has " + std::to_string(columns_.size()) + " columns but " +
                     std::to_string(names_.size()) + " names");
  nrows_ = columns_.empty() ? 0 : columns_.front().size();
  for (std::size_t i = 0; i < columns_.size(); ++i) {
    if (columns_[i].size() != nrows_)
      throw ShapeError("column '" + names_[i] + "' has " + std::to_string(columns_[i].size()) +
                       " rows, expected " + std::to_string(nrows_));
  }
  std::unordered_set<std::string_view> seen;
  for (const auto& n : names_)
    if (!seen.insert(n).second) throw ShapeError("duplicate column label '" + n + "'");
}

std::size_t Frame::column_index(std::string_view name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw BoundsError("no column named '" + std::string(name) + "'");
  return static_cast<std::size_t>(it - names_.begin());
}

Schema Frame::schema() const {
  Schema s;
  s.reserve(columns_.size());
  for (const auto& c : columns_) s.push_back({c.type(), false, c.hex_digits()});
  return s;
}

bool parses_as(ValueType t, std::string_view text) {
  switch (t) {
    case ValueType::BOOLEAN: return parse_bool(text).has_value();
    case ValueType::INT32: return parse_int<std::int32_t>(text).has_value();
    case ValueType::INT64: return parse_int<std::int64_t>(text).has_value();
    case ValueType::FP32: return parse_fp32(text).has_value();
    case ValueType::FP64: return parse_fp64(text).has_value();
    case ValueType::CHAR: return parse_char(text).has_value();
    case ValueType::HEX: return text.empty() || is_lower_hex(text);
    case ValueType::STRING: return true;
  }
  return false;
}

template <ValueType T>
std::optional<value_t<T>> cast_cell(std::string_view s, std::uint8_t digits) {
  if constexpr (T == ValueType::BOOLEAN) return parse_bool(s);
  else if constexpr (T == ValueType::INT32) return parse_int<std::int32_t>(s);
  else if constexpr (T == ValueType::INT64) return parse_int<std::int64_t>(s);
  else if constexpr (T == ValueType::FP32) return parse_fp32(s);
  else if constexpr (T == ValueType::FP64) return parse_fp64(s);
  else if constexpr (T == ValueType::CHAR) return parse_char(s);
  else if constexpr (T == ValueType::HEX) return parse_hex(s, digits);
  else return std::string(s);
}

template std::optional<std::uint8_t> cast_cell<ValueType::BOOLEAN>(std::string_view, std::uint8_t);
template std::optional<std::int32_t> cast_cell<ValueType::INT32>(std::string_view, std::uint8_t);
template std::optional<std::int64_t> cast_cell<ValueType::INT64>(std::string_view, std::uint8_t);
template std::optional<float> cast_cell<ValueType::FP32>(std::string_view, std::uint8_t);
template std::optional<double> cast_cell<ValueType::FP64>(std::string_view, std::uint8_t);
template std::optional<char> cast_cell<ValueType::CHAR>(std::string_view, std::uint8_t);
template std::optional<std::uint64_t> cast_cell<ValueType::HEX>(std::string_view, std::uint8_t);
template std::optional<std::string> cast_cell<ValueType::STRING>(std::string_view, std::uint8_t);

ColumnSchema detect_type(const std::vector<std::string>& cells, std::span<const std::uint32_t> rows) {
  // Bit i set while lattice type i is still a candidate. STRING never drops.
  std::uint32_t alive = 0xFF;
  bool nullable = false;
  bool any_value = false;
  std::size_t hex_width = 0;
  for (auto r : rows) {
    std::string_view s = cells[r];
    if (s.empty()) {
      nullable = true;
      continue;
    }
    any_value = true;
    for (std::size_t i = 0; i < 7; ++i) {
      if (!(alive & (1u << i))) continue;
      bool ok = parses_as(kLattice[i], s);
      if (ok && kLattice[i] == ValueType::HEX) {
        if (hex_width == 0) hex_width = s.size();
        ok = s.size() == hex_width;
      }
      if (!ok) alive &= ~(1u << i);
    }
    if (alive == 0x80) break;
  }
  if (!any_value) return {ValueType::STRING, nullable, 0};
  ValueType t = kLattice[std::countr_zero(alive)];
  return {t, nullable, t == ValueType::HEX ? static_cast<std::uint8_t>(hex_width) : std::uint8_t{0}};
}

namespace {

template <ValueType T>
void parse_into(const std::vector<std::string>& src, storage_t<T>& dst, std::uint8_t digits,
                std::size_t lo, std::size_t hi) {
  for (std::size_t r = lo; r < hi; ++r) {
    const std::string& s = src[r];
    if constexpr (T == ValueType::BOOLEAN) {
      auto v = parse_bool(s);
      if (!v) cast_failure(s, r, T);
      dst[r] = *v;
    } else if constexpr (T == ValueType::INT32) {
      auto v = parse_int<std::int32_t>(s);
      if (!v) cast_failure(s, r, T);
      dst[r] = *v;
    } else if constexpr (T == ValueType::INT64) {
      auto v = parse_int<std::int64_t>(s);
      if (!v) cast_failure(s, r, T);
      dst[r] = *v;
    } else if constexpr (T == ValueType::FP32) {
      auto v = parse_fp32(s);
      if (!v) cast_failure(s, r, T);
      dst[r] = *v;
    } else if constexpr (T == ValueType::FP64) {
      auto v = parse_fp64(s);
      if (!v) cast_failure(s, r, T);
      dst[r] = *v;
    } else if constexpr (T == ValueType::CHAR) {
      auto v = parse_char(s);
      if (!v) cast_failure(s, r, T);
      dst[r] = *v;
    } else if constexpr (T == ValueType::HEX) {
      auto v = parse_hex(s, digits);
      if (!v) cast_failure(s, r, T);
      dst[r] = *v;
    } else {
      dst[r] = s;
    }
  }
}

template <ValueType T>
TypedColumn parse_column(const std::vector<std::string>& src, std::uint8_t digits) {
  TypedColumn out = TypedColumn::allocate(T, src.size(), digits);
  auto& dst = std::get<storage_t<T>>(out.data());
  // Row-segment parallel parsing for long columns.
  constexpr std::size_t kSegment = 1 << 16;
  std::size_t segments = (src.size() + kSegment - 1) / kSegment;
  if (segments <= 1) {
    parse_into<T>(src, dst, digits, 0, src.size());
  } else {
    parallel_for(segments, [&](std::size_t s) {
      parse_into<T>(src, dst, digits, s * kSegment, std::min(src.size(), (s + 1) * kSegment));
    });
  }
  return out;
}

TypedColumn parse_strings(const std::vector<std::string>& src, const ColumnSchema& target) {
  switch (target.type) {
    case ValueType::BOOLEAN: return parse_column<ValueType::BOOLEAN>(src, 0);
    case ValueType::INT32: return parse_column<ValueType::INT32>(src, 0);
    case ValueType::INT64: return parse_column<ValueType::INT64>(src, 0);
    case ValueType::FP32: return parse_column<ValueType::FP32>(src, 0);
    case ValueType::FP64: return parse_column<ValueType::FP64>(src, 0);
    case ValueType::CHAR: return parse_column<ValueType::CHAR>(src, 0);
    case ValueType::HEX: return parse_column<ValueType::HEX>(src, target.hex_digits);
    case ValueType::STRING: return TypedColumn::strings(src);
  }
  return TypedColumn::strings(src);
}

std::vector<std::string> as_strings(const TypedColumn& col) {
  if (col.type() == ValueType::STRING) return col.values<std::string>();
  std::vector<std::string> out(col.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = col.to_string(i);
  return out;
}

}  // namespace

TypedColumn convert_column(const TypedColumn& col, const ColumnSchema& target) {
  if (col.type() == target.type &&
      (target.type != ValueType::HEX || col.hex_digits() == target.hex_digits))
    return col;
  if (col.type() == ValueType::STRING) return parse_strings(col.values<std::string>(), target);
  return parse_strings(as_strings(col), target);
}

double default_sample_fraction(std::size_t nrows) {
  if (nrows == 0) return 1.0;
  return std::min(1.0, std::max(0.01, 1024.0 / static_cast<double>(nrows)));
}

std::vector<std::uint32_t> sample_rows(std::size_t n, double fraction, std::uint64_t seed) {
  if (n == 0) return {};
  std::size_t k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  k = std::clamp<std::size_t>(k, 1, n);
  std::vector<std::uint32_t> out;
  if (k == n) {
    out.resize(n);
    std::iota(out.begin(), out.end(), 0u);
    return out;
  }
  std::mt19937_64 rng(seed);
  if (k * 4 > n) {
    std::vector<std::uint32_t> all(n);
    std::iota(all.begin(), all.end(), 0u);
    for (std::size_t i = 0; i < k; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, n - 1);
      std::swap(all[i], all[pick(rng)]);
    }
    out.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k));
  } else {
    // Floyd's sampling.
    std::unordered_set<std::uint32_t> chosen;
    chosen.reserve(k * 2);
    for (std::size_t j = n - k; j < n; ++j) {
      std::uniform_int_distribution<std::size_t> pick(0, j);
      auto t = static_cast<std::uint32_t>(pick(rng));
      if (!chosen.insert(t).second) chosen.insert(static_cast<std::uint32_t>(j));
    }
    out.assign(chosen.begin(), chosen.end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

Schema detect_schema(const Frame& frame, double sample_fraction, std::uint64_t seed) {
  if (!(sample_fraction > 0.0 && sample_fraction <= 1.0))
    throw SpecError("sample fraction must be in (0, 1]");
  Schema schema(frame.ncols());
  parallel_for(frame.ncols(), [&](std::size_t c) {
    const TypedColumn& col = frame.column(c);
    if (col.type() != ValueType::STRING) {
      schema[c] = {col.type(), false, col.hex_digits()};
      return;
    }
    auto rows = sample_rows(frame.nrows(), sample_fraction, seed + c);
    schema[c] = detect_type(col.values<std::string>(), rows);
  });
  return schema;
}

Schema detect_schema(const Frame& frame) {
  return detect_schema(frame, default_sample_fraction(frame.nrows()));
}

Frame apply_schema(const Frame& frame, const Schema& schema) {
  if (schema.size() != frame.ncols())
    throw ShapeError("schema has " + std::to_string(schema.size()) + " entries for " +
                     std::to_string(frame.ncols()) + " columns");
  std::vector<TypedColumn> cols(frame.ncols());
  parallel_for(frame.ncols(), [&](std::size_t c) {
    try {
      cols[c] = convert_column(frame.column(c), schema[c]);
    } catch (const TypeError&) {
      auto text = as_strings(frame.column(c));
      std::vector<std::uint32_t> all(text.size());
      std::iota(all.begin(), all.end(), 0u);
      cols[c] = parse_strings(text, detect_type(text, all));
    }
  });
  return Frame(frame.names(), std::move(cols));
}

namespace {

// RFC 4180 style records: double quotes enclose fields, "" escapes a quote.
std::vector<std::vector<std::string>> split_records(std::string_view text, char delim) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool row_has_data = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      row_has_data = true;
    } else if (c == delim) {
      row.push_back(std::move(field));
      field.clear();
      row_has_data = true;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      if (row_has_data || !field.empty()) {
        row.push_back(std::move(field));
        records.push_back(std::move(row));
      }
      row.clear();
      field.clear();
      row_has_data = false;
    } else {
      field.push_back(c);
      row_has_data = true;
    }
  }
  if (quoted) throw ParseError("unterminated quoted field at end of input");
  if (row_has_data || !field.empty()) {
    row.push_back(std::move(field));
    records.push_back(std::move(row));
  }
  return records;
}

}  // namespace

Frame parse_csv(std::string_view text, const CsvOptions& options) {
  auto records = split_records(text, options.delimiter);
  if (records.empty()) return Frame();
  std::size_t ncols = records.front().size();
  std::vector<std::string> names;
  std::size_t first = 0;
  if (options.header) {
    names = records.front();
    first = 1;
  } else {
    for (std::size_t c = 0; c < ncols; ++c) names.push_back("C" + std::to_string(c + 1));
  }
  std::vector<std::vector<std::string>> cells(ncols);
  for (auto& col : cells) col.reserve(records.size() - first);
  for (std::size_t r = first; r < records.size(); ++r) {
    if (records[r].size() != ncols)
      throw ParseError("ragged CSV row " + std::to_string(r - first) + " (record " +
                       std::to_string(r + 1) + "): " + std::to_string(records[r].size()) +
                       " fields, expected " + std::to_string(ncols));
    for (std::size_t c = 0; c < ncols; ++c) cells[c].push_back(std::move(records[r][c]));
  }
  std::vector<TypedColumn> cols;
  cols.reserve(ncols);
  for (auto& c : cells) cols.push_back(TypedColumn::strings(std::move(c)));
  Frame frame(std::move(names), std::move(cols));
  if (options.schema) return apply_schema(frame, *options.schema);
  return frame;
}

Frame read_csv(const std::string& path, const CsvOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str(), options);
}

void write_csv(const Frame& frame, const std::string& path, char delimiter) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  auto emit = [&](const std::string& s) {
    // A lone empty field would read back as a blank line.
    if (s.empty() && frame.ncols() == 1) {
      out << "\"\"";
      return;
    }
    bool needs_quote = s.find_first_of(std::string{delimiter, '"', '\n', '\r'}) != std::string::npos;
    if (!needs_quote) {
      out << s;
      return;
    }
    out << '"';
    for (char c : s) {
      if (c == '"') out << '"';
      out << c;
    }
    out << '"';
  };
  for (std::size_t c = 0; c < frame.ncols(); ++c) {
    if (c) out << delimiter;
    emit(frame.names()[c]);
  }
  out << '\n';
  for (std::size_t r = 0; r < frame.nrows(); ++r) {
    for (std::size_t c = 0; c < frame.ncols(); ++c) {
      if (c) out << delimiter;
      emit(frame.column(c).to_string(r));
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace bware
