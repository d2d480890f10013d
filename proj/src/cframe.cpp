#include "bware/cframe.hpp"

#include <cmath>
#include <numeric>
#include <unordered_map>

namespace bware {

CompressedColumn CompressedColumn::ddc(MapRef map, ColumnRef dict) {
  if (!map || !dict) throw Error("DDC column requires a map and a dictionary");
  CompressedColumn c;
  c.map_ = std::move(map);
  c.dict_ = std::move(dict);
  return c;
}

CompressedColumn CompressedColumn::raw(ColumnRef values) {
  if (!values) throw Error("raw column requires values");
  CompressedColumn c;
  c.raw_ = std::move(values);
  return c;
}

ValueType CompressedColumn::type() const { return is_compressed() ? dict_->type() : raw_->type(); }

std::uint8_t CompressedColumn::hex_digits() const {
  return is_compressed() ? dict_->hex_digits() : raw_->hex_digits();
}

std::size_t CompressedColumn::nrows() const { return is_compressed() ? map_->size() : raw_->size(); }

TypedColumn CompressedColumn::decompress() const {
  if (!is_compressed()) return *raw_;
  auto ids = map_->decode();
  return dict_->gather(ids);
}

CompressedColumn CompressedColumn::slice(std::size_t lo, std::size_t hi) const {
  if (is_compressed()) return ddc(make_map(map_->slice(lo, hi)), dict_);
  return raw(std::make_shared<const TypedColumn>(raw_->slice(lo, hi)));
}

CompressedFrame::CompressedFrame(std::vector<std::string> names,
                                 std::vector<CompressedColumn> columns)
    : names_(std::move(names)), columns_(std::move(columns)) {
  if (names_.size() != columns_.size()) throw ShapeError("compressed frame name/column mismatch");
  nrows_ = columns_.empty() ? 0 : columns_.front().nrows();
  for (const auto& c : columns_)
    if (c.nrows() != nrows_) throw ShapeError("compressed frame columns differ in row count");
}

Schema CompressedFrame::schema() const {
  Schema s;
  for (const auto& c : columns_) s.push_back({c.type(), false, c.hex_digits()});
  return s;
}

std::size_t dictionary_bytes(const TypedColumn& dict) { return dict.payload_bytes(); }

namespace {

struct Encoded {
  std::vector<std::uint32_t> ids;
  TypedColumn dict;
  bool aborted = false;
};

// Single pass: hash each value to a contiguously increasing id, then invert
// the table into the dictionary. Aborts once more than max_d ids exist.
template <class T, class Get>
Encoded encode_pass(std::size_t n, Get&& get, std::size_t max_d, std::uint8_t hex_digits) {
  using K = typename ValueKey<T>::type;
  std::unordered_map<K, std::uint32_t> table;
  Encoded out;
  out.ids.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    auto [it, inserted] =
        table.try_emplace(ValueKey<T>::of(get(r)), static_cast<std::uint32_t>(table.size()));
    if (inserted && table.size() > max_d) {
      out.aborted = true;
      return out;
    }
    out.ids[r] = it->second;
  }
  std::vector<T> dict(table.size());
  for (const auto& [k, v] : table) {
    if constexpr (std::is_same_v<T, double>) {
      dict[v] = std::bit_cast<double>(k);
    } else if constexpr (std::is_same_v<T, float>) {
      dict[v] = std::bit_cast<float>(k);
    } else if constexpr (std::is_same_v<T, std::string>) {
      dict[v] = std::string(k);
    } else {
      dict[v] = k;
    }
  }
  out.dict = TypedColumn(std::move(dict), hex_digits);
  return out;
}

Encoded encode_typed(const TypedColumn& col, std::size_t max_d) {
  return visit_column(col, [&](const auto& v) {
    using T = typename std::decay_t<decltype(v)>::value_type;
    return encode_pass<T>(v.size(), [&](std::size_t r) -> const T& { return v[r]; }, max_d,
                          col.hex_digits());
  });
}

// Fused parse + encode of a string column as the target type. Throws
// TypeError on the first value that does not cast.
Encoded encode_strings(const std::vector<std::string>& cells, const ColumnSchema& target,
                       std::size_t max_d) {
  if (target.type == ValueType::STRING)
    return encode_pass<std::string>(cells.size(), [&](std::size_t r) -> const std::string& {
      return cells[r];
    }, max_d, 0);
  auto fused = [&]<ValueType VT>() {
    return encode_pass<value_t<VT>>(cells.size(), [&](std::size_t r) {
      auto v = cast_cell<VT>(cells[r], target.hex_digits);
      if (!v)
        throw TypeError("cannot cast '" + cells[r] + "' at row " + std::to_string(r) + " to " +
                        std::string(to_string(VT)));
      return *v;
    }, max_d, target.hex_digits);
  };
  switch (target.type) {
    case ValueType::BOOLEAN: return fused.operator()<ValueType::BOOLEAN>();
    case ValueType::INT32: return fused.operator()<ValueType::INT32>();
    case ValueType::INT64: return fused.operator()<ValueType::INT64>();
    case ValueType::FP32: return fused.operator()<ValueType::FP32>();
    case ValueType::FP64: return fused.operator()<ValueType::FP64>();
    case ValueType::CHAR: return fused.operator()<ValueType::CHAR>();
    case ValueType::HEX: return fused.operator()<ValueType::HEX>();
    case ValueType::STRING: break;
  }
  return {};
}

CompressedColumn finish(Encoded enc) {
  std::size_t d = enc.dict.size();
  MapWidth w = map_width_for(std::max<std::size_t>(d, 1));
  auto map = make_map(MapVector::pack(enc.ids, w));
  return CompressedColumn::ddc(std::move(map), std::make_shared<const TypedColumn>(std::move(enc.dict)));
}

bool worth_compressing(const Encoded& enc, std::size_t nrows, std::size_t raw_bytes) {
  if (enc.dict.type() == ValueType::BOOLEAN) return true;
  std::size_t d = enc.dict.size();
  std::size_t compressed =
      MapVector::payload_bytes(map_width_for(std::max<std::size_t>(d, 1)), nrows) +
      dictionary_bytes(enc.dict);
  return compressed < raw_bytes;
}

std::size_t max_distinct(std::size_t nrows, double ratio, ValueType t) {
  if (t == ValueType::BOOLEAN) return nrows + 2;
  return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(nrows)));
}

CompressedColumn compress_typed(const TypedColumn& col, const CompressOptions& opts) {
  std::size_t n = col.size();
  auto enc = encode_typed(col, max_distinct(n, opts.max_dict_ratio, col.type()));
  if (enc.aborted || !worth_compressing(enc, n, col.payload_bytes()))
    return CompressedColumn::raw(std::make_shared<const TypedColumn>(col));
  return finish(std::move(enc));
}

}  // namespace

CompressedColumn dictionary_encode(const TypedColumn& typed) {
  return finish(encode_typed(typed, typed.size() + 2));
}

DictionaryCode dictionary_code(const TypedColumn& typed) {
  auto enc = encode_typed(typed, typed.size() + 2);
  return {std::move(enc.ids), std::move(enc.dict)};
}

CompressedColumn compress_column(const TypedColumn& col, const CompressOptions& opts,
                                 std::uint64_t seed_offset) {
  std::size_t n = col.size();
  if (col.type() != ValueType::STRING || n == 0) return compress_typed(col, opts);

  const auto& cells = col.values<std::string>();
  double fraction = opts.sample_fraction > 0 ? opts.sample_fraction : default_sample_fraction(n);
  auto sample = sample_rows(n, fraction, opts.seed + seed_offset);
  ColumnSchema target = detect_type(cells, sample);
  std::vector<std::uint32_t> all;
  auto all_rows = [&]() -> std::span<const std::uint32_t> {
    if (all.empty()) {
      all.resize(n);
      std::iota(all.begin(), all.end(), 0u);
    }
    return all;
  };
  // An all-empty or unlucky sample reports STRING; confirm on every row so the
  // result matches full-data detection.
  if (target.type == ValueType::STRING && sample.size() < n) target = detect_type(cells, all_rows());

  auto attempt = [&](const ColumnSchema& schema) -> CompressedColumn {
    auto enc = encode_strings(cells, schema, max_distinct(n, opts.max_dict_ratio, schema.type));
    if (!enc.aborted) {
      // Raw payload of the converted column, computed without materializing it.
      std::size_t raw_bytes = schema.type == ValueType::STRING
                                  ? col.payload_bytes()
                                  : n * value_size(schema.type);
      if (worth_compressing(enc, n, raw_bytes)) return finish(std::move(enc));
    }
    return CompressedColumn::raw(std::make_shared<const TypedColumn>(convert_column(col, schema)));
  };

  try {
    return attempt(target);
  } catch (const TypeError&) {
    // The sample missed a value that breaks the type: re-detect on all rows.
    return attempt(detect_type(cells, all_rows()));
  }
}

CompressedFrame compress_frame(const Frame& frame, const CompressOptions& opts) {
  std::vector<CompressedColumn> cols(frame.ncols());
  parallel_for(frame.ncols(), [&](std::size_t c) { cols[c] = compress_column(frame.column(c), opts, c); });
  return CompressedFrame(frame.names(), std::move(cols));
}

Frame decompress_frame(const CompressedFrame& cf) {
  std::vector<TypedColumn> cols(cf.ncols());
  parallel_for(cf.ncols(), [&](std::size_t c) { cols[c] = cf.column(c).decompress(); });
  return Frame(cf.names(), std::move(cols));
}

std::size_t column_memory_estimate(const CompressedColumn& c) {
  if (!c.is_compressed()) return c.raw_values()->payload_bytes() + kColumnOverhead;
  return c.map()->payload_bytes() + dictionary_bytes(*c.dict()) + kColumnOverhead;
}

std::size_t frame_memory_estimate(const CompressedFrame& cf) {
  std::size_t total = 0;
  for (const auto& c : cf.columns()) total += column_memory_estimate(c);
  return total;
}

}  // namespace bware
