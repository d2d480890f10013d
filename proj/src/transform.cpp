#include "bware/transform.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <unordered_map>

#include "bware/cla.hpp"
#include "json.hpp"

namespace bware {

using json = nlohmann::json;

std::uint32_t EquiWidthBins::id(double x) const {
  if (!(max > min)) return 0;
  double q = std::floor(static_cast<double>(bins) * (x - min) / (max - min));
  if (!(q > 0.0)) return 0;
  if (q >= static_cast<double>(bins - 1)) return bins - 1;
  return static_cast<std::uint32_t>(q);
}

std::uint32_t EquiHeightBins::id(double x) const {
  return static_cast<std::uint32_t>(std::lower_bound(boundaries.begin(), boundaries.end(), x) - boundaries.begin());
}

namespace {

void check_bins(std::uint32_t bins) {
  if (bins < 1) throw SpecError("bin count must be at least 1");
}

void check_finite(std::span<const double> x) {
  for (std::size_t r = 0; r < x.size(); ++r)
    if (std::isnan(x[r])) throw TypeError("NaN value at row " + std::to_string(r));
}

}  // namespace

EquiWidthBins fit_equiwidth(std::span<const double> x, std::uint32_t bins) {
  check_bins(bins);
  check_finite(x);
  EquiWidthBins b;
  b.bins = bins;
  if (x.empty()) return b;
  auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  b.min = *lo;
  b.max = *hi;
  return b;
}

EquiHeightBins fit_equiheight(std::span<const double> x, std::uint32_t bins) {
  check_bins(bins);
  check_finite(x);
  std::vector<double> sorted(x.begin(), x.end());
  std::sort(sorted.begin(), sorted.end());
  EquiHeightBins b;
  b.bins = bins;
  const std::uint64_t n = sorted.size();
  if (n == 0) return b;
  for (std::uint64_t j = 1; j < bins; ++j) {
    std::uint64_t pos = (n * j + bins - 1) / bins;  // 1-based order statistic
    b.boundaries.push_back(sorted[pos - 1]);
  }
  return b;
}

EquiHeightBins fit_equiheight_weighted(std::span<const double> values, std::span<const std::uint64_t> counts,
                                       std::uint32_t bins) {
  check_bins(bins);
  check_finite(values);
  if (values.size() != counts.size()) throw ShapeError("values and counts differ in length");
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  const std::uint64_t n = std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
  EquiHeightBins b;
  b.bins = bins;
  if (n == 0) return b;
  std::size_t k = 0;
  std::uint64_t cum = 0;
  for (std::uint64_t j = 1; j < bins; ++j) {
    std::uint64_t pos = (n * j + bins - 1) / bins;
    while (cum + counts[order[k]] < pos) cum += counts[order[k++]];
    b.boundaries.push_back(values[order[k]]);
  }
  return b;
}

std::vector<std::uint32_t> quantize_equiwidth(std::span<const double> x, std::uint32_t bins) {
  auto b = fit_equiwidth(x, bins);
  std::vector<std::uint32_t> ids(x.size());
  for (std::size_t r = 0; r < x.size(); ++r) ids[r] = b.id(x[r]);
  return ids;
}

std::vector<std::uint32_t> quantize_equiheight(std::span<const double> x, std::uint32_t bins) {
  auto b = fit_equiheight(x, bins);
  std::vector<std::uint32_t> ids(x.size());
  for (std::size_t r = 0; r < x.size(); ++r) ids[r] = b.id(x[r]);
  return ids;
}

double mae(std::span<const double> x, std::span<const double> xhat) {
  if (x.size() != xhat.size())
    throw ShapeError("mae: lengths " + std::to_string(x.size()) + " and " + std::to_string(xhat.size()));
  if (x.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += std::abs(x[i] - xhat[i]);
  return s / static_cast<double>(x.size());
}

const char* to_string(Directive d) {
  switch (d) {
    case Directive::PASS: return "pass";
    case Directive::RECODE: return "recode";
    case Directive::BIN: return "bin";
    case Directive::HASH: return "hash";
    case Directive::WORD_EMBED: return "embed";
  }
  return "?";
}

const char* to_string(EncodePath p) {
  switch (p) {
    case EncodePath::F_M: return "F-M";
    case EncodePath::F_CM: return "F-CM";
    case EncodePath::CF_CM: return "CF-CM";
  }
  return "?";
}

EncodePath encode_path_from_string(std::string_view s) {
  if (s == "F-M" || s == "F_M" || s == "fm") return EncodePath::F_M;
  if (s == "F-CM" || s == "F_CM" || s == "fcm") return EncodePath::F_CM;
  if (s == "CF-CM" || s == "CF_CM" || s == "cfcm") return EncodePath::CF_CM;
  throw SpecError("unknown transform path '" + std::string(s) + "' (expected F-M, F-CM or CF-CM)");
}

void TransformSpec::validate(std::size_t ncols) const {
  std::vector<std::string> problems;
  if (columns.size() != ncols)
    problems.push_back("spec covers " + std::to_string(columns.size()) + " columns, input has " +
                       std::to_string(ncols));
  for (std::size_t c = 0; c < columns.size(); ++c) {
    const auto& s = columns[c];
    std::string at = "column " + std::to_string(c) + ": ";
    if (s.kind == Directive::BIN && s.bins < 1) problems.push_back(at + "bin count must be >= 1");
    if (s.kind == Directive::HASH && s.buckets < 1) problems.push_back(at + "hash bucket count must be >= 1");
    if (s.kind == Directive::WORD_EMBED) {
      if (s.dummy) problems.push_back(at + "word embedding cannot be dummy coded");
      if (!s.embedding || s.embedding->rows() == 0 || s.embedding->cols() == 0)
        problems.push_back(at + "word embedding needs a non-empty matrix");
    }
  }
  if (!problems.empty()) {
    std::string msg = "invalid transform spec:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw SpecError(msg);
  }
}

namespace {

Matrix load_embedding(const json& m, const std::string& base_dir) {
  if (m.is_array()) {
    std::size_t rows = m.size();
    std::size_t cols = rows ? m[0].size() : 0;
    Matrix out(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
      if (m[r].size() != cols) throw SpecError("embedding matrix rows differ in length");
      for (std::size_t c = 0; c < cols; ++c) out(r, c) = m[r][c].get<double>();
    }
    return out;
  }
  std::filesystem::path p = m.get<std::string>();
  if (p.is_relative()) p = std::filesystem::path(base_dir) / p;
  Frame f = read_csv(p.string(), CsvOptions{.header = false, .delimiter = ',', .schema = std::nullopt});
  Matrix out(f.nrows(), f.ncols());
  for (std::size_t c = 0; c < f.ncols(); ++c)
    for (std::size_t r = 0; r < f.nrows(); ++r) out(r, c) = f.column(c).to_double(r);
  return out;
}

}  // namespace

TransformSpec parse_transform_spec(std::string_view text, const std::vector<std::string>& names,
                                   const std::string& base_dir) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw SpecError(std::string("transform spec is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw SpecError("transform spec must be a JSON object");

  std::vector<std::string> problems;
  TransformSpec spec;
  spec.columns.resize(names.size());
  std::vector<std::string> assigned(names.size());

  auto resolve = [&](const json& ref) -> std::optional<std::size_t> {
    if (ref.is_number_integer()) {
      auto i = ref.get<std::int64_t>();
      if (i >= 0 && static_cast<std::size_t>(i) < names.size()) return static_cast<std::size_t>(i);
      problems.push_back("column index " + std::to_string(i) + " out of range");
      return std::nullopt;
    }
    if (ref.is_string()) {
      auto it = std::find(names.begin(), names.end(), ref.get<std::string>());
      if (it != names.end()) return static_cast<std::size_t>(it - names.begin());
      problems.push_back("unknown column '" + ref.get<std::string>() + "'");
      return std::nullopt;
    }
    problems.push_back("column reference must be an index or a name: " + ref.dump());
    return std::nullopt;
  };
  auto assign = [&](std::size_t c, const char* key) -> bool {
    if (!assigned[c].empty()) {
      problems.push_back("column " + std::to_string(c) + " listed under both '" + assigned[c] + "' and '" + key + "'");
      return false;
    }
    assigned[c] = key;
    return true;
  };
  auto list = [&](const char* key) -> json {
    if (!doc.contains(key)) return json::array();
    if (!doc[key].is_array()) {
      problems.push_back(std::string("'") + key + "' must be a list");
      return json::array();
    }
    return doc[key];
  };

  for (const auto& [key, value] : doc.items())
    if (key != "recode" && key != "pass" && key != "dummy" && key != "bin" && key != "hash" && key != "embed")
      problems.push_back("unknown key '" + key + "'");

  for (const char* key : {"recode", "pass"}) {
    for (const auto& ref : list(key)) {
      auto c = resolve(ref);
      if (c && assign(*c, key)) spec.columns[*c].kind = std::string_view(key) == "recode" ? Directive::RECODE : Directive::PASS;
    }
  }
  for (const auto& e : list("bin")) {
    if (!e.is_object() || !e.contains("col")) {
      problems.push_back("bin entry needs {\"col\":..}: " + e.dump());
      continue;
    }
    auto c = resolve(e["col"]);
    if (!c || !assign(*c, "bin")) continue;
    auto& s = spec.columns[*c];
    s.kind = Directive::BIN;
    std::int64_t bins = e.value("bins", std::int64_t{0});
    if (bins < 1) problems.push_back("column " + std::to_string(*c) + ": bins must be >= 1");
    s.bins = static_cast<std::uint32_t>(std::max<std::int64_t>(bins, 0));
    std::string mode = e.value("mode", std::string("width"));
    if (mode == "width") s.mode = BinMode::EQUI_WIDTH;
    else if (mode == "height") s.mode = BinMode::EQUI_HEIGHT;
    else problems.push_back("column " + std::to_string(*c) + ": unknown bin mode '" + mode + "'");
  }
  for (const auto& e : list("hash")) {
    if (!e.is_object() || !e.contains("col")) {
      problems.push_back("hash entry needs {\"col\":..}: " + e.dump());
      continue;
    }
    auto c = resolve(e["col"]);
    if (!c || !assign(*c, "hash")) continue;
    auto& s = spec.columns[*c];
    s.kind = Directive::HASH;
    std::int64_t k = e.value("k", std::int64_t{0});
    if (k < 1) problems.push_back("column " + std::to_string(*c) + ": k must be >= 1");
    s.buckets = static_cast<std::uint32_t>(std::max<std::int64_t>(k, 0));
  }
  for (const auto& e : list("embed")) {
    if (!e.is_object() || !e.contains("col") || !e.contains("matrix")) {
      problems.push_back("embed entry needs {\"col\":..,\"matrix\":..}: " + e.dump());
      continue;
    }
    auto c = resolve(e["col"]);
    if (!c || !assign(*c, "embed")) continue;
    auto& s = spec.columns[*c];
    s.kind = Directive::WORD_EMBED;
    try {
      s.embedding = std::make_shared<const Matrix>(load_embedding(e["matrix"], base_dir));
    } catch (const Error& err) {
      problems.push_back("column " + std::to_string(*c) + ": cannot load embedding: " + err.what());
    }
  }
  for (const auto& ref : list("dummy")) {
    auto c = resolve(ref);
    if (!c) continue;
    if (spec.columns[*c].kind == Directive::WORD_EMBED)
      problems.push_back("column " + std::to_string(*c) + ": word embedding cannot be dummy coded");
    spec.columns[*c].dummy = true;
  }
  if (!problems.empty()) {
    std::string msg = "invalid transform spec:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw SpecError(msg);
  }
  spec.validate(names.size());
  return spec;
}

namespace {

std::vector<double> numeric_values(const TypedColumn& col) {
  return visit_column(col, [&](const auto& v) {
    using T = typename std::decay_t<decltype(v)>::value_type;
    std::vector<double> out(v.size());
    if constexpr (std::is_same_v<T, std::string> || std::is_same_v<T, char> || std::is_same_v<T, std::uint64_t>) {
      for (std::size_t r = 0; r < v.size(); ++r) out[r] = col.to_double(r);
    } else {
      for (std::size_t r = 0; r < v.size(); ++r) out[r] = static_cast<double>(v[r]);
    }
    return out;
  });
}

std::uint32_t hash_id(const TypedColumn& col, std::size_t row, std::uint32_t k) {
  return static_cast<std::uint32_t>(fnv1a(col.to_string(row)) % k);
}

Dictionary iota_dict(std::uint32_t d) {
  std::vector<double> v(d);
  std::iota(v.begin(), v.end(), 0.0);
  return Dictionary::dense(Matrix::column(std::move(v)));
}

// Per-row output of one column before assembly.
struct Codes {
  std::vector<std::uint32_t> ids;
  std::vector<double> values;  // PASS without dummy
  std::uint32_t domain = 0;
};

std::uint32_t output_width(const ColumnMeta& m, std::uint32_t domain) {
  if (m.spec.kind == Directive::WORD_EMBED) return static_cast<std::uint32_t>(m.spec.embedding->cols());
  return m.spec.dummy ? domain : 1;
}

void check_embedding(const ColumnMeta& m, std::size_t d) {
  if (m.spec.embedding->rows() < d)
    throw ShapeError("column '" + m.name + "': embedding has " + std::to_string(m.spec.embedding->rows()) +
                     " rows but the column has " + std::to_string(d) + " distinct values");
}

std::vector<std::uint64_t> id_counts(const MapVector& map, std::size_t d) {
  std::vector<std::uint64_t> counts(d, 0);
  map.for_each([&](std::size_t, std::uint32_t id) { ++counts[id]; });
  return counts;
}

Codes fit_plain(const TypedColumn& col, ColumnMeta& meta) {
  Codes out;
  const auto& s = meta.spec;
  switch (s.kind) {
    case Directive::RECODE:
    case Directive::WORD_EMBED: {
      auto dc = dictionary_code(col);
      out.domain = static_cast<std::uint32_t>(dc.dict.size());
      out.ids = std::move(dc.ids);
      meta.recode_values = std::make_shared<const TypedColumn>(std::move(dc.dict));
      if (s.kind == Directive::WORD_EMBED) check_embedding(meta, out.domain);
      break;
    }
    case Directive::PASS: {
      auto vals = numeric_values(col);
      if (!s.dummy) {
        out.values = std::move(vals);
        break;
      }
      auto dc = dictionary_code(TypedColumn::fp64(std::move(vals)));
      out.domain = static_cast<std::uint32_t>(dc.dict.size());
      out.ids = std::move(dc.ids);
      meta.pass_values = dc.dict.values<double>();
      break;
    }
    case Directive::BIN: {
      auto vals = numeric_values(col);
      out.ids.resize(vals.size());
      if (s.mode == BinMode::EQUI_WIDTH) {
        meta.equi_width = fit_equiwidth(vals, s.bins);
        for (std::size_t r = 0; r < vals.size(); ++r) out.ids[r] = meta.equi_width.id(vals[r]);
      } else {
        meta.equi_height = fit_equiheight(vals, s.bins);
        for (std::size_t r = 0; r < vals.size(); ++r) out.ids[r] = meta.equi_height.id(vals[r]);
      }
      out.domain = s.bins;
      break;
    }
    case Directive::HASH: {
      out.ids.resize(col.size());
      for (std::size_t r = 0; r < col.size(); ++r) out.ids[r] = hash_id(col, r, s.buckets);
      out.domain = s.buckets;
      break;
    }
  }
  meta.width = output_width(meta, out.domain);
  return out;
}

// value -> id lookup over canonical text; collects unseen values.
class Lookup {
 public:
  explicit Lookup(const TypedColumn& keys) {
    table_.reserve(keys.size());
    for (std::size_t i = 0; i < keys.size(); ++i) table_.emplace(keys.to_string(i), static_cast<std::uint32_t>(i));
  }
  std::uint32_t find(const std::string& key) {
    auto it = table_.find(key);
    if (it != table_.end()) return it->second;
    if (unseen_.size() < 10 && std::find(unseen_.begin(), unseen_.end(), key) == unseen_.end()) unseen_.push_back(key);
    ++misses_;
    return 0;
  }
  void raise_if_unseen(const std::string& column) const {
    if (misses_ == 0) return;
    std::string msg = "column '" + column + "': " + std::to_string(misses_) + " rows with unseen values:";
    for (const auto& u : unseen_) msg += " '" + u + "'";
    throw SpecError(msg);
  }

 private:
  std::unordered_map<std::string, std::uint32_t> table_;
  std::vector<std::string> unseen_;
  std::size_t misses_ = 0;
};

class ValueLookup {
 public:
  explicit ValueLookup(const std::vector<double>& keys) {
    for (std::size_t i = 0; i < keys.size(); ++i)
      table_.emplace(std::bit_cast<std::uint64_t>(keys[i]), static_cast<std::uint32_t>(i));
  }
  std::uint32_t find(double v) {
    auto it = table_.find(std::bit_cast<std::uint64_t>(v));
    if (it != table_.end()) return it->second;
    if (unseen_.size() < 10) unseen_.push_back(v);
    ++misses_;
    return 0;
  }
  void raise_if_unseen(const std::string& column) const {
    if (misses_ == 0) return;
    std::string msg = "column '" + column + "': " + std::to_string(misses_) + " rows with unseen values:";
    for (double u : unseen_) msg += " " + std::to_string(u);
    throw SpecError(msg);
  }

 private:
  std::unordered_map<std::uint64_t, std::uint32_t> table_;
  std::vector<double> unseen_;
  std::size_t misses_ = 0;
};

std::uint32_t fitted_domain(const ColumnMeta& m) {
  switch (m.spec.kind) {
    case Directive::RECODE:
    case Directive::WORD_EMBED: return static_cast<std::uint32_t>(m.recode_values->size());
    case Directive::PASS: return static_cast<std::uint32_t>(m.pass_values.size());
    case Directive::BIN: return m.spec.bins;
    case Directive::HASH: return m.spec.buckets;
  }
  return 0;
}

std::uint32_t bin_id(const ColumnMeta& m, double x) {
  return m.spec.mode == BinMode::EQUI_WIDTH ? m.equi_width.id(x) : m.equi_height.id(x);
}

Codes apply_plain(const TypedColumn& col, const ColumnMeta& meta) {
  Codes out;
  const auto& s = meta.spec;
  out.domain = fitted_domain(meta);
  switch (s.kind) {
    case Directive::RECODE:
    case Directive::WORD_EMBED: {
      Lookup lookup(*meta.recode_values);
      out.ids.resize(col.size());
      for (std::size_t r = 0; r < col.size(); ++r) out.ids[r] = lookup.find(col.to_string(r));
      lookup.raise_if_unseen(meta.name);
      break;
    }
    case Directive::PASS: {
      auto vals = numeric_values(col);
      if (!s.dummy) {
        out.values = std::move(vals);
        break;
      }
      ValueLookup lookup(meta.pass_values);
      out.ids.resize(vals.size());
      for (std::size_t r = 0; r < vals.size(); ++r) out.ids[r] = lookup.find(vals[r]);
      lookup.raise_if_unseen(meta.name);
      break;
    }
    case Directive::BIN: {
      auto vals = numeric_values(col);
      check_finite(vals);
      out.ids.resize(vals.size());
      for (std::size_t r = 0; r < vals.size(); ++r) out.ids[r] = bin_id(meta, vals[r]);
      break;
    }
    case Directive::HASH: {
      out.ids.resize(col.size());
      for (std::size_t r = 0; r < col.size(); ++r) out.ids[r] = hash_id(col, r, s.buckets);
      break;
    }
  }
  return out;
}

// Per-dictionary-entry translation for a DDC frame column.
struct DictCodes {
  std::vector<std::uint32_t> translate;  // empty: reuse the map as is
  std::vector<double> values;            // PASS without dummy: dictionary values
  std::uint32_t domain = 0;
};

DictCodes fit_dict(const CompressedColumn& c, ColumnMeta& meta) {
  DictCodes out;
  const auto& s = meta.spec;
  const TypedColumn& dict = *c.dict();
  const auto d = static_cast<std::uint32_t>(dict.size());
  switch (s.kind) {
    case Directive::RECODE:
    case Directive::WORD_EMBED:
      meta.recode_values = c.dict();
      out.domain = d;
      if (s.kind == Directive::WORD_EMBED) check_embedding(meta, d);
      break;
    case Directive::PASS: {
      auto vals = numeric_values(dict);
      if (!s.dummy) {
        out.values = std::move(vals);
        out.domain = d;
        break;
      }
      auto dc = dictionary_code(TypedColumn::fp64(std::move(vals)));
      out.domain = static_cast<std::uint32_t>(dc.dict.size());
      meta.pass_values = dc.dict.values<double>();
      if (out.domain != d) out.translate = std::move(dc.ids);
      break;
    }
    case Directive::BIN: {
      auto vals = numeric_values(dict);
      check_finite(vals);
      out.translate.resize(d);
      if (s.mode == BinMode::EQUI_WIDTH) {
        meta.equi_width = fit_equiwidth(vals, s.bins);
      } else {
        auto counts = id_counts(*c.map(), d);
        meta.equi_height = fit_equiheight_weighted(vals, counts, s.bins);
      }
      for (std::uint32_t k = 0; k < d; ++k) out.translate[k] = bin_id(meta, vals[k]);
      out.domain = s.bins;
      break;
    }
    case Directive::HASH:
      out.translate.resize(d);
      for (std::uint32_t k = 0; k < d; ++k) out.translate[k] = hash_id(dict, k, s.buckets);
      out.domain = s.buckets;
      break;
  }
  meta.width = output_width(meta, out.domain);
  return out;
}

DictCodes apply_dict(const CompressedColumn& c, const ColumnMeta& meta) {
  DictCodes out;
  const auto& s = meta.spec;
  const TypedColumn& dict = *c.dict();
  const auto d = static_cast<std::uint32_t>(dict.size());
  out.domain = fitted_domain(meta);
  auto identity_or = [&](std::vector<std::uint32_t> t) {
    bool same = t.size() == out.domain;
    for (std::uint32_t k = 0; same && k < t.size(); ++k) same = t[k] == k;
    if (!same) out.translate = std::move(t);
  };
  switch (s.kind) {
    case Directive::RECODE:
    case Directive::WORD_EMBED: {
      if (c.dict() == meta.recode_values) break;
      Lookup lookup(*meta.recode_values);
      std::vector<std::uint32_t> t(d);
      for (std::uint32_t k = 0; k < d; ++k) t[k] = lookup.find(dict.to_string(k));
      lookup.raise_if_unseen(meta.name);
      identity_or(std::move(t));
      break;
    }
    case Directive::PASS: {
      auto vals = numeric_values(dict);
      if (!s.dummy) {
        out.values = std::move(vals);
        out.domain = d;
        break;
      }
      ValueLookup lookup(meta.pass_values);
      std::vector<std::uint32_t> t(d);
      for (std::uint32_t k = 0; k < d; ++k) t[k] = lookup.find(vals[k]);
      lookup.raise_if_unseen(meta.name);
      identity_or(std::move(t));
      break;
    }
    case Directive::BIN: {
      auto vals = numeric_values(dict);
      check_finite(vals);
      out.translate.resize(d);
      for (std::uint32_t k = 0; k < d; ++k) out.translate[k] = bin_id(meta, vals[k]);
      break;
    }
    case Directive::HASH:
      out.translate.resize(d);
      for (std::uint32_t k = 0; k < d; ++k) out.translate[k] = hash_id(dict, k, s.buckets);
      break;
  }
  return out;
}

MapWidth width_for(std::uint32_t domain) { return map_width_for(std::max<std::uint32_t>(domain, 1)); }

// Dictionary of a group whose map holds ids in [0, domain).
Dictionary id_dict(const ColumnMeta& meta, std::uint32_t domain) {
  if (meta.spec.kind == Directive::WORD_EMBED) return Dictionary::shared(meta.spec.embedding);
  if (meta.spec.dummy) return Dictionary::identity(domain);
  return iota_dict(domain);
}

ColumnGroup pass_group(std::vector<double> values, ColIndexes cols) {
  const std::size_t n = values.size();
  // Sample check: an all-distinct sample means the column will not compress.
  auto sample = sample_rows(n, default_sample_fraction(n), 7);
  if (sample.size() >= 64 && sample.size() < n) {
    std::unordered_map<std::uint64_t, char> seen;
    for (auto r : sample) seen.emplace(std::bit_cast<std::uint64_t>(values[r]), 0);
    if (seen.size() == sample.size()) return ColumnGroup::uncompressed(std::move(cols), Matrix::column(std::move(values)));
  }
  auto cc = compress_column(TypedColumn::fp64(values));
  if (!cc.is_compressed()) return ColumnGroup::uncompressed(std::move(cols), Matrix::column(std::move(values)));
  return ColumnGroup::ddc(std::move(cols), cc.map(), Dictionary::dense(Matrix::column(cc.dict()->values<double>())));
}

ColumnGroup group_from_codes(Codes codes, const ColumnMeta& meta) {
  ColIndexes cols = ColIndexes::range(meta.offset, meta.offset + meta.width);
  if (meta.spec.kind == Directive::PASS && !meta.spec.dummy) return pass_group(std::move(codes.values), std::move(cols));
  auto map = make_map(MapVector::pack(codes.ids, width_for(codes.domain)));
  return ColumnGroup::ddc(std::move(cols), std::move(map), id_dict(meta, codes.domain));
}

ColumnGroup group_from_dict(const CompressedColumn& c, DictCodes codes, const ColumnMeta& meta) {
  ColIndexes cols = ColIndexes::range(meta.offset, meta.offset + meta.width);
  if (meta.spec.kind == Directive::PASS && !meta.spec.dummy)
    return ColumnGroup::ddc(std::move(cols), c.map(), Dictionary::dense(Matrix::column(std::move(codes.values))), true);
  if (codes.translate.empty()) return ColumnGroup::ddc(std::move(cols), c.map(), id_dict(meta, codes.domain), true);
  const MapVector& in = *c.map();
  std::vector<std::uint32_t> ids(in.size());
  in.for_each([&](std::size_t r, std::uint32_t id) { ids[r] = codes.translate[id]; });
  auto map = make_map(MapVector::pack(ids, width_for(codes.domain)));
  return ColumnGroup::ddc(std::move(cols), std::move(map), id_dict(meta, codes.domain));
}

void assign_offsets(MetaFrame& meta) {
  std::uint32_t off = 0;
  for (auto& m : meta.columns) {
    m.offset = off;
    off += m.width;
  }
  meta.ncols_out = off;
}

bool is_zero_bits(double v) { return std::bit_cast<std::uint64_t>(v) == 0; }

EncodedMatrix assemble_fm(const std::vector<Codes>& codes, const MetaFrame& meta, std::size_t n) {
  bool sparse = std::any_of(meta.columns.begin(), meta.columns.end(), [](const ColumnMeta& m) { return m.spec.dummy; });
  if (!sparse) {
    Matrix out(n, meta.ncols_out);
    parallel_for(codes.size(), [&](std::size_t c) {
      const auto& m = meta.columns[c];
      const auto& k = codes[c];
      if (m.spec.kind == Directive::WORD_EMBED) {
        const Matrix& W = *m.spec.embedding;
        for (std::size_t r = 0; r < n; ++r) std::copy(W.row(k.ids[r]), W.row(k.ids[r]) + W.cols(), out.row(r) + m.offset);
      } else if (m.spec.kind == Directive::PASS) {
        for (std::size_t r = 0; r < n; ++r) out(r, m.offset) = k.values[r];
      } else {
        for (std::size_t r = 0; r < n; ++r) out(r, m.offset) = static_cast<double>(k.ids[r]);
      }
    });
    return out;
  }
  std::vector<std::uint32_t> ptr{0};
  std::vector<std::uint32_t> idx;
  std::vector<double> vals;
  auto push = [&](std::uint32_t c, double v) {
    if (is_zero_bits(v)) return;
    idx.push_back(c);
    vals.push_back(v);
  };
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < codes.size(); ++c) {
      const auto& m = meta.columns[c];
      const auto& k = codes[c];
      if (m.spec.dummy) {
        push(m.offset + k.ids[r], 1.0);
      } else if (m.spec.kind == Directive::WORD_EMBED) {
        const double* w = m.spec.embedding->row(k.ids[r]);
        for (std::uint32_t j = 0; j < m.width; ++j) push(m.offset + j, w[j]);
      } else if (m.spec.kind == Directive::PASS) {
        push(m.offset, k.values[r]);
      } else {
        push(m.offset, static_cast<double>(k.ids[r]));
      }
    }
    ptr.push_back(static_cast<std::uint32_t>(vals.size()));
  }
  return SparseMatrix(n, meta.ncols_out, std::move(ptr), std::move(idx), std::move(vals));
}

MetaFrame init_meta(const std::vector<std::string>& names, const TransformSpec& spec, EncodePath path) {
  spec.validate(names.size());
  MetaFrame meta;
  meta.path = path;
  meta.columns.resize(names.size());
  for (std::size_t c = 0; c < names.size(); ++c) {
    meta.columns[c].name = names[c];
    meta.columns[c].spec = spec.columns[c];
  }
  return meta;
}

void require_rows(std::size_t n) {
  if (n == 0) throw ShapeError("transform needs at least one row");
}

EncodeResult encode_plain(const Frame& input, MetaFrame meta, bool fit) {
  const std::size_t n = input.nrows();
  require_rows(n);
  std::vector<Codes> codes(input.ncols());
  parallel_for(input.ncols(), [&](std::size_t c) {
    codes[c] = fit ? fit_plain(input.column(c), meta.columns[c]) : apply_plain(input.column(c), meta.columns[c]);
  });
  if (fit) assign_offsets(meta);
  if (meta.path == EncodePath::F_M) {
    auto m = assemble_fm(codes, meta, n);
    return {std::move(m), std::move(meta)};
  }
  std::vector<ColumnGroup> groups(codes.size());
  parallel_for(codes.size(), [&](std::size_t c) { groups[c] = group_from_codes(std::move(codes[c]), meta.columns[c]); });
  CompressedMatrix cm(n, meta.ncols_out, std::move(groups));
  return {std::move(cm), std::move(meta)};
}

EncodeResult encode_compressed(const CompressedFrame& input, MetaFrame meta, bool fit) {
  const std::size_t n = input.nrows();
  require_rows(n);
  const std::size_t m = input.ncols();
  std::vector<DictCodes> dict_codes(m);
  std::vector<Codes> plain_codes(m);
  parallel_for(m, [&](std::size_t c) {
    const auto& col = input.column(c);
    auto& cm = meta.columns[c];
    if (col.is_compressed())
      dict_codes[c] = fit ? fit_dict(col, cm) : apply_dict(col, cm);
    else
      plain_codes[c] = fit ? fit_plain(*col.raw_values(), cm) : apply_plain(*col.raw_values(), cm);
  });
  if (fit) assign_offsets(meta);
  std::vector<ColumnGroup> groups(m);
  parallel_for(m, [&](std::size_t c) {
    const auto& col = input.column(c);
    groups[c] = col.is_compressed() ? group_from_dict(col, std::move(dict_codes[c]), meta.columns[c])
                                    : group_from_codes(std::move(plain_codes[c]), meta.columns[c]);
  });
  CompressedMatrix cm(n, meta.ncols_out, std::move(groups));
  return {std::move(cm), std::move(meta)};
}

}  // namespace

Matrix materialize(const EncodedMatrix& m) {
  return std::visit(overloaded{
                        [](const Matrix& x) { return x; },
                        [](const SparseMatrix& x) { return x.to_dense(); },
                        [](const CompressedMatrix& x) { return decompress(x); },
                    },
                    m);
}

std::size_t encoded_size(const EncodedMatrix& m) {
  return std::visit(overloaded{
                        [](const Matrix& x) { return x.memory_bytes(); },
                        [](const SparseMatrix& x) { return x.memory_bytes(); },
                        [](const CompressedMatrix& x) { return x.memory_size(); },
                    },
                    m);
}

EncodeResult transform_encode(const Frame& input, const TransformSpec& spec, EncodePath path) {
  if (path == EncodePath::CF_CM) throw SpecError("the CF-CM path needs a compressed frame input");
  return encode_plain(input, init_meta(input.names(), spec, path), true);
}

EncodeResult transform_encode(const CompressedFrame& input, const TransformSpec& spec, EncodePath path) {
  if (path != EncodePath::CF_CM) return transform_encode(decompress_frame(input), spec, path);
  return encode_compressed(input, init_meta(input.names(), spec, path), true);
}

namespace {

MetaFrame apply_meta(const MetaFrame& meta, std::size_t ncols, EncodePath path) {
  if (meta.columns.size() != ncols)
    throw ShapeError("metadata covers " + std::to_string(meta.columns.size()) + " columns, input has " +
                     std::to_string(ncols));
  MetaFrame m = meta;
  m.path = path;
  return m;
}

}  // namespace

EncodeResult transform_apply(const Frame& input, const MetaFrame& meta, EncodePath path) {
  if (path == EncodePath::CF_CM) throw SpecError("the CF-CM path needs a compressed frame input");
  return encode_plain(input, apply_meta(meta, input.ncols(), path), false);
}

EncodeResult transform_apply(const CompressedFrame& input, const MetaFrame& meta, EncodePath path) {
  if (path != EncodePath::CF_CM) return transform_apply(decompress_frame(input), meta, path);
  return encode_compressed(input, apply_meta(meta, input.ncols(), path), false);
}

PathSizes output_size_model(const ColumnSpec& spec, std::size_t nrows, std::size_t d) {
  const double n = static_cast<double>(nrows);
  auto map_bytes = [&](std::size_t domain) {
    return static_cast<double>(MapVector::payload_bytes(map_width_for(std::max<std::size_t>(domain, 1)), nrows));
  };
  PathSizes s;
  switch (spec.kind) {
    case Directive::RECODE:
    case Directive::PASS:
      s.f_m = spec.dummy ? 12.0 * n : 8.0 * n;
      s.f_cm = map_bytes(d) + (spec.dummy ? 0.0 : 8.0 * static_cast<double>(d));
      s.cf_cm = kConstantSize;
      break;
    case Directive::BIN:
    case Directive::HASH: {
      std::size_t domain = spec.kind == Directive::BIN ? spec.bins : spec.buckets;
      s.f_m = spec.dummy ? 12.0 * n : 8.0 * n;
      s.f_cm = map_bytes(domain) + (spec.dummy ? 0.0 : 8.0 * static_cast<double>(domain));
      s.cf_cm = s.f_cm;
      break;
    }
    case Directive::WORD_EMBED: {
      double v = spec.embedding ? static_cast<double>(spec.embedding->cols()) : 0.0;
      s.f_m = (8.0 * v + 12.0) * n;
      s.f_cm = map_bytes(d);
      s.cf_cm = kConstantSize;
      break;
    }
  }
  return s;
}

std::string meta_to_json(const MetaFrame& meta) {
  json doc;
  doc["path"] = to_string(meta.path);
  doc["ncols_out"] = meta.ncols_out;
  doc["columns"] = json::array();
  for (const auto& m : meta.columns) {
    json c;
    c["name"] = m.name;
    c["directive"] = to_string(m.spec.kind);
    c["dummy"] = m.spec.dummy;
    c["offset"] = m.offset;
    c["width"] = m.width;
    if (m.recode_values) {
      json vals = json::array();
      for (std::size_t i = 0; i < m.recode_values->size(); ++i) vals.push_back(m.recode_values->to_string(i));
      c["recode"] = std::move(vals);
    }
    if (!m.pass_values.empty()) c["values"] = m.pass_values;
    if (m.spec.kind == Directive::BIN) {
      c["bins"] = m.spec.bins;
      if (m.spec.mode == BinMode::EQUI_WIDTH) {
        c["mode"] = "width";
        c["min"] = m.equi_width.min;
        c["max"] = m.equi_width.max;
      } else {
        c["mode"] = "height";
        c["boundaries"] = m.equi_height.boundaries;
      }
    }
    if (m.spec.kind == Directive::HASH) c["k"] = m.spec.buckets;
    if (m.spec.kind == Directive::WORD_EMBED) {
      c["embedding_rows"] = m.spec.embedding->rows();
      c["embedding_cols"] = m.spec.embedding->cols();
    }
    doc["columns"].push_back(std::move(c));
  }
  return doc.dump(2);
}

}  // namespace bware
