#include "bware/tio.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cstdio>
#include <cstring>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <thread>

#include "bware/cla.hpp"
#include "bware/morph.hpp"

namespace bware {

static_assert(std::endian::native == std::endian::little, "tiled format assumes a little-endian host");

namespace {

namespace fs = std::filesystem;

constexpr std::uint8_t kMagic[4] = {0x42, 0x57, 0x54, 0x46};
constexpr std::uint32_t kListedCols = 0xFFFFFFFFu;

enum DictTag : std::uint8_t { kInlineDense = 0, kIdentity = 1, kExternal = 2, kInlineTyped = 3 };

// ---------------------------------------------------------------- bytes

struct Out {
  std::vector<std::uint8_t> buf;

  template <class T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    buf.insert(buf.end(), p, p + sizeof(T));
  }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf.insert(buf.end(), b, b + n);
  }
  void str(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void doubles(const double* p, std::size_t n) { bytes(p, n * sizeof(double)); }
};

struct In {
  const std::uint8_t* data;
  std::size_t size;
  std::size_t pos = 0;
  std::string where;

  const std::uint8_t* take(std::size_t n) {
    if (n > size - pos) throw FormatError("truncated data in " + where);
    const std::uint8_t* p = data + pos;
    pos += n;
    return p;
  }
  template <class T>
  T get() {
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return v;
  }
  std::string str() {
    auto n = get<std::uint32_t>();
    const auto* p = take(n);
    return std::string(reinterpret_cast<const char*>(p), n);
  }
  std::vector<double> doubles(std::size_t n) {
    if (n > (size - pos) / sizeof(double)) throw FormatError("truncated data in " + where);
    std::vector<double> v(n);
    std::memcpy(v.data(), take(n * sizeof(double)), n * sizeof(double));
    return v;
  }
  bool done() const { return pos == size; }
};

void write_file(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed for " + path.string());
}

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> out((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return out;
}

void prepare_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir);
}

// Runs fn(i) for i in [0, n) on `workers` threads; rethrows the first error.
void run_pool(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  workers = std::min(std::max<std::size_t>(workers, 1), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------- payloads

void put_cols(Out& o, const ColIndexes& cols) {
  if (cols.is_range()) {
    o.put<std::uint32_t>(cols[0]);
    o.put<std::uint32_t>(cols[cols.size() - 1] + 1);
    return;
  }
  o.put<std::uint32_t>(kListedCols);
  o.put<std::uint32_t>(static_cast<std::uint32_t>(cols.size()));
  for (auto c : cols) o.put<std::uint32_t>(c);
}

ColIndexes get_cols(In& in) {
  auto a = in.get<std::uint32_t>();
  auto b = in.get<std::uint32_t>();
  if (a == kListedCols) {
    std::vector<std::uint32_t> v(b);
    for (auto& c : v) c = in.get<std::uint32_t>();
    return ColIndexes(std::move(v));
  }
  if (b <= a) throw FormatError("empty column range in " + in.where);
  return ColIndexes::range(a, b);
}

void put_map(Out& o, const MapVector& m) {
  o.put<std::uint8_t>(static_cast<std::uint8_t>(m.width()));
  o.bytes(m.bytes().data(), m.bytes().size());
}

MapVector get_map(In& in, std::size_t rows) {
  auto tag = in.get<std::uint8_t>();
  if (tag > static_cast<std::uint8_t>(MapWidth::W4B)) throw FormatError("bad map width tag in " + in.where);
  auto w = static_cast<MapWidth>(tag);
  std::size_t n = MapVector::payload_bytes(w, rows);
  const auto* p = in.take(n);
  return MapVector::from_bytes(w, rows, std::vector<std::uint8_t>(p, p + n));
}

void put_dense_dict(Out& o, const Matrix& m) {
  o.put<std::uint32_t>(static_cast<std::uint32_t>(m.rows()));
  o.put<std::uint32_t>(static_cast<std::uint32_t>(m.cols()));
  o.doubles(m.values().data(), m.values().size());
}

Matrix get_dense_dict(In& in) {
  auto d = in.get<std::uint32_t>();
  auto c = in.get<std::uint32_t>();
  return Matrix(d, c, in.doubles(static_cast<std::size_t>(d) * c));
}

template <class T>
void put_values(Out& o, const std::vector<T>& v) {
  if constexpr (std::is_same_v<T, std::string>) {
    for (const auto& s : v) o.str(s);
  } else {
    o.bytes(v.data(), v.size() * sizeof(T));
  }
}

void put_typed(Out& o, const TypedColumn& c) {
  o.put<std::uint8_t>(static_cast<std::uint8_t>(c.type()));
  o.put<std::uint8_t>(c.hex_digits());
  o.put<std::uint32_t>(static_cast<std::uint32_t>(c.size()));
  visit_column(c, [&](const auto& v) { put_values(o, v); });
}

TypedColumn get_typed(In& in) {
  auto t = in.get<std::uint8_t>();
  if (t > static_cast<std::uint8_t>(ValueType::STRING)) throw FormatError("bad value type in " + in.where);
  auto hex = in.get<std::uint8_t>();
  auto n = in.get<std::uint32_t>();
  TypedColumn col = TypedColumn::allocate(static_cast<ValueType>(t), n, hex);
  std::visit(
      [&](auto& v) {
        using T = typename std::decay_t<decltype(v)>::value_type;
        if constexpr (std::is_same_v<T, std::string>) {
          for (auto& s : v) s = in.str();
        } else {
          if (n > (in.size - in.pos) / sizeof(T)) throw FormatError("truncated data in " + in.where);
          std::memcpy(v.data(), in.take(n * sizeof(T)), n * sizeof(T));
        }
      },
      col.data());
  return col;
}

// Slot assignment for dictionaries written once into dict.bwt.
template <class Ptr>
struct Slots {
  std::map<Ptr, std::uint32_t> index;
  std::vector<Ptr> order;

  std::uint32_t of(Ptr p) {
    auto [it, fresh] = index.try_emplace(p, static_cast<std::uint32_t>(order.size()));
    if (fresh) order.push_back(p);
    return it->second;
  }
};

void put_dict(Out& o, const Dictionary& d, Slots<const Matrix*>* slots) {
  if (d.is_identity()) {
    o.put<std::uint8_t>(kIdentity);
    o.put<std::uint32_t>(static_cast<std::uint32_t>(d.rows()));
  } else if (slots) {
    o.put<std::uint8_t>(kExternal);
    o.put<std::uint32_t>(slots->of(d.matrix().get()));
  } else {
    o.put<std::uint8_t>(kInlineDense);
    put_dense_dict(o, *d.matrix());
  }
}

using DictTable = std::vector<MatrixRef>;
using TypedTable = std::vector<ColumnRef>;

Dictionary get_dict(In& in, const DictTable& table) {
  switch (in.get<std::uint8_t>()) {
    case kInlineDense: return Dictionary::dense(get_dense_dict(in));
    case kIdentity: return Dictionary::identity(in.get<std::uint32_t>());
    case kExternal: {
      auto slot = in.get<std::uint32_t>();
      if (slot >= table.size() || !table[slot]) throw FormatError("unknown dictionary slot in " + in.where);
      return Dictionary::dense(table[slot]);
    }
    default: throw FormatError("bad dictionary tag in " + in.where);
  }
}

// Narrowest width for the ids actually present in a tile.
MapVector narrow(const MapVector& m) {
  auto w = map_width_for(static_cast<std::uint64_t>(m.size() ? m.max_id() : 0) + 1);
  return w == m.width() ? m : m.repack(w);
}

void put_group(Out& o, const ColumnGroup& g, Slots<const Matrix*>* slots) {
  o.put<std::uint8_t>(static_cast<std::uint8_t>(g.encoding()));
  put_cols(o, g.cols());
  std::visit(overloaded{
                 [&](const DdcGroup& d) {
                   put_dict(o, d.dict, slots);
                   put_map(o, narrow(*d.map));
                 },
                 [&](const SdcGroup& s) {
                   o.doubles(s.default_tuple.data(), s.default_tuple.size());
                   o.put<std::uint32_t>(static_cast<std::uint32_t>(s.rows->size()));
                   for (auto r : *s.rows) o.put<std::uint32_t>(r);
                   put_dict(o, s.dict, slots);
                   put_map(o, narrow(*s.map));
                 },
                 [&](const ConstGroup& k) { o.doubles(k.tuple.data(), k.tuple.size()); },
                 [&](const EmptyGroup&) {},
                 [&](const UncompressedGroup& u) { o.doubles(u.block->values().data(), u.block->values().size()); },
             },
             g.body());
}

ColumnGroup get_group(In& in, std::size_t rows, const DictTable& table) {
  auto tag = in.get<std::uint8_t>();
  ColIndexes cols = get_cols(in);
  const std::size_t c = cols.size();
  switch (static_cast<Encoding>(tag)) {
    case Encoding::DDC: {
      Dictionary d = get_dict(in, table);
      return ColumnGroup::ddc(cols, make_map(get_map(in, rows)), std::move(d));
    }
    case Encoding::SDC: {
      auto def = in.doubles(c);
      auto ne = in.get<std::uint32_t>();
      std::vector<std::uint32_t> exc(ne);
      for (auto& r : exc) r = in.get<std::uint32_t>();
      Dictionary d = get_dict(in, table);
      return ColumnGroup::sdc(rows, cols, std::move(def), std::move(exc), make_map(get_map(in, ne)), std::move(d));
    }
    case Encoding::CONST: return ColumnGroup::constant(rows, cols, in.doubles(c));
    case Encoding::EMPTY: return ColumnGroup::empty(rows, cols);
    case Encoding::UNCOMPRESSED: return ColumnGroup::uncompressed(cols, Matrix(rows, c, in.doubles(rows * c)));
  }
  throw FormatError("bad group encoding tag in " + in.where);
}

void put_dense(Out& o, const Matrix& m) {
  o.put<std::uint32_t>(static_cast<std::uint32_t>(m.rows()));
  o.put<std::uint32_t>(static_cast<std::uint32_t>(m.cols()));
  o.doubles(m.values().data(), m.values().size());
}

std::size_t nnz_bits(const Matrix& m) {
  std::size_t k = 0;
  for (double v : m.values()) k += std::bit_cast<std::uint64_t>(v) != 0;
  return k;
}

void put_sparse(Out& o, const Matrix& m) {
  SparseMatrix s = SparseMatrix::from_dense(m);
  o.put<std::uint32_t>(static_cast<std::uint32_t>(m.rows()));
  o.put<std::uint32_t>(static_cast<std::uint32_t>(m.cols()));
  o.put<std::uint32_t>(static_cast<std::uint32_t>(s.values().size()));
  o.bytes(s.row_ptr().data(), s.row_ptr().size() * 4);
  o.bytes(s.col_idx().data(), s.col_idx().size() * 4);
  o.doubles(s.values().data(), s.values().size());
}

Matrix get_block(In& in, BlockKind kind) {
  auto r = in.get<std::uint32_t>();
  auto c = in.get<std::uint32_t>();
  if (kind == BlockKind::DENSE) return Matrix(r, c, in.doubles(static_cast<std::size_t>(r) * c));
  auto nnz = in.get<std::uint32_t>();
  Matrix m(r, c);
  std::vector<std::uint32_t> ptr(r + 1), idx(nnz);
  for (auto& p : ptr) p = in.get<std::uint32_t>();
  for (auto& p : idx) p = in.get<std::uint32_t>();
  auto vals = in.doubles(nnz);
  if (ptr.back() != nnz) throw FormatError("inconsistent sparse block in " + in.where);
  for (std::uint32_t row = 0; row < r; ++row)
    for (auto k = ptr[row]; k < ptr[row + 1]; ++k) {
      if (k >= nnz || idx[k] >= c) throw FormatError("sparse index out of range in " + in.where);
      m(row, idx[k]) = vals[k];
    }
  return m;
}

// ---------------------------------------------------------------- writing

struct TileBytes {
  BlockKind kind = BlockKind::DENSE;
  std::vector<std::uint8_t> payload;
};

std::size_t tile_count(std::uint64_t nrows, std::uint32_t tile_rows) {
  return static_cast<std::size_t>((nrows + tile_rows - 1) / tile_rows);
}

TileBytes smallest_plain(const Matrix& m) {
  std::size_t dense = 8 + 8 * m.rows() * m.cols();
  std::size_t sparse = 12 + 4 * (m.rows() + 1) + 12 * nnz_bits(m);
  Out o;
  if (sparse < dense) {
    put_sparse(o, m);
    return {BlockKind::SPARSE, std::move(o.buf)};
  }
  put_dense(o, m);
  return {BlockKind::DENSE, std::move(o.buf)};
}

Manifest finish(const std::string& dir, TiledHeader header, const std::vector<TileBytes>& tiles,
                const std::vector<std::uint8_t>* dict_bytes, const TiledOptions& opts) {
  Manifest man;
  // Tiles fill partitions in order; a partition closes once it reaches the minimum size.
  std::vector<std::pair<std::size_t, std::size_t>> ranges;
  std::size_t start = 0, acc = 0;
  for (std::size_t t = 0; t < tiles.size(); ++t) {
    acc += 13 + tiles[t].payload.size();
    switch (tiles[t].kind) {
      case BlockKind::DENSE: ++man.dense_tiles; break;
      case BlockKind::SPARSE: ++man.sparse_tiles; break;
      case BlockKind::COMPRESSED: ++man.compressed_tiles; break;
    }
    if (acc >= opts.min_partition || t + 1 == tiles.size()) {
      ranges.emplace_back(start, t + 1);
      start = t + 1;
      acc = 0;
    }
  }
  header.partitions.resize(ranges.size());
  parallel_for(ranges.size(), [&](std::size_t p) {
    Out o;
    for (std::size_t t = ranges[p].first; t < ranges[p].second; ++t) {
      o.put<std::uint64_t>(t);
      o.put<std::uint8_t>(static_cast<std::uint8_t>(tiles[t].kind));
      o.put<std::uint32_t>(static_cast<std::uint32_t>(tiles[t].payload.size()));
      o.bytes(tiles[t].payload.data(), tiles[t].payload.size());
    }
    char name[32];
    std::snprintf(name, sizeof name, "part-%05zu.bwt", p);
    write_file(fs::path(dir) / name, o.buf);
    header.partitions[p] = {name, ranges[p].first, static_cast<std::uint32_t>(ranges[p].second - ranges[p].first),
                            o.buf.size()};
  });
  for (const auto& p : header.partitions) man.total_bytes += p.bytes;
  if (dict_bytes) {
    write_file(fs::path(dir) / "dict.bwt", *dict_bytes);
    man.total_bytes += dict_bytes->size();
  }

  Out m;
  m.bytes(kMagic, 4);
  m.put<std::uint32_t>(header.version);
  m.put<std::uint8_t>(static_cast<std::uint8_t>(header.kind));
  m.put<std::uint64_t>(header.nrows);
  m.put<std::uint64_t>(header.ncols);
  m.put<std::uint32_t>(header.tile_rows);
  m.put<std::uint8_t>(header.flags);
  m.put<std::uint32_t>(static_cast<std::uint32_t>(header.partitions.size()));
  for (const auto& p : header.partitions) {
    m.str(p.name);
    m.put<std::uint64_t>(p.first_tile);
    m.put<std::uint32_t>(p.tile_count);
  }
  if (header.kind == TiledKind::CFRAME) {
    for (std::size_t c = 0; c < header.ncols; ++c) {
      m.str(header.names[c]);
      m.put<std::uint8_t>(static_cast<std::uint8_t>(header.schema[c].type));
      m.put<std::uint8_t>(header.schema[c].hex_digits);
    }
  }
  write_file(fs::path(dir) / "meta.bwt", m.buf);
  man.total_bytes += m.buf.size();
  man.header = std::move(header);
  return man;
}

void check_tile_rows(const TiledOptions& opts) {
  if (opts.tile_rows == 0) throw ShapeError("tile_rows must be at least 1");
}

}  // namespace

Manifest write_tiled(const Matrix& m, const std::string& dir, const TiledOptions& opts) {
  check_tile_rows(opts);
  prepare_dir(dir);
  TiledHeader h{kTiledVersion, TiledKind::MATRIX, m.rows(), m.cols(), opts.tile_rows, 0, {}, {}, {}};
  std::vector<TileBytes> tiles(tile_count(m.rows(), opts.tile_rows));
  parallel_for(tiles.size(), [&](std::size_t t) {
    std::size_t lo = t * opts.tile_rows, hi = std::min<std::size_t>(m.rows(), lo + opts.tile_rows);
    tiles[t] = smallest_plain(m.slice_rows(lo, hi));
  });
  return finish(dir, std::move(h), tiles, nullptr, opts);
}

Manifest write_tiled(const CompressedMatrix& m, const std::string& dir, const TiledOptions& opts) {
  check_tile_rows(opts);
  prepare_dir(dir);
  TiledHeader h{kTiledVersion, TiledKind::CMATRIX, m.nrows(), m.ncols(), opts.tile_rows,
                static_cast<std::uint8_t>(opts.separate_dict ? kFlagSeparateDict : 0), {}, {}, {}};
  // Slots are fixed up front so tiles can be serialized concurrently.
  Slots<const Matrix*> slots;
  for (const auto& g : m.groups()) {
    const Dictionary* d = nullptr;
    if (auto* x = g.try_as<DdcGroup>()) d = &x->dict;
    if (auto* x = g.try_as<SdcGroup>()) d = &x->dict;
    if (d && !d->is_identity()) slots.of(d->matrix().get());
  }
  std::vector<TileBytes> tiles(tile_count(m.nrows(), opts.tile_rows));
  parallel_for(tiles.size(), [&](std::size_t t) {
    std::size_t lo = t * opts.tile_rows, hi = std::min<std::size_t>(m.nrows(), lo + opts.tile_rows);
    Out o;
    o.put<std::uint16_t>(static_cast<std::uint16_t>(m.groups().size()));
    Slots<const Matrix*> local = slots;
    for (const auto& g : m.groups()) put_group(o, slice_group_rows(g, lo, hi), opts.separate_dict ? &local : nullptr);
    // Smallest of compressed, dense and sparse wins.
    Matrix plain(hi - lo, m.ncols());
    for (const auto& g : m.groups()) decompress_into(g, plain, lo, hi);
    TileBytes alt = smallest_plain(plain);
    tiles[t] = alt.payload.size() < o.buf.size() ? std::move(alt) : TileBytes{BlockKind::COMPRESSED, std::move(o.buf)};
  });
  if (m.groups().size() > 0xFFFF) throw UnsupportedError("more than 65535 groups per tile");
  std::vector<std::uint8_t> dict;
  if (opts.separate_dict) {
    Out o;
    for (std::uint32_t s = 0; s < slots.order.size(); ++s) {
      Out p;
      put_dense_dict(p, *slots.order[s]);
      o.put<std::uint32_t>(s);
      o.put<std::uint32_t>(static_cast<std::uint32_t>(p.buf.size()));
      o.bytes(p.buf.data(), p.buf.size());
    }
    dict = std::move(o.buf);
  }
  Manifest man = finish(dir, std::move(h), tiles, opts.separate_dict ? &dict : nullptr, opts);
  man.dict_slots = slots.order.size();
  return man;
}

Manifest write_tiled(const CompressedFrame& f, const std::string& dir, const TiledOptions& opts) {
  check_tile_rows(opts);
  prepare_dir(dir);
  TiledHeader h{kTiledVersion, TiledKind::CFRAME, f.nrows(), f.ncols(), opts.tile_rows,
                static_cast<std::uint8_t>(opts.separate_dict ? kFlagSeparateDict : 0), {}, f.names(), f.schema()};
  if (f.ncols() > 0xFFFF) throw UnsupportedError("more than 65535 columns per tile");
  Slots<const TypedColumn*> slots;
  for (const auto& c : f.columns())
    if (c.is_compressed()) slots.of(c.dict().get());
  std::vector<TileBytes> tiles(tile_count(f.nrows(), opts.tile_rows));
  parallel_for(tiles.size(), [&](std::size_t t) {
    std::size_t lo = t * opts.tile_rows, hi = std::min<std::size_t>(f.nrows(), lo + opts.tile_rows);
    Out o;
    o.put<std::uint16_t>(static_cast<std::uint16_t>(f.ncols()));
    for (std::uint32_t j = 0; j < f.ncols(); ++j) {
      CompressedColumn part = f.column(j).slice(lo, hi);
      Out raw;
      put_typed(raw, part.decompress());
      Out ddc;
      if (part.is_compressed()) {
        if (opts.separate_dict) {
          ddc.put<std::uint8_t>(kExternal);
          ddc.put<std::uint32_t>(slots.index.at(part.dict().get()));
        } else {
          ddc.put<std::uint8_t>(kInlineTyped);
          put_typed(ddc, *part.dict());
        }
        put_map(ddc, narrow(*part.map()));
      }
      bool use_ddc = part.is_compressed() && ddc.buf.size() <= raw.buf.size();
      o.put<std::uint8_t>(static_cast<std::uint8_t>(use_ddc ? Encoding::DDC : Encoding::UNCOMPRESSED));
      o.put<std::uint32_t>(j);
      o.put<std::uint32_t>(j + 1);
      const auto& chosen = use_ddc ? ddc.buf : raw.buf;
      o.bytes(chosen.data(), chosen.size());
    }
    tiles[t] = {BlockKind::COMPRESSED, std::move(o.buf)};
  });
  std::vector<std::uint8_t> dict;
  if (opts.separate_dict) {
    Out o;
    for (std::uint32_t s = 0; s < slots.order.size(); ++s) {
      Out p;
      put_typed(p, *slots.order[s]);
      o.put<std::uint32_t>(s);
      o.put<std::uint32_t>(static_cast<std::uint32_t>(p.buf.size()));
      o.bytes(p.buf.data(), p.buf.size());
    }
    dict = std::move(o.buf);
  }
  Manifest man = finish(dir, std::move(h), tiles, opts.separate_dict ? &dict : nullptr, opts);
  man.dict_slots = slots.order.size();
  return man;
}

// ---------------------------------------------------------------- reading

TiledHeader read_header(const std::string& dir) {
  fs::path path = fs::path(dir) / "meta.bwt";
  auto bytes = read_file(path);
  In in{bytes.data(), bytes.size(), 0, path.string()};
  const auto* magic = in.take(4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("bad magic in " + path.string());
  TiledHeader h;
  h.version = in.get<std::uint32_t>();
  if (h.version != kTiledVersion) throw FormatError("unsupported version " + std::to_string(h.version) + " in " + path.string());
  auto kind = in.get<std::uint8_t>();
  if (kind > static_cast<std::uint8_t>(TiledKind::CFRAME)) throw FormatError("bad object kind in " + path.string());
  h.kind = static_cast<TiledKind>(kind);
  h.nrows = in.get<std::uint64_t>();
  h.ncols = in.get<std::uint64_t>();
  h.tile_rows = in.get<std::uint32_t>();
  if (h.tile_rows == 0) throw FormatError("tile_rows is zero in " + path.string());
  h.flags = in.get<std::uint8_t>();
  auto np = in.get<std::uint32_t>();
  for (std::uint32_t p = 0; p < np; ++p) {
    PartitionInfo info;
    info.name = in.str();
    if (info.name.find('/') != std::string::npos || info.name.find("..") != std::string::npos)
      throw FormatError("partition name escapes the directory in " + path.string());
    info.first_tile = in.get<std::uint64_t>();
    info.tile_count = in.get<std::uint32_t>();
    h.partitions.push_back(std::move(info));
  }
  if (h.kind == TiledKind::CFRAME) {
    for (std::uint64_t c = 0; c < h.ncols; ++c) {
      h.names.push_back(in.str());
      ColumnSchema s;
      auto t = in.get<std::uint8_t>();
      if (t > static_cast<std::uint8_t>(ValueType::STRING)) throw FormatError("bad column type in " + path.string());
      s.type = static_cast<ValueType>(t);
      s.hex_digits = in.get<std::uint8_t>();
      h.schema.push_back(s);
    }
  }
  if (!in.done()) throw FormatError("trailing bytes in " + path.string());
  return h;
}

namespace {

struct RawTile {
  std::uint64_t id = 0;
  BlockKind kind = BlockKind::DENSE;
  const std::uint8_t* payload = nullptr;
  std::uint32_t length = 0;
  std::string where;
};

struct Tile {
  std::size_t rows = 0;
  BlockKind kind = BlockKind::DENSE;
  Matrix dense;
  std::vector<ColumnGroup> groups;
  std::vector<CompressedColumn> columns;
};

std::vector<RawTile> split_tiles(const std::vector<std::uint8_t>& bytes, const std::string& where) {
  std::vector<RawTile> out;
  In in{bytes.data(), bytes.size(), 0, where};
  while (!in.done()) {
    RawTile t;
    t.id = in.get<std::uint64_t>();
    auto k = in.get<std::uint8_t>();
    if (k > static_cast<std::uint8_t>(BlockKind::COMPRESSED)) throw FormatError("bad block kind in " + where);
    t.kind = static_cast<BlockKind>(k);
    t.length = in.get<std::uint32_t>();
    t.payload = in.take(t.length);
    t.where = where + " tile " + std::to_string(t.id);
    out.push_back(t);
  }
  return out;
}

Tile parse_tile(const RawTile& raw, const TiledHeader& h, std::size_t rows, const DictTable& dicts,
                const TypedTable& typed) {
  In in{raw.payload, raw.length, 0, raw.where};
  Tile t;
  t.rows = rows;
  t.kind = raw.kind;
  if (raw.kind != BlockKind::COMPRESSED) {
    if (h.kind == TiledKind::CFRAME) throw FormatError("frame tile stored as a matrix block in " + raw.where);
    t.dense = get_block(in, raw.kind);
    if (t.dense.rows() != rows || t.dense.cols() != h.ncols) throw FormatError("tile shape mismatch in " + raw.where);
  } else if (h.kind == TiledKind::CMATRIX) {
    auto ng = in.get<std::uint16_t>();
    for (std::uint16_t g = 0; g < ng; ++g) t.groups.push_back(get_group(in, rows, dicts));
    // Validates the column partition.
    CompressedMatrix(rows, h.ncols, t.groups);
  } else if (h.kind == TiledKind::CFRAME) {
    auto nc = in.get<std::uint16_t>();
    if (nc != h.ncols) throw FormatError("tile column count mismatch in " + raw.where);
    for (std::uint16_t j = 0; j < nc; ++j) {
      auto tag = in.get<std::uint8_t>();
      ColIndexes cols = get_cols(in);
      if (cols != ColIndexes::range(j, j + 1)) throw FormatError("frame tile columns out of order in " + raw.where);
      if (tag == static_cast<std::uint8_t>(Encoding::DDC)) {
        ColumnRef dict;
        auto dtag = in.get<std::uint8_t>();
        if (dtag == kExternal) {
          auto slot = in.get<std::uint32_t>();
          if (slot >= typed.size() || !typed[slot]) throw FormatError("unknown dictionary slot in " + raw.where);
          dict = typed[slot];
        } else if (dtag == kInlineTyped) {
          dict = std::make_shared<const TypedColumn>(get_typed(in));
        } else {
          throw FormatError("bad frame dictionary tag in " + raw.where);
        }
        t.columns.push_back(CompressedColumn::ddc(make_map(get_map(in, rows)), dict));
      } else if (tag == static_cast<std::uint8_t>(Encoding::UNCOMPRESSED)) {
        auto col = get_typed(in);
        if (col.size() != rows) throw FormatError("column length mismatch in " + raw.where);
        t.columns.push_back(CompressedColumn::raw(std::make_shared<const TypedColumn>(std::move(col))));
      } else {
        throw FormatError("bad frame column tag in " + raw.where);
      }
    }
  } else {
    throw FormatError("compressed tile in a plain matrix file " + raw.where);
  }
  if (!in.done()) throw FormatError("trailing bytes in " + raw.where);
  return t;
}

// ---------------------------------------------------------------- consolidation

std::string row_key(const double* p, std::size_t c) { return std::string(reinterpret_cast<const char*>(p), c * sizeof(double)); }

bool same_dict(const Dictionary& a, const Dictionary& b) {
  if (a.same_as(b)) return true;
  if (a.is_identity() || b.is_identity()) return false;
  return *a.matrix() == *b.matrix();
}

struct Consolidator {
  const TiledHeader& h;
  std::vector<Tile>& tiles;
  std::vector<std::once_flag> once;
  std::vector<Matrix> plain;

  Consolidator(const TiledHeader& h_, std::vector<Tile>& t) : h(h_), tiles(t), once(t.size()), plain(t.size()) {}

  std::size_t offset(std::size_t t) const { return t * h.tile_rows; }

  const Matrix& dense_of(std::size_t t) {
    if (tiles[t].kind != BlockKind::COMPRESSED) return tiles[t].dense;
    std::call_once(once[t], [&] { plain[t] = decompress(CompressedMatrix(tiles[t].rows, h.ncols, tiles[t].groups)); });
    return plain[t];
  }

  Matrix sub_block(std::size_t t, const ColIndexes& cols) { return dense_of(t).select_columns(cols.values()); }

  const ColumnGroup* find(std::size_t t, const ColIndexes& cols) const {
    for (const auto& g : tiles[t].groups)
      if (g.cols() == cols) return &g;
    return nullptr;
  }

  ColumnGroup recompress(const ColIndexes& cols) {
    Matrix all(h.nrows, cols.size());
    for (std::size_t t = 0; t < tiles.size(); ++t) {
      Matrix b = sub_block(t, cols);
      std::copy(b.values().begin(), b.values().end(), all.row(offset(t)));
    }
    return compress_block(all, cols);
  }

  ColumnGroup group(const ColumnGroup& ref, ReadCounters& k) {
    const ColIndexes& cols = ref.cols();
    const std::size_t c = cols.size();
    auto fallback = [&] {
      ++k.fallbacks;
      return recompress(cols);
    };
    switch (ref.encoding()) {
      case Encoding::DDC:
      case Encoding::SDC: {
        const bool sdc = ref.encoding() == Encoding::SDC;
        const Dictionary& dict = sdc ? ref.as<SdcGroup>().dict : ref.as<DdcGroup>().dict;
        const std::vector<double>* def = sdc ? &ref.as<SdcGroup>().default_tuple : nullptr;
        std::unordered_map<std::string, std::uint32_t> lookup;
        auto build_lookup = [&] {
          if (!lookup.empty() || dict.rows() == 0) return;
          Matrix dm = dict.materialize();
          for (std::size_t r = dm.rows(); r-- > 0;) lookup[row_key(dm.row(r), c)] = static_cast<std::uint32_t>(r);
        };
        std::vector<std::uint32_t> ids, rows;
        MapWidth width = MapWidth::W0;
        for (std::size_t t = 0; t < tiles.size(); ++t) {
          const ColumnGroup* g = find(t, cols);
          const std::size_t base = offset(t);
          if (g && !sdc && g->encoding() == Encoding::DDC && same_dict(g->as<DdcGroup>().dict, dict)) {
            const auto& m = *g->as<DdcGroup>().map;
            width = std::max(width, m.width());
            m.for_each([&](std::size_t, std::uint32_t id) { ids.push_back(id); });
            ++k.morph_combines;
            continue;
          }
          if (g && sdc && g->encoding() == Encoding::SDC && same_dict(g->as<SdcGroup>().dict, dict) &&
              same_bits_vec(g->as<SdcGroup>().default_tuple, *def)) {
            const auto& s = g->as<SdcGroup>();
            width = std::max(width, s.map->width());
            for (auto r : *s.rows) rows.push_back(static_cast<std::uint32_t>(base + r));
            s.map->for_each([&](std::size_t, std::uint32_t id) { ids.push_back(id); });
            ++k.morph_combines;
            continue;
          }
          // Re-encode the tile's rows against the consolidated dictionary.
          build_lookup();
          Matrix b = sub_block(t, cols);
          for (std::size_t r = 0; r < b.rows(); ++r) {
            if (sdc && std::memcmp(b.row(r), def->data(), c * sizeof(double)) == 0) continue;
            auto it = lookup.find(row_key(b.row(r), c));
            if (it == lookup.end()) return fallback();
            ids.push_back(it->second);
            if (sdc) rows.push_back(static_cast<std::uint32_t>(base + r));
          }
          ++k.conversions;
        }
        std::uint32_t top = ids.empty() ? 0 : *std::max_element(ids.begin(), ids.end());
        width = std::max(width, map_width_for(static_cast<std::uint64_t>(top) + 1));
        auto map = make_map(MapVector::pack(ids, width));
        if (!sdc) return ColumnGroup::ddc(cols, map, dict);
        return ColumnGroup::sdc(h.nrows, cols, *def, std::move(rows), map, dict);
      }
      case Encoding::CONST:
      case Encoding::EMPTY: {
        std::vector<double> tuple = ref.encoding() == Encoding::CONST ? ref.as<ConstGroup>().tuple : std::vector<double>(c, 0.0);
        for (std::size_t t = 0; t < tiles.size(); ++t) {
          const ColumnGroup* g = find(t, cols);
          if (g && g->encoding() == ref.encoding() &&
              (ref.encoding() == Encoding::EMPTY || same_bits_vec(g->as<ConstGroup>().tuple, tuple))) {
            ++k.morph_combines;
            continue;
          }
          Matrix b = sub_block(t, cols);
          for (std::size_t r = 0; r < b.rows(); ++r)
            if (std::memcmp(b.row(r), tuple.data(), c * sizeof(double)) != 0) return fallback();
          ++k.conversions;
        }
        if (ref.encoding() == Encoding::EMPTY) return ColumnGroup::empty(h.nrows, cols);
        return ColumnGroup::constant(h.nrows, cols, tuple);
      }
      case Encoding::UNCOMPRESSED: {
        Matrix all(h.nrows, c);
        for (std::size_t t = 0; t < tiles.size(); ++t) {
          const ColumnGroup* g = find(t, cols);
          Matrix b = g && g->encoding() == Encoding::UNCOMPRESSED ? *g->as<UncompressedGroup>().block : sub_block(t, cols);
          if (g && g->encoding() == Encoding::UNCOMPRESSED) ++k.morph_combines;
          else ++k.conversions;
          std::copy(b.values().begin(), b.values().end(), all.row(offset(t)));
        }
        return ColumnGroup::uncompressed(cols, std::move(all));
      }
    }
    return fallback();
  }

  static bool same_bits_vec(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
  }
};

TypedColumn concat_typed(const std::vector<TypedColumn>& parts, ValueType type, std::uint8_t hex) {
  std::size_t n = 0;
  for (const auto& p : parts) n += p.size();
  TypedColumn out = TypedColumn::allocate(type, 0, hex);
  std::visit(
      [&](auto& v) {
        using V = std::decay_t<decltype(v)>;
        v.reserve(n);
        for (const auto& p : parts) {
          const auto& src = std::get<V>(p.data());
          v.insert(v.end(), src.begin(), src.end());
        }
      },
      out.data());
  return out;
}

bool same_typed(const ColumnRef& a, const ColumnRef& b) { return a == b || *a == *b; }

CompressedColumn consolidate_column(std::vector<Tile>& tiles, std::size_t j, const ColumnSchema& schema,
                                    ReadCounters& k) {
  ColumnRef dict;
  for (const auto& t : tiles)
    if (t.columns[j].is_compressed()) {
      dict = t.columns[j].dict();
      break;
    }
  auto fallback = [&] {
    ++k.fallbacks;
    std::vector<TypedColumn> parts;
    for (const auto& t : tiles) parts.push_back(t.columns[j].decompress());
    return compress_column(concat_typed(parts, schema.type, schema.hex_digits));
  };
  if (!dict) {
    std::vector<TypedColumn> parts;
    for (const auto& t : tiles) {
      parts.push_back(*t.columns[j].raw_values());
      ++k.morph_combines;
    }
    return CompressedColumn::raw(std::make_shared<const TypedColumn>(concat_typed(parts, schema.type, schema.hex_digits)));
  }
  std::vector<std::uint32_t> ids;
  MapWidth width = MapWidth::W0;
  std::optional<DictionaryCode> lookup_code;
  for (const auto& t : tiles) {
    const CompressedColumn& c = t.columns[j];
    if (c.is_compressed() && same_typed(c.dict(), dict)) {
      width = std::max(width, c.map()->width());
      c.map()->for_each([&](std::size_t, std::uint32_t id) { ids.push_back(id); });
      ++k.morph_combines;
      continue;
    }
    // Values of this tile looked up in the consolidated dictionary: encode
    // dictionary followed by the tile and check no new values appear.
    TypedColumn vals = c.decompress();
    DictionaryCode code = dictionary_code(concat_typed({*dict, vals}, schema.type, schema.hex_digits));
    if (code.dict.size() != dict->size()) return fallback();
    ids.insert(ids.end(), code.ids.begin() + static_cast<std::ptrdiff_t>(dict->size()), code.ids.end());
    ++k.conversions;
  }
  std::uint32_t top = ids.empty() ? 0 : *std::max_element(ids.begin(), ids.end());
  width = std::max(width, map_width_for(static_cast<std::uint64_t>(top) + 1));
  return CompressedColumn::ddc(make_map(MapVector::pack(ids, width)), dict);
}

}  // namespace

TiledObject read_tiled(const std::string& dir, const ReadOptions& opts, ReadCounters* counters) {
  TiledHeader h = read_header(dir);
  const bool pooled = opts.mode == ReadMode::POOLED;
  const std::size_t workers = pooled ? (opts.workers ? opts.workers : num_threads()) : 1;
  const bool has_dict = (h.flags & kFlagSeparateDict) != 0;

  // Partitions and the dictionary partition are fetched concurrently when pooled.
  std::vector<std::vector<std::uint8_t>> files(h.partitions.size() + (has_dict ? 1 : 0));
  run_pool(files.size(), workers, [&](std::size_t i) {
    fs::path p = fs::path(dir) / (i < h.partitions.size() ? h.partitions[i].name : std::string("dict.bwt"));
    if (!fs::exists(p)) throw FormatError("manifest lists missing partition " + p.string());
    files[i] = read_file(p);
  });

  DictTable dicts;
  TypedTable typed;
  if (has_dict) {
    const auto& bytes = files.back();
    std::string where = (fs::path(dir) / "dict.bwt").string();
    In in{bytes.data(), bytes.size(), 0, where};
    while (!in.done()) {
      auto slot = in.get<std::uint32_t>();
      auto len = in.get<std::uint32_t>();
      In body{in.take(len), len, 0, where};
      if (h.kind == TiledKind::CFRAME) {
        if (typed.size() <= slot) typed.resize(slot + 1);
        typed[slot] = std::make_shared<const TypedColumn>(get_typed(body));
      } else {
        if (dicts.size() <= slot) dicts.resize(slot + 1);
        dicts[slot] = std::make_shared<const Matrix>(get_dense_dict(body));
      }
    }
  }

  const std::size_t ntiles = tile_count(h.nrows, h.tile_rows);
  std::vector<RawTile> raw(ntiles);
  std::vector<bool> seen(ntiles, false);
  for (std::size_t p = 0; p < h.partitions.size(); ++p) {
    auto parts = split_tiles(files[p], (fs::path(dir) / h.partitions[p].name).string());
    if (parts.size() != h.partitions[p].tile_count) throw FormatError("tile count mismatch in " + h.partitions[p].name);
    for (auto& t : parts) {
      if (t.id >= ntiles || seen[t.id]) throw FormatError("unexpected tile id " + std::to_string(t.id));
      seen[t.id] = true;
      raw[t.id] = std::move(t);
    }
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end()) throw FormatError("missing tiles in " + dir);

  // Index tiles joined with the dictionary partition.
  std::vector<Tile> tiles(ntiles);
  run_pool(ntiles, workers, [&](std::size_t t) {
    std::size_t rows = std::min<std::uint64_t>(h.tile_rows, h.nrows - t * static_cast<std::uint64_t>(h.tile_rows));
    tiles[t] = parse_tile(raw[t], h, rows, dicts, typed);
  });

  ReadCounters k;
  k.tiles = ntiles;
  TiledObject result;
  switch (h.kind) {
    case TiledKind::MATRIX: {
      Matrix m(h.nrows, h.ncols);
      for (std::size_t t = 0; t < ntiles; ++t)
        std::copy(tiles[t].dense.values().begin(), tiles[t].dense.values().end(), m.row(t * h.tile_rows));
      result = std::move(m);
      break;
    }
    case TiledKind::CMATRIX: {
      auto first = std::find_if(tiles.begin(), tiles.end(), [](const Tile& t) { return t.kind == BlockKind::COMPRESSED; });
      if (first == tiles.end()) {
        Matrix m(h.nrows, h.ncols);
        for (std::size_t t = 0; t < ntiles; ++t)
          std::copy(tiles[t].dense.values().begin(), tiles[t].dense.values().end(), m.row(t * h.tile_rows));
        result = wrap_uncompressed(m);
        break;
      }
      // The first compressed tile defines the consolidated scheme.
      const std::vector<ColumnGroup> ref = first->groups;
      Consolidator con(h, tiles);
      std::vector<ColumnGroup> groups(ref.size());
      std::vector<ReadCounters> local(ref.size());
      run_pool(ref.size(), workers, [&](std::size_t g) { groups[g] = con.group(ref[g], local[g]); });
      for (const auto& l : local) {
        k.morph_combines += l.morph_combines;
        k.conversions += l.conversions;
        k.fallbacks += l.fallbacks;
      }
      result = CompressedMatrix(h.nrows, h.ncols, std::move(groups));
      break;
    }
    case TiledKind::CFRAME: {
      std::vector<CompressedColumn> cols(h.ncols);
      std::vector<ReadCounters> local(h.ncols);
      run_pool(h.ncols, workers, [&](std::size_t j) { cols[j] = consolidate_column(tiles, j, h.schema[j], local[j]); });
      for (const auto& l : local) {
        k.morph_combines += l.morph_combines;
        k.conversions += l.conversions;
        k.fallbacks += l.fallbacks;
      }
      if (ntiles == 0)
        for (std::size_t j = 0; j < h.ncols; ++j)
          cols[j] = CompressedColumn::raw(
              std::make_shared<const TypedColumn>(TypedColumn::allocate(h.schema[j].type, 0, h.schema[j].hex_digits)));
      result = CompressedFrame(h.names, std::move(cols));
      break;
    }
  }
  if (counters) *counters = k;
  return result;
}

// ---------------------------------------------------------------- streaming encode

CompressionScheme::CompressionScheme(ColIndexes cols)
    : cols_(std::move(cols)), dict_(std::make_shared<const Matrix>(0, cols_.size())) {
  if (cols_.empty()) throw ShapeError("scheme without columns");
}

ColumnGroup update_and_encode(CompressionScheme& s, const Matrix& block) {
  const std::size_t c = s.cols_.size();
  if (block.cols() != c) throw ShapeError("block has " + std::to_string(block.cols()) + " columns, scheme expects " + std::to_string(c));
  const std::size_t n = block.rows();
  const std::size_t ms = s.table_.size();
  std::vector<std::string> added;

  auto put = [&](std::size_t r) {
    auto [it, fresh] = s.table_.try_emplace(row_key(block.row(r), c), static_cast<std::uint32_t>(s.table_.size()));
    if (fresh) added.push_back(it->first);
    return it->second;
  };

  MapWidth width = std::max(MapWidth::W1B, map_width_for(std::max<std::size_t>(ms, 1)));
  MapVector map(width, n);
  bool overflow = false;
  for (std::size_t r = 0; r < n; ++r) {
    std::uint32_t id = put(r);
    // Check support of the id at the preallocated width.
    if (id >= capacity(width)) {
      overflow = true;
      break;
    }
    map.set(r, id);
  }
  if (overflow) {
    for (std::size_t r = 0; r < n; ++r) put(r);
    width = map_width_for(s.table_.size());
    map = MapVector(width, n);
    for (std::size_t r = 0; r < n; ++r) map.set(r, s.table_.at(row_key(block.row(r), c)));
    ++s.two_pass_;
  } else {
    ++s.one_pass_;
  }

  if (!added.empty()) {
    // Append-only growth: existing rows keep their position.
    Matrix grown(s.table_.size(), c);
    std::copy(s.dict_->values().begin(), s.dict_->values().end(), grown.data().begin());
    for (std::size_t i = 0; i < added.size(); ++i) std::memcpy(grown.row(ms + i), added[i].data(), c * sizeof(double));
    s.dict_ = std::make_shared<const Matrix>(std::move(grown));
  }
  return ColumnGroup::ddc(s.cols_, make_map(std::move(map)), Dictionary::dense(s.dict_));
}

ColumnGroup rebind(const ColumnGroup& g, const CompressionScheme& scheme) {
  const auto& d = g.as<DdcGroup>();
  if (d.dict.rows() > scheme.size()) throw ShapeError("group dictionary is not a prefix of the scheme dictionary");
  return ColumnGroup::ddc(g.cols(), d.map, Dictionary::dense(scheme.dictionary()), d.shared_map);
}

}  // namespace bware
