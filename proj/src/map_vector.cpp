#include "bware/map_vector.hpp"

#include <algorithm>
#include <string>

namespace bware {

double bytes_per_row(MapWidth w) {
  switch (w) {
    case MapWidth::W0: return 0.0;
    case MapWidth::W1bit: return 0.125;
    case MapWidth::W1B: return 1.0;
    case MapWidth::W2B: return 2.0;
    case MapWidth::W3B: return 3.0;
    case MapWidth::W4B: return 4.0;
  }
  return 0.0;
}

const char* to_string(MapWidth w) {
  switch (w) {
    case MapWidth::W0: return "0b";
    case MapWidth::W1bit: return "1b";
    case MapWidth::W1B: return "1B";
    case MapWidth::W2B: return "2B";
    case MapWidth::W3B: return "3B";
    case MapWidth::W4B: return "4B";
  }
  return "?";
}

MapWidth map_width_for(std::uint64_t d) {
  if (d == 0) throw BoundsError("map width requested for zero distinct values");
  for (MapWidth w : {MapWidth::W0, MapWidth::W1bit, MapWidth::W1B, MapWidth::W2B, MapWidth::W3B,
                     MapWidth::W4B})
    if (d <= capacity(w)) return w;
  throw UnsupportedError("unsupported cardinality " + std::to_string(d) + " exceeds 2^31");
}

std::size_t MapVector::payload_bytes(MapWidth width, std::size_t nrows) {
  switch (width) {
    case MapWidth::W0: return 0;
    case MapWidth::W1bit: return (nrows + 7) / 8;
    case MapWidth::W1B: return nrows;
    case MapWidth::W2B: return 2 * nrows;
    case MapWidth::W3B: return 3 * nrows;
    case MapWidth::W4B: return 4 * nrows;
  }
  return 0;
}

MapVector::MapVector(MapWidth width, std::size_t nrows)
    : width_(width), nrows_(nrows), bytes_(payload_bytes(width, nrows), 0) {}

MapVector MapVector::pack(std::span<const std::uint32_t> ids, MapWidth width) {
  MapVector m(width, ids.size());
  std::uint8_t* p = m.bytes_.data();
  const std::uint64_t cap = capacity(width);
  for (std::size_t r = 0; r < ids.size(); ++r)
    if (ids[r] >= cap)
      throw BoundsError("id " + std::to_string(ids[r]) + " at row " + std::to_string(r) +
                        " exceeds map width " + to_string(width));
  switch (width) {
    case MapWidth::W0: break;
    case MapWidth::W1bit:
      for (std::size_t r = 0; r < ids.size(); ++r) p[r >> 3] |= std::uint8_t(ids[r] << (r & 7));
      break;
    case MapWidth::W1B:
      for (std::size_t r = 0; r < ids.size(); ++r) p[r] = std::uint8_t(ids[r]);
      break;
    default:
      for (std::size_t r = 0; r < ids.size(); ++r) m.set(r, ids[r]);
      break;
  }
  return m;
}

MapVector MapVector::from_bytes(MapWidth width, std::size_t nrows, std::vector<std::uint8_t> bytes) {
  if (bytes.size() != payload_bytes(width, nrows))
    throw FormatError("map payload has " + std::to_string(bytes.size()) + " bytes, expected " +
                      std::to_string(payload_bytes(width, nrows)));
  MapVector m;
  m.width_ = width;
  m.nrows_ = nrows;
  m.bytes_ = std::move(bytes);
  return m;
}

void MapVector::set(std::size_t row, std::uint32_t id) {
  if (row >= nrows_) throw BoundsError("map row " + std::to_string(row) + " out of range");
  if (id >= capacity(width_))
    throw BoundsError("id " + std::to_string(id) + " exceeds map width " + to_string(width_));
  std::uint8_t* p = bytes_.data();
  switch (width_) {
    case MapWidth::W0: break;
    case MapWidth::W1bit:
      p[row >> 3] = std::uint8_t((p[row >> 3] & ~(1u << (row & 7))) | (id << (row & 7)));
      break;
    case MapWidth::W1B: p[row] = std::uint8_t(id); break;
    case MapWidth::W2B:
      p[2 * row] = std::uint8_t(id);
      p[2 * row + 1] = std::uint8_t(id >> 8);
      break;
    case MapWidth::W3B:
      p[3 * row] = std::uint8_t(id);
      p[3 * row + 1] = std::uint8_t(id >> 8);
      p[3 * row + 2] = std::uint8_t(id >> 16);
      break;
    case MapWidth::W4B:
      p[4 * row] = std::uint8_t(id);
      p[4 * row + 1] = std::uint8_t(id >> 8);
      p[4 * row + 2] = std::uint8_t(id >> 16);
      p[4 * row + 3] = std::uint8_t(id >> 24);
      break;
  }
}

std::vector<std::uint32_t> MapVector::decode() const {
  std::vector<std::uint32_t> out(nrows_);
  decode(0, nrows_, out.data());
  return out;
}

void MapVector::decode(std::size_t lo, std::size_t hi, std::uint32_t* out) const {
  for_each(lo, hi, [&](std::size_t r, std::uint32_t id) { out[r - lo] = id; });
}

MapVector MapVector::slice(std::size_t lo, std::size_t hi) const {
  if (lo > hi || hi > nrows_)
    throw BoundsError("map slice [" + std::to_string(lo) + ", " + std::to_string(hi) +
                      ") out of range for " + std::to_string(nrows_) + " rows");
  if (width_ != MapWidth::W1bit && width_ != MapWidth::W0) {
    std::size_t b = payload_bytes(width_, 1);
    MapVector m;
    m.width_ = width_;
    m.nrows_ = hi - lo;
    m.bytes_.assign(bytes_.begin() + static_cast<std::ptrdiff_t>(lo * b),
                    bytes_.begin() + static_cast<std::ptrdiff_t>(hi * b));
    return m;
  }
  MapVector m(width_, hi - lo);
  for (std::size_t r = lo; r < hi; ++r)
    if (get(r)) m.set(r - lo, 1);
  return m;
}

MapVector MapVector::gather(std::span<const std::uint32_t> rows) const {
  MapVector m(width_, rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= nrows_) throw BoundsError("gather row " + std::to_string(rows[i]) + " out of range");
    std::uint32_t id = get(rows[i]);
    if (id) m.set(i, id);
  }
  return m;
}

MapVector MapVector::repack(MapWidth width) const {
  if (width == width_) return *this;
  auto ids = decode();
  return pack(ids, width);
}

std::uint32_t MapVector::max_id() const {
  std::uint32_t mx = 0;
  for_each([&](std::size_t, std::uint32_t id) { mx = std::max(mx, id); });
  return mx;
}

bool operator==(const MapVector& a, const MapVector& b) {
  return a.width_ == b.width_ && a.nrows_ == b.nrows_ && a.bytes_ == b.bytes_;
}

}  // namespace bware
