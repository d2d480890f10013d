#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "bware/common.hpp"

namespace bware {

// Row -> dictionary id index width. Values double as the on-disk tag.
enum class MapWidth : std::uint8_t { W0 = 0, W1bit = 1, W1B = 2, W2B = 3, W3B = 4, W4B = 5 };

// Number of distinct ids each width can address: 1, 2, 256, 2^16, 2^24, 2^31.
constexpr std::uint64_t capacity(MapWidth w) {
  switch (w) {
    case MapWidth::W0: return 1;
    case MapWidth::W1bit: return 2;
    case MapWidth::W1B: return 256;
    case MapWidth::W2B: return 1ULL << 16;
    case MapWidth::W3B: return 1ULL << 24;
    case MapWidth::W4B: return 1ULL << 31;
  }
  return 0;
}

// Bytes per row; W1bit reports 1/8.
double bytes_per_row(MapWidth w);
const char* to_string(MapWidth w);

// Smallest width whose capacity covers d distinct ids.
MapWidth map_width_for(std::uint64_t d);

// Packed little-endian id array. W1bit packs LSB-first within each byte;
// W0 has no payload and every row reads id 0.
class MapVector {
 public:
  MapVector() = default;
  MapVector(MapWidth width, std::size_t nrows);

  static MapVector pack(std::span<const std::uint32_t> ids, MapWidth width);
  static MapVector from_bytes(MapWidth width, std::size_t nrows, std::vector<std::uint8_t> bytes);
  static std::size_t payload_bytes(MapWidth width, std::size_t nrows);

  std::size_t size() const { return nrows_; }
  MapWidth width() const { return width_; }
  std::size_t payload_bytes() const { return bytes_.size(); }
  const std::vector<std::uint8_t>& bytes() const { return bytes_; }

  std::uint32_t get(std::size_t row) const {
    const std::uint8_t* p = bytes_.data();
    switch (width_) {
      case MapWidth::W0: return 0;
      case MapWidth::W1bit: return (p[row >> 3] >> (row & 7)) & 1u;
      case MapWidth::W1B: return p[row];
      case MapWidth::W2B: return p[2 * row] | (std::uint32_t{p[2 * row + 1]} << 8);
      case MapWidth::W3B:
        return p[3 * row] | (std::uint32_t{p[3 * row + 1]} << 8) |
               (std::uint32_t{p[3 * row + 2]} << 16);
      case MapWidth::W4B:
        return p[4 * row] | (std::uint32_t{p[4 * row + 1]} << 8) |
               (std::uint32_t{p[4 * row + 2]} << 16) | (std::uint32_t{p[4 * row + 3]} << 24);
    }
    return 0;
  }

  // Throws BoundsError when id does not fit the width.
  void set(std::size_t row, std::uint32_t id);

  std::vector<std::uint32_t> decode() const;
  void decode(std::size_t lo, std::size_t hi, std::uint32_t* out) const;

  // Calls fn(row, id) for every row in [lo, hi) with a width-specialized loop.
  template <class Fn>
  void for_each(std::size_t lo, std::size_t hi, Fn&& fn) const {
    const std::uint8_t* p = bytes_.data();
    switch (width_) {
      case MapWidth::W0:
        for (std::size_t r = lo; r < hi; ++r) fn(r, std::uint32_t{0});
        break;
      case MapWidth::W1bit:
        for (std::size_t r = lo; r < hi; ++r) fn(r, std::uint32_t((p[r >> 3] >> (r & 7)) & 1u));
        break;
      case MapWidth::W1B:
        for (std::size_t r = lo; r < hi; ++r) fn(r, std::uint32_t{p[r]});
        break;
      default:
        for (std::size_t r = lo; r < hi; ++r) fn(r, get(r));
        break;
    }
  }
  template <class Fn>
  void for_each(Fn&& fn) const {
    for_each(0, nrows_, std::forward<Fn>(fn));
  }

  MapVector slice(std::size_t lo, std::size_t hi) const;
  MapVector gather(std::span<const std::uint32_t> rows) const;
  MapVector repack(MapWidth width) const;
  std::uint32_t max_id() const;

  friend bool operator==(const MapVector& a, const MapVector& b);

 private:
  MapWidth width_ = MapWidth::W0;
  std::size_t nrows_ = 0;
  std::vector<std::uint8_t> bytes_;
};

using MapRef = std::shared_ptr<const MapVector>;

inline MapRef make_map(MapVector m) { return std::make_shared<const MapVector>(std::move(m)); }

}  // namespace bware
