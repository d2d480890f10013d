#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "bware/cframe.hpp"
#include "bware/colgroup.hpp"
#include "bware/matrix.hpp"

namespace bware {

// Tiled on-disk format: a directory holding meta.bwt, part-%05d.bwt index
// partitions and an optional dict.bwt. Little-endian throughout.
enum class TiledKind : std::uint8_t { MATRIX = 0, CMATRIX = 1, CFRAME = 2 };
enum class BlockKind : std::uint8_t { DENSE = 0, SPARSE = 1, COMPRESSED = 2 };

inline constexpr std::uint32_t kTiledVersion = 1;
inline constexpr std::uint8_t kFlagSeparateDict = 1;

struct TiledOptions {
  std::uint32_t tile_rows = 16384;
  bool separate_dict = true;
  std::size_t min_partition = 16 * 1024;
};

struct PartitionInfo {
  std::string name;
  std::uint64_t first_tile = 0;
  std::uint32_t tile_count = 0;
  std::uint64_t bytes = 0;
};

struct TiledHeader {
  std::uint32_t version = kTiledVersion;
  TiledKind kind = TiledKind::MATRIX;
  std::uint64_t nrows = 0;
  std::uint64_t ncols = 0;
  std::uint32_t tile_rows = 0;
  std::uint8_t flags = 0;
  std::vector<PartitionInfo> partitions;
  // CFRAME only.
  std::vector<std::string> names;
  Schema schema;
};

struct Manifest {
  TiledHeader header;
  std::size_t dense_tiles = 0;
  std::size_t sparse_tiles = 0;
  std::size_t compressed_tiles = 0;
  std::size_t dict_slots = 0;
  std::uint64_t total_bytes = 0;
};

Manifest write_tiled(const Matrix& m, const std::string& dir, const TiledOptions& opts = {});
Manifest write_tiled(const CompressedMatrix& m, const std::string& dir, const TiledOptions& opts = {});
Manifest write_tiled(const CompressedFrame& f, const std::string& dir, const TiledOptions& opts = {});

// Throws FormatError on bad magic or version, IoError when unreadable.
TiledHeader read_header(const std::string& dir);

enum class ReadMode : std::uint8_t { LOCAL, POOLED };

struct ReadOptions {
  ReadMode mode = ReadMode::LOCAL;
  // POOLED worker count; 0 uses num_threads().
  std::size_t workers = 0;
};

struct ReadCounters {
  std::size_t tiles = 0;
  // Tile index structures appended to the consolidated group (repacked when
  // widths differ).
  std::size_t morph_combines = 0;
  // Tile sub-blocks re-encoded against the consolidated dictionary.
  std::size_t conversions = 0;
  // Groups recompressed from decompressed values.
  std::size_t fallbacks = 0;
};

using TiledObject = std::variant<Matrix, CompressedMatrix, CompressedFrame>;

TiledObject read_tiled(const std::string& dir, const ReadOptions& opts = {}, ReadCounters* counters = nullptr);

// Streaming encoder state for one column set: recode table M from tuple to id
// and the dictionary D holding tuple k at row k. D only ever grows at the end,
// so groups encoded earlier stay valid against later dictionaries. Not
// thread-safe: concurrent encodes need external locking.
class CompressionScheme {
 public:
  explicit CompressionScheme(ColIndexes cols);

  const ColIndexes& cols() const { return cols_; }
  std::size_t size() const { return dict_->rows(); }
  // Current dictionary; the same object until a block adds new tuples.
  const MatrixRef& dictionary() const { return dict_; }

  std::size_t one_pass_blocks() const { return one_pass_; }
  std::size_t two_pass_blocks() const { return two_pass_; }

 private:
  friend ColumnGroup update_and_encode(CompressionScheme& scheme, const Matrix& block);

  ColIndexes cols_;
  std::unordered_map<std::string, std::uint32_t> table_;
  MatrixRef dict_;
  std::size_t one_pass_ = 0;
  std::size_t two_pass_ = 0;
};

// Encodes block (rows x |cols|) into a DDC group over the scheme's dictionary,
// adding unseen tuples. One pass at the width of the current table size (at
// least one byte); an id that outgrows it restarts as two passes.
ColumnGroup update_and_encode(CompressionScheme& scheme, const Matrix& block);

// The same group bound to the scheme's latest dictionary.
ColumnGroup rebind(const ColumnGroup& g, const CompressionScheme& scheme);

}  // namespace bware
