#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bware/cla.hpp"
#include "bware/colgroup.hpp"
#include "bware/matrix.hpp"

namespace bware {

struct MorphOptions {
  // Rows sampled for statistics: max(min_sample, sample_fraction * n), capped at n.
  double sample_fraction = 0.05;
  std::size_t min_sample = 2048;
  std::uint64_t seed = 7;
  // Most frequent tuple share above which SDC is considered.
  double dominance = 0.6;
  // Weight of workload compute cost against bytes in the merge objective.
  double alpha = 1.0;
  // Above this many units only the top pair_factor * m pairs (pre-scored on a
  // small sample) are candidates.
  bool limit_pairs = true;
  std::size_t pair_limit_units = 64;
  std::size_t pair_factor = 8;
  std::size_t prescore_rows = 256;
  // A rejected pair whose distinct count is at most additive keeps absorbing
  // such clusters, up to this many, until the set beats its parts.
  std::size_t lookahead = 16;
  // SDC x DDC converts the SDC side to DDC when at least this share of rows
  // are exceptions, otherwise falls back to recompression.
  double sdc_convert_share = 0.1;
};

// Statistics of one planning unit: an existing group of a compressed input,
// or a single column of an uncompressed block.
struct ColumnStats {
  ColIndexes cols;
  // Source group; for a column of an UNCOMPRESSED group, whole is false and
  // column is its position in the block.
  std::size_t group = 0;
  bool whole = true;
  std::size_t column = 0;
  double d = 1.0;
  bool exact = false;
  double nonzero_share = 0.0;
  double min = 0.0;
  double max = 0.0;
  double top_share = 1.0;
  bool all_zero = false;
  // Tuple id per sampled row, dense in first-occurrence order.
  std::vector<std::uint32_t> sample_ids;
};

struct Classification {
  std::size_t nrows = 0;
  std::size_t ncols = 0;
  std::vector<std::uint32_t> sample_rows;
  std::vector<ColumnStats> units;
};

Classification classify(const Matrix& input, const MorphOptions& opts = {});
// Exact per-group statistics; UNCOMPRESSED groups are split into sampled columns.
Classification classify(const CompressedMatrix& input, const MorphOptions& opts = {});

struct CoCodeEstimate {
  std::size_t i = 0;
  std::size_t j = 0;
  double d_ij = 0.0;
  // 2 d_ij / (d_i + d_j)
  double ratio = 0.0;
};

// d_ij from the zipped sample ids of two units (or merged clusters).
CoCodeEstimate estimate_cocode(const Classification& c, std::size_t i, std::size_t j);

struct PlanGroup {
  ColIndexes cols;
  Encoding target = Encoding::DDC;
  // Indexes into Classification::units.
  std::vector<std::size_t> members;
  double est_d = 1.0;
  double est_bytes = 0.0;
};

struct MorphPlan {
  std::size_t nrows = 0;
  std::size_t ncols = 0;
  std::vector<PlanGroup> groups;
  double est_bytes_before = 0.0;
  std::size_t merges = 0;
};

// Encoding and estimated bytes for a group of c columns with d distinct tuples.
struct EncodingChoice {
  Encoding encoding = Encoding::DDC;
  double bytes = 0.0;
};
EncodingChoice choose_encoding(double d, double top_share, bool all_zero, std::size_t nrows, const ColIndexes& cols,
                               const MorphOptions& opts = {});

MorphPlan group(const Classification& stats, const WorkloadVector& workload, const MorphOptions& opts = {});

std::string plan_to_json(const MorphPlan& plan);

struct MorphCounters {
  std::size_t combines = 0;
  std::size_t conversions = 0;
  std::size_t fallbacks = 0;

  MorphCounters& operator+=(const MorphCounters& o) {
    combines += o.combines;
    conversions += o.conversions;
    fallbacks += o.fallbacks;
    return *this;
  }
};

// Zips both maps, assigning combined ids in first co-occurrence order.
// Only co-occurring tuples reach the output dictionary.
ColumnGroup combine_ddc(const ColumnGroup& a, const ColumnGroup& b);

// Column union of any two groups; specialized kernels where one exists, else
// decompress both and recompress.
ColumnGroup combine_any(const ColumnGroup& a, const ColumnGroup& b, MorphCounters* counters = nullptr,
                        const MorphOptions& opts = {});

// Re-encodes g, keeping its dictionary where possible. Throws PlanError when g
// cannot be represented by target (CONST needs one tuple, EMPTY all zeros).
ColumnGroup morph_encoding(const ColumnGroup& g, Encoding target);

// Dictionary-encodes the columns of block from scratch; target picks the
// encoding, otherwise the cheapest one is chosen.
ColumnGroup compress_block(const Matrix& block, const ColIndexes& cols, std::optional<Encoding> target = std::nullopt,
                           const MorphOptions& opts = {});

CompressedMatrix execute_plan(const CompressedMatrix& input, const Classification& stats, const MorphPlan& plan,
                              const MorphOptions& opts = {}, MorphCounters* counters = nullptr);

// classify -> group -> execute. Uncompressed input is compressed.
CompressedMatrix morph(const Matrix& input, const WorkloadVector& workload, const MorphOptions& opts = {},
                       MorphCounters* counters = nullptr, MorphPlan* plan_out = nullptr);
CompressedMatrix morph(const CompressedMatrix& input, const WorkloadVector& workload, const MorphOptions& opts = {},
                       MorphCounters* counters = nullptr, MorphPlan* plan_out = nullptr);

// Bytes touched by classify + plan execution, for injection decisions.
double estimate_morph_cost(const CompressedMatrix& input, const MorphPlan& plan);

}  // namespace bware
