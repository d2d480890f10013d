#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "bware/cframe.hpp"
#include "bware/colgroup.hpp"
#include "bware/frame.hpp"
#include "bware/matrix.hpp"

namespace bware {

// Quantizers. Bin ids are 0-based.
struct EquiWidthBins {
  double min = 0.0;
  double max = 0.0;
  std::uint32_t bins = 1;
  // floor(bins * (x - min) / (max - min)) clamped to [0, bins-1]; 0 when max == min.
  std::uint32_t id(double x) const;
};

struct EquiHeightBins {
  // bins-1 lower empirical quantiles x_(ceil(n*j/bins)), ascending.
  std::vector<double> boundaries;
  std::uint32_t bins = 1;
  // Number of boundaries strictly below x.
  std::uint32_t id(double x) const;
};

EquiWidthBins fit_equiwidth(std::span<const double> x, std::uint32_t bins);
EquiHeightBins fit_equiheight(std::span<const double> x, std::uint32_t bins);
// Same quantiles from distinct values and their row counts (any order).
EquiHeightBins fit_equiheight_weighted(std::span<const double> values, std::span<const std::uint64_t> counts,
                                       std::uint32_t bins);

std::vector<std::uint32_t> quantize_equiwidth(std::span<const double> x, std::uint32_t bins);
std::vector<std::uint32_t> quantize_equiheight(std::span<const double> x, std::uint32_t bins);

// Mean absolute error; throws ShapeError on length mismatch.
double mae(std::span<const double> x, std::span<const double> xhat);

enum class Directive : std::uint8_t { PASS, RECODE, BIN, HASH, WORD_EMBED };
enum class BinMode : std::uint8_t { EQUI_WIDTH, EQUI_HEIGHT };
enum class EncodePath : std::uint8_t { F_M, F_CM, CF_CM };

const char* to_string(Directive d);
const char* to_string(EncodePath p);
EncodePath encode_path_from_string(std::string_view s);

struct ColumnSpec {
  Directive kind = Directive::PASS;
  bool dummy = false;
  std::uint32_t bins = 0;
  BinMode mode = BinMode::EQUI_WIDTH;
  std::uint32_t buckets = 0;
  // WORD_EMBED: m x v table, row i embeds recode id i.
  MatrixRef embedding;
};

// One entry per input column; columns not named in a JSON spec are PASS.
struct TransformSpec {
  std::vector<ColumnSpec> columns;

  // Throws SpecError listing every problem at once.
  void validate(std::size_t ncols) const;
};

// JSON form:
//   {"recode":[c..], "pass":[c..], "dummy":[c..],
//    "bin":[{"col":c,"bins":n,"mode":"width"|"height"}],
//    "hash":[{"col":c,"k":K}], "embed":[{"col":c,"matrix":"path.csv"|[[..],..]}]}
// Columns are 0-based indexes or names. Relative matrix paths resolve
// against base_dir.
TransformSpec parse_transform_spec(std::string_view json, const std::vector<std::string>& names,
                                   const std::string& base_dir = ".");

// Fitted state of one column.
struct ColumnMeta {
  std::string name;
  ColumnSpec spec;
  std::uint32_t offset = 0;
  std::uint32_t width = 1;
  // RECODE / WORD_EMBED: distinct values, position = recode id.
  ColumnRef recode_values;
  // PASS + dummy: distinct numeric values, position = one-hot column.
  std::vector<double> pass_values;
  EquiWidthBins equi_width;
  EquiHeightBins equi_height;
};

struct MetaFrame {
  std::vector<ColumnMeta> columns;
  std::size_t ncols_out = 0;
  EncodePath path = EncodePath::F_CM;
};

using EncodedMatrix = std::variant<Matrix, SparseMatrix, CompressedMatrix>;

struct EncodeResult {
  EncodedMatrix matrix;
  MetaFrame meta;
};

Matrix materialize(const EncodedMatrix& m);
// Allocated bytes of the output representation.
std::size_t encoded_size(const EncodedMatrix& m);

// F_M yields a dense matrix, or CSR when any column is dummy coded. F_CM and
// CF_CM yield one column group per input column. CF_CM needs a compressed
// frame; the other paths decompress one if given.
EncodeResult transform_encode(const Frame& input, const TransformSpec& spec, EncodePath path);
EncodeResult transform_encode(const CompressedFrame& input, const TransformSpec& spec, EncodePath path);

// Re-applies fitted metadata. Unseen RECODE / dummy PASS values raise
// SpecError listing them; BIN clamps.
EncodeResult transform_apply(const Frame& input, const MetaFrame& meta, EncodePath path);
EncodeResult transform_apply(const CompressedFrame& input, const MetaFrame& meta, EncodePath path);

// Output size per path for one column; d is the input's distinct count.
struct PathSizes {
  double f_m = 0.0;
  double f_cm = 0.0;
  double cf_cm = 0.0;
};
PathSizes output_size_model(const ColumnSpec& spec, std::size_t nrows, std::size_t d);

// Bytes charged for a size the model calls constant (group bookkeeping).
inline constexpr double kConstantSize = 32.0;

std::string meta_to_json(const MetaFrame& meta);

}  // namespace bware
