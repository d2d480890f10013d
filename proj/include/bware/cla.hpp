#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "bware/colgroup.hpp"
#include "bware/matrix.hpp"

namespace bware {

// Expected operations over one intermediate, weighted by loop trip counts.
struct WorkloadVector {
  double decompress = 0.0;
  double lmm = 0.0;
  double rmm = 0.0;
  double scalar = 0.0;
  double scan = 0.0;

  double total() const { return decompress + lmm + rmm + scalar + scan; }
  WorkloadVector& operator+=(const WorkloadVector& o) {
    decompress += o.decompress;
    lmm += o.lmm;
    rmm += o.rmm;
    scalar += o.scalar;
    scan += o.scan;
    return *this;
  }
  WorkloadVector scaled(double k) const { return {decompress * k, lmm * k, rmm * k, scalar * k, scan * k}; }
  friend bool operator==(const WorkloadVector&, const WorkloadVector&) = default;
};

Matrix decompress(const CompressedMatrix& cm);

// Single-group compressed matrix from a dense one (all UNCOMPRESSED).
CompressedMatrix wrap_uncompressed(const Matrix& m);

using CellOp = std::function<double(double)>;

// Applies op to dictionaries, default tuples and constants only; maps are
// shared with the input.
CompressedMatrix scalar_op(const CompressedMatrix& cm, const CellOp& op);

// Column concatenation. DDC (and SDC) groups across inputs that reference the
// same map object are co-coded into one group with concatenated dictionaries.
CompressedMatrix cbind(const std::vector<CompressedMatrix>& parts);
CompressedMatrix cbind(const CompressedMatrix& a, const CompressedMatrix& b);

// Pre-aggregation accounting for left_mm.
struct LmmStats {
  std::size_t max_buffer_cells = 0;
  std::size_t total_buffer_cells = 0;
};

// dense (k x n) times cm (n x m). Per group the dense rows are first summed
// by map id into a k x d buffer, then multiplied by the dictionary.
Matrix left_mm(const Matrix& dense, const CompressedMatrix& cm, LmmStats* stats = nullptr);

// cm (n x m) times dense (m x k): the dictionary is multiplied once (d x k)
// and rows gather their pre-multiplied tuple.
Matrix right_mm(const CompressedMatrix& cm, const Matrix& dense);

// 0/1 matrix with exactly one 1 per row, stored as the source row index.
struct SelectionMatrix {
  std::size_t nrows_in = 0;
  std::vector<std::uint32_t> rows;

  SelectionMatrix() = default;
  SelectionMatrix(std::size_t nrows_in, std::vector<std::uint32_t> rows);
  std::size_t nrows_out() const { return rows.size(); }
  Matrix to_dense() const;
};

// Rows of the result are the selected rows of cm; maps are gathered and
// dictionaries shared.
CompressedMatrix selection_mm(const SelectionMatrix& s, const CompressedMatrix& cm);
// Decompresses the selected tuples straight into a dense output.
Matrix selection_mm_dense(const SelectionMatrix& s, const CompressedMatrix& cm);

CompressedMatrix slice_rows(const CompressedMatrix& cm, std::size_t lo, std::size_t hi);

}  // namespace bware
