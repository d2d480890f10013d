#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "bware/common.hpp"

namespace bware {

// Dense row-major FP64 matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), values_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  static Matrix identity(std::size_t n);
  static Matrix column(std::vector<double> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return values_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }
  double* row(std::size_t r) { return values_.data() + r * cols_; }
  const double* row(std::size_t r) const { return values_.data() + r * cols_; }

  std::span<const double> values() const { return values_; }
  std::vector<double>& data() { return values_; }

  std::size_t memory_bytes() const { return values_.size() * sizeof(double); }
  std::size_t nnz() const;

  Matrix transpose() const;
  Matrix slice_rows(std::size_t lo, std::size_t hi) const;
  Matrix select_columns(std::span<const std::uint32_t> cols) const;

  // Bitwise comparison (distinguishes -0.0 and NaN payloads).
  friend bool operator==(const Matrix& a, const Matrix& b);

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

Matrix multiply(const Matrix& a, const Matrix& b);
Matrix cbind(const Matrix& a, const Matrix& b);

// Largest |a-b| / max(1, |b|) over all cells; throws ShapeError on mismatch.
double max_relative_error(const Matrix& a, const Matrix& b);

// Compressed sparse rows with 32-bit row pointers and column indexes.
class SparseMatrix {
 public:
  SparseMatrix() = default;
  SparseMatrix(std::size_t rows, std::size_t cols, std::vector<std::uint32_t> row_ptr,
               std::vector<std::uint32_t> col_idx, std::vector<double> values);

  static SparseMatrix from_dense(const Matrix& m);
  Matrix to_dense() const;

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t nnz() const { return values_.size(); }
  const std::vector<std::uint32_t>& row_ptr() const { return row_ptr_; }
  const std::vector<std::uint32_t>& col_idx() const { return col_idx_; }
  const std::vector<double>& values() const { return values_; }

  // 8 B value + 4 B column index per non-zero, plus 4 B per row pointer.
  std::size_t memory_bytes() const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::uint32_t> row_ptr_{0};
  std::vector<std::uint32_t> col_idx_;
  std::vector<double> values_;
};

}  // namespace bware
