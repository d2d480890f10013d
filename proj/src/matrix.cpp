#include "bware/matrix.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <string>

namespace bware {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
  if (values_.size() != rows * cols)
    throw ShapeError("matrix " + std::to_string(rows) + "x" + std::to_string(cols) + " given " +
                     std::to_string(values_.size()) + " values");
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::column(std::vector<double> values) {
  std::size_t n = values.size();
  return Matrix(n, 1, std::move(values));
}

std::size_t Matrix::nnz() const {
  return static_cast<std::size_t>(std::count_if(values_.begin(), values_.end(), [](double v) { return v != 0.0; }));
}

Matrix Matrix::transpose() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

Matrix Matrix::slice_rows(std::size_t lo, std::size_t hi) const {
  if (lo > hi || hi > rows_) throw BoundsError("row slice out of range");
  return Matrix(hi - lo, cols_,
                std::vector<double>(values_.begin() + static_cast<std::ptrdiff_t>(lo * cols_),
                                    values_.begin() + static_cast<std::ptrdiff_t>(hi * cols_)));
}

Matrix Matrix::select_columns(std::span<const std::uint32_t> cols) const {
  Matrix out(rows_, cols.size());
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t j = 0; j < cols.size(); ++j) out(r, j) = (*this)(r, cols[j]);
  return out;
}

bool operator==(const Matrix& a, const Matrix& b) {
  return a.rows_ == b.rows_ && a.cols_ == b.cols_ &&
         (a.values_.empty() ||
          std::memcmp(a.values_.data(), b.values_.data(), a.values_.size() * sizeof(double)) == 0);
}

Matrix multiply(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows())
    throw ShapeError("multiply: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     " by " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* o = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      double v = a(i, k);
      if (v == 0.0) continue;
      const double* br = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) o[j] += v * br[j];
    }
  }
  return out;
}

Matrix cbind(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw ShapeError("cbind: row counts differ");
  Matrix out(a.rows(), a.cols() + b.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    std::copy(a.row(r), a.row(r) + a.cols(), out.row(r));
    std::copy(b.row(r), b.row(r) + b.cols(), out.row(r) + a.cols());
  }
  return out;
}

double max_relative_error(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("compare: shapes differ");
  double worst = 0.0;
  auto va = a.values();
  auto vb = b.values();
  for (std::size_t i = 0; i < va.size(); ++i)
    worst = std::max(worst, std::abs(va[i] - vb[i]) / std::max(1.0, std::abs(vb[i])));
  return worst;
}

SparseMatrix::SparseMatrix(std::size_t rows, std::size_t cols, std::vector<std::uint32_t> row_ptr,
                           std::vector<std::uint32_t> col_idx, std::vector<double> values)
    : rows_(rows),
      cols_(cols),
      row_ptr_(std::move(row_ptr)),
      col_idx_(std::move(col_idx)),
      values_(std::move(values)) {
  if (row_ptr_.size() != rows_ + 1 || col_idx_.size() != values_.size() ||
      row_ptr_.back() != values_.size())
    throw ShapeError("inconsistent CSR arrays");
}

SparseMatrix SparseMatrix::from_dense(const Matrix& m) {
  std::vector<std::uint32_t> ptr{0};
  std::vector<std::uint32_t> idx;
  std::vector<double> vals;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      // Only +0.0 is implicit so -0.0 survives the round trip.
      if (std::bit_cast<std::uint64_t>(m(r, c)) != 0) {
        idx.push_back(static_cast<std::uint32_t>(c));
        vals.push_back(m(r, c));
      }
    }
    ptr.push_back(static_cast<std::uint32_t>(vals.size()));
  }
  return SparseMatrix(m.rows(), m.cols(), std::move(ptr), std::move(idx), std::move(vals));
}

Matrix SparseMatrix::to_dense() const {
  Matrix out(rows_, cols_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::uint32_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) out(r, col_idx_[k]) = values_[k];
  return out;
}

std::size_t SparseMatrix::memory_bytes() const {
  return values_.size() * (sizeof(double) + sizeof(std::uint32_t)) +
         row_ptr_.size() * sizeof(std::uint32_t);
}

}  // namespace bware
