#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "hacd/error.hpp"

namespace hacd {

struct Triplet {
  std::size_t row;
  std::size_t col;
  double value;
};

/// Compressed sparse row matrix of doubles. Column indices within a row are
/// strictly increasing; explicit zeros are never stored.
class SparseMatrix {
 public:
  SparseMatrix() = default;
  SparseMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), row_ptr_(rows + 1, 0) {}

  // Duplicate coordinates are summed.
  static SparseMatrix from_triplets(std::size_t rows, std::size_t cols, std::vector<Triplet> entries) {
    for (const auto& t : entries) {
      if (t.row >= rows || t.col >= cols) {
        throw ShapeError("sparse triplet (" + std::to_string(t.row) + "," + std::to_string(t.col) +
                         ") outside " + std::to_string(rows) + "x" + std::to_string(cols));
      }
    }
    std::sort(entries.begin(), entries.end(), [](const Triplet& a, const Triplet& b) {
      return std::tie(a.row, a.col) < std::tie(b.row, b.col);
    });
    SparseMatrix m(rows, cols);
    for (std::size_t k = 0; k < entries.size();) {
      std::size_t r = entries[k].row, c = entries[k].col;
      double v = 0.0;
      for (; k < entries.size() && entries[k].row == r && entries[k].col == c; ++k) v += entries[k].value;
      if (v != 0.0) {
        m.col_idx_.push_back(c);
        m.values_.push_back(v);
        ++m.row_ptr_[r + 1];
      }
    }
    for (std::size_t r = 0; r < rows; ++r) m.row_ptr_[r + 1] += m.row_ptr_[r];
    return m;
  }

  static SparseMatrix identity(std::size_t n) {
    std::vector<Triplet> t;
    t.reserve(n);
    for (std::size_t i = 0; i < n; ++i) t.push_back({i, i, 1.0});
    return from_triplets(n, n, std::move(t));
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t nnz() const noexcept { return values_.size(); }

  std::span<const std::size_t> row_ptr() const noexcept { return row_ptr_; }
  std::span<const std::size_t> col_idx() const noexcept { return col_idx_; }
  std::span<const double> values() const noexcept { return values_; }

  std::span<const std::size_t> row_cols(std::size_t r) const {
    return std::span<const std::size_t>(col_idx_).subspan(row_ptr_[r], row_ptr_[r + 1] - row_ptr_[r]);
  }
  std::span<const double> row_values(std::size_t r) const {
    return std::span<const double>(values_).subspan(row_ptr_[r], row_ptr_[r + 1] - row_ptr_[r]);
  }

  double at(std::size_t r, std::size_t c) const {
    auto cols = row_cols(r);
    auto it = std::lower_bound(cols.begin(), cols.end(), c);
    if (it == cols.end() || *it != c) return 0.0;
    return values_[row_ptr_[r] + static_cast<std::size_t>(it - cols.begin())];
  }

  std::vector<Triplet> triplets() const {
    std::vector<Triplet> out;
    out.reserve(nnz());
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) out.push_back({r, col_idx_[k], values_[k]});
    return out;
  }

  SparseMatrix transpose() const {
    std::vector<Triplet> t;
    t.reserve(nnz());
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) t.push_back({col_idx_[k], r, values_[k]});
    return from_triplets(cols_, rows_, std::move(t));
  }

  SparseMatrix scaled(double s) const {
    SparseMatrix m = *this;
    for (auto& v : m.values_) v *= s;
    if (s == 0.0) return SparseMatrix(rows_, cols_);
    return m;
  }

  std::vector<double> row_sums() const {
    std::vector<double> s(rows_, 0.0);
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) s[r] += values_[k];
    return s;
  }

  // Dense row-major copy.
  std::vector<double> to_dense() const {
    std::vector<double> d(rows_ * cols_, 0.0);
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) d[r * cols_ + col_idx_[k]] = values_[k];
    return d;
  }

  friend bool operator==(const SparseMatrix& a, const SparseMatrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.row_ptr_ == b.row_ptr_ && a.col_idx_ == b.col_idx_ &&
           a.values_ == b.values_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::size_t> row_ptr_{0};
  std::vector<std::size_t> col_idx_;
  std::vector<double> values_;
};

inline SparseMatrix operator+(const SparseMatrix& a, const SparseMatrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("sparse add: shape mismatch");
  auto t = a.triplets();
  auto tb = b.triplets();
  t.insert(t.end(), tb.begin(), tb.end());
  return SparseMatrix::from_triplets(a.rows(), a.cols(), std::move(t));
}

// Row-by-row sparse product using a dense accumulator per row.
inline SparseMatrix multiply(const SparseMatrix& a, const SparseMatrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("sparse multiply: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " * " +
                     std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  std::vector<Triplet> out;
  std::vector<double> acc(b.cols(), 0.0);
  std::vector<char> touched(b.cols(), 0);
  std::vector<std::size_t> cols;
  for (std::size_t r = 0; r < a.rows(); ++r) {
    cols.clear();
    auto ac = a.row_cols(r);
    auto av = a.row_values(r);
    for (std::size_t k = 0; k < ac.size(); ++k) {
      auto bc = b.row_cols(ac[k]);
      auto bv = b.row_values(ac[k]);
      for (std::size_t q = 0; q < bc.size(); ++q) {
        if (!touched[bc[q]]) {
          touched[bc[q]] = 1;
          cols.push_back(bc[q]);
        }
        acc[bc[q]] += av[k] * bv[q];
      }
    }
    std::sort(cols.begin(), cols.end());
    for (auto c : cols) {
      out.push_back({r, c, acc[c]});
      acc[c] = 0.0;
      touched[c] = 0;
    }
  }
  return SparseMatrix::from_triplets(a.rows(), b.cols(), std::move(out));
}

}  // namespace hacd
