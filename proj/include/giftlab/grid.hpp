#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace giftlab {

// Row-major matrix of doubles. Rows are the unit of access everywhere
// (one row per sequence position, one column per token id).
struct Grid {
  Grid() = default;
  Grid(int rows, int cols) : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows) * cols, 0.0) {}

  int rows() const { return rows_; }
  int cols() const { return cols_; }

  double* row(int r) { return data_.data() + static_cast<std::size_t>(r) * cols_; }
  const double* row(int r) const { return data_.data() + static_cast<std::size_t>(r) * cols_; }

  std::span<double> row_span(int r) { return {row(r), static_cast<std::size_t>(cols_)}; }
  std::span<const double> row_span(int r) const { return {row(r), static_cast<std::size_t>(cols_)}; }

  double& at(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  double at(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  void zero() { std::fill(data_.begin(), data_.end(), 0.0); }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> data_;
};

}  // namespace giftlab
