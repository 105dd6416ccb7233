#include "theragan/matrix.hpp"

#include <algorithm>

#include "theragan/error.hpp"

namespace theragan {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw Error(ErrorKind::ShapeMismatch, "matrix data length does not match rows x cols");
  }
}

std::vector<double> Matrix::column(std::size_t c) const {
  std::vector<double> out(rows_);
  for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
  return out;
}

void Matrix::set_column(std::size_t c, std::span<const double> values) {
  for (std::size_t r = 0; r < rows_; ++r) (*this)(r, c) = values[r];
}

Matrix Matrix::columns(std::size_t begin, std::size_t count) const {
  if (begin + count > cols_) throw Error(ErrorKind::InvalidArgument, "column range out of bounds");
  Matrix out(rows_, count);
  for (std::size_t r = 0; r < rows_; ++r) {
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(r * cols_ + begin), count,
                out.data_.begin() + static_cast<std::ptrdiff_t>(r * count));
  }
  return out;
}

Matrix Matrix::rows_slice(std::size_t begin, std::size_t count) const {
  if (begin + count > rows_) throw Error(ErrorKind::InvalidArgument, "row range out of bounds");
  Matrix out(count, cols_);
  std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(begin * cols_), count * cols_,
              out.data_.begin());
  return out;
}

Matrix hconcat(std::span<const Matrix> parts) {
  if (parts.empty()) return {};
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw Error(ErrorKind::ShapeMismatch, "hconcat row count mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy(p.row(r).begin(), p.row(r).end(), out.row(r).begin() + static_cast<std::ptrdiff_t>(offset));
    }
    offset += p.cols();
  }
  return out;
}

Matrix vstack(std::span<const Matrix> parts) {
  if (parts.empty()) return {};
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw Error(ErrorKind::ShapeMismatch, "vstack column count mismatch");
    rows += p.rows();
  }
  std::vector<double> data;
  data.reserve(rows * cols);
  for (const auto& p : parts) data.insert(data.end(), p.data().begin(), p.data().end());
  return Matrix(rows, cols, std::move(data));
}

}  // namespace theragan
