#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace theragan {

// Dense row-major matrix of doubles. Signals are channels x frames.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  const std::vector<double>& data() const noexcept { return data_; }
  std::vector<double>& data() noexcept { return data_; }

  std::vector<double> column(std::size_t c) const;
  void set_column(std::size_t c, std::span<const double> values);

  // Columns [begin, begin + count).
  Matrix columns(std::size_t begin, std::size_t count) const;
  // Rows [begin, begin + count).
  Matrix rows_slice(std::size_t begin, std::size_t count) const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// A 6 x T signal from one IMU: gx, gy, gz (rad/s), ax, ay, az (m/s^2).
using SensorSignal = Matrix;

inline constexpr std::size_t kImuChannels = 6;
inline constexpr double kSampleRateHz = 100.0;

// Concatenate along the frame axis; all inputs must share the row count.
Matrix hconcat(std::span<const Matrix> parts);
// Stack along the channel axis; all inputs must share the column count.
Matrix vstack(std::span<const Matrix> parts);

}  // namespace theragan
