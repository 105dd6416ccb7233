#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace theragan::diffnet {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

// N-dimensional array of doubles, row-major. The leading axis is the batch
// axis whenever a tensor flows through a network.
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0) : shape(std::move(s)), data(shape_size(shape), fill) {}
  Tensor(Shape s, std::vector<double> values);

  std::size_t size() const noexcept { return data.size(); }
  std::size_t rank() const noexcept { return shape.size(); }
  std::size_t dim(std::size_t axis) const { return shape.at(axis); }
  bool empty() const noexcept { return data.empty(); }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

}  // namespace theragan::diffnet
