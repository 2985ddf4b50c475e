#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace mexma::tensor {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

// Resolves a possibly negative axis against `rank`; throws ShapeError when out of range.
std::size_t normalize_axis(const char* primitive, int axis, std::size_t rank);

// Splits `shape` around `axis` into (outer, extent, inner) element counts.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};
AxisSplit split_at(const Shape& shape, std::size_t axis);

class ShapeError : public std::invalid_argument {
 public:
  ShapeError(std::string primitive, const std::string& expected, const Shape& actual);
  ShapeError(std::string primitive, const std::string& message);

  const std::string& primitive() const noexcept { return primitive_; }

 private:
  std::string primitive_;
};

}  // namespace mexma::tensor
