#include "mexma/tensor/shape.hpp"

#include <utility>

namespace mexma::tensor {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto extent : shape) n *= extent;
  return n;
}

std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

std::size_t normalize_axis(const char* primitive, int axis, std::size_t rank) {
  const auto r = static_cast<int>(rank);
  const int resolved = axis < 0 ? axis + r : axis;
  if (resolved < 0 || resolved >= r)
    throw ShapeError(primitive, "axis " + std::to_string(axis) + " out of range for rank " +
                                    std::to_string(rank));
  return static_cast<std::size_t>(resolved);
}

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

ShapeError::ShapeError(std::string primitive, const std::string& expected, const Shape& actual)
    : std::invalid_argument(primitive + ": shape mismatch, expected " + expected + ", got " +
                            to_string(actual)),
      primitive_(std::move(primitive)) {}

ShapeError::ShapeError(std::string primitive, const std::string& message)
    : std::invalid_argument(primitive + ": " + message), primitive_(std::move(primitive)) {}

}  // namespace mexma::tensor
