#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "mfco/errors.hpp"

namespace mfco {

/* Dimensions of an operator argument: one extent for vectors, two for
 * matrices. Matrix payloads are always stored column-major. */
class Shape {
public:
  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims) : dims_(dims) { check(); }
  explicit Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) { check(); }

  static Shape vector(std::size_t n) { return Shape{n}; }
  static Shape matrix(std::size_t rows, std::size_t cols) { return Shape{rows, cols}; }

  const std::vector<std::size_t>& dims() const { return dims_; }
  std::size_t ndim() const { return dims_.size(); }
  bool is_vector() const { return dims_.size() == 1; }
  bool is_matrix() const { return dims_.size() == 2; }
  bool is_scalar() const { return total() == 1; }
  std::size_t rows() const { return dims_.at(0); }
  std::size_t cols() const { return dims_.at(1); }

  std::size_t total() const {
    std::size_t t = 1;
    for (std::size_t d : dims_) t *= d;
    return t;
  }

  bool operator==(const Shape& other) const { return dims_ == other.dims_; }
  bool operator!=(const Shape& other) const { return !(*this == other); }

  std::string str() const {
    std::string s = "(";
    for (std::size_t i = 0; i < dims_.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(dims_[i]);
    }
    return s + ")";
  }

private:
  void check() const {
    if (dims_.empty() || dims_.size() > 2)
      throw DimensionError("shape must have one or two extents, got " +
                           std::to_string(dims_.size()));
    for (std::size_t d : dims_)
      if (d < 1) throw DimensionError("shape extents must be positive");
  }

  std::vector<std::size_t> dims_;
};

inline std::size_t total_size(const std::vector<Shape>& shapes) {
  std::size_t t = 0;
  for (const Shape& s : shapes) t += s.total();
  return t;
}

}  // namespace mfco
