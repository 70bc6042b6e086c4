#pragma once

#include <cstddef>
#include <cstring>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "malkit/error.hpp"

namespace malkit::ad {

using Shape = std::vector<std::size_t>;
using NodeId = std::size_t;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

class Tape;

/// Immutable dense float64 tensor, row-major. Copies share the value buffer.
///
/// A tensor that lives on a Tape carries the id of the node that produced it
/// and reports requires_grad() == true; everything else is a constant.
class Tensor {
 public:
  Tensor() : Tensor(Shape{0}, std::vector<double>{}) {}

  Tensor(Shape shape, std::vector<double> values)
      : shape_(std::move(shape)),
        values_(std::make_shared<const std::vector<double>>(std::move(values))) {
    for (auto d : shape_) {
      require(d > 0 || shape_ == Shape{0}, ErrorKind::shape,
              "tensor: zero-sized dimension in " + shape_str(shape_));
    }
    require(values_->size() == shape_size(shape_) || shape_ == Shape{0},
            ErrorKind::shape,
            "tensor: " + std::to_string(values_->size()) +
                " values do not fill shape " + shape_str(shape_));
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor vector(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor({n}, std::move(v));
  }
  static Tensor zeros(Shape shape) {
    const std::size_t n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0));
  }
  static Tensor filled(Shape shape, double v) {
    const std::size_t n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, v));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return values_->size(); }
  std::span<const double> values() const { return *values_; }
  const std::vector<double>& vec() const { return *values_; }
  double operator[](std::size_t i) const { return (*values_)[i]; }

  double item() const {
    require(size() == 1, ErrorKind::shape,
            "tensor: item() on non-scalar " + shape_str(shape_));
    return (*values_)[0];
  }

  bool requires_grad() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  NodeId node() const { return node_; }

  /// Same values, detached from any tape.
  Tensor detach() const {
    Tensor t = *this;
    t.tape_ = nullptr;
    t.node_ = 0;
    return t;
  }

  /// Bitwise equality of shape and values.
  bool same_values(const Tensor& other) const {
    if (shape_ != other.shape_ || size() != other.size()) return false;
    return values_ == other.values_ ||
           std::memcmp(values_->data(), other.values_->data(),
                       size() * sizeof(double)) == 0;
  }

 private:
  friend class Tape;

  Shape shape_;
  std::shared_ptr<const std::vector<double>> values_;
  Tape* tape_ = nullptr;
  NodeId node_ = 0;
};

}  // namespace malkit::ad
