#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rsr {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string to_string(const Shape& shape);

/// Dense row-major array of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// Value of a one-element tensor.
  double item() const;

  Tensor reshaped(Shape shape) const;

  /// Rows [begin, end) along the leading axis.
  Tensor slice_rows(std::size_t begin, std::size_t end) const;

  bool all_finite() const;

  /// Elementwise value equality (so +0.0 == -0.0) plus equal shapes.
  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Gathers rows of `src` (leading axis) listed in `rows`.
Tensor gather_rows(const Tensor& src, std::span<const std::size_t> rows);

double max_abs_diff(const Tensor& a, const Tensor& b);

/// Two-pass population variance (divides by N); 0 for an empty range.
double population_variance(std::span<const double> v);

}  // namespace rsr
