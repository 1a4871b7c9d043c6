#include "rsr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>

namespace rsr {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
  for (auto d : shape_)
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + to_string(shape_));
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto d : shape_)
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + to_string(shape_));
  if (shape_size(shape_) != data_.size())
    throw ShapeError("shape " + to_string(shape_) + " needs " +
                     std::to_string(shape_size(shape_)) + " elements, got " +
                     std::to_string(data_.size()));
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{1}, std::vector<double>{value}); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size())
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + to_string(shape_));
  return shape_[axis];
}

double Tensor::item() const {
  if (data_.size() != 1)
    throw ShapeError("item() needs a one-element tensor, got shape " + to_string(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size())
    throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::slice_rows(std::size_t begin, std::size_t end) const {
  if (shape_.empty() || begin >= end || end > shape_[0])
    throw ShapeError("bad row slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") of shape " + to_string(shape_));
  const std::size_t row = data_.size() / shape_[0];
  Shape s = shape_;
  s[0] = end - begin;
  return Tensor(std::move(s), std::vector<double>(data_.begin() + begin * row,
                                                  data_.begin() + end * row));
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor gather_rows(const Tensor& src, std::span<const std::size_t> rows) {
  if (src.rank() == 0 || rows.empty()) throw ShapeError("gather_rows on empty selection");
  const std::size_t row = src.size() / src.dim(0);
  Shape s = src.shape();
  s[0] = rows.size();
  std::vector<double> out(rows.size() * row);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= src.dim(0)) throw ShapeError("gather_rows index out of range");
    std::memcpy(out.data() + i * row, src.data().data() + rows[i] * row, row * sizeof(double));
  }
  return Tensor(std::move(s), std::move(out));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("max_abs_diff shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double population_variance(std::span<const double> v) {
  if (v.empty()) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return ss / static_cast<double>(v.size());
}

}  // namespace rsr
