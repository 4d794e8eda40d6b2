#include "l2sa/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace l2sa {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Value: return "value";
    case ErrorKind::Io: return "io";
    case ErrorKind::Format: return "format";
    case ErrorKind::Config: return "config";
    case ErrorKind::Numeric: return "numeric";
  }
  return "unknown";
}

Shape::Shape(std::initializer_list<std::size_t> dims)
    : Shape(std::span<const std::size_t>(dims.begin(), dims.size())) {}

Shape::Shape(std::span<const std::size_t> dims) {
  if (dims.empty() || dims.size() > kMaxRank) {
    throw ShapeError("Shape", "rank", "expected 1..4 extents, got " + std::to_string(dims.size()));
  }
  rank_ = dims.size();
  std::copy(dims.begin(), dims.end(), dims_.begin());
}

std::size_t Shape::operator[](std::size_t axis) const {
  if (axis >= rank_) {
    throw ShapeError("Shape", "rank", "axis " + std::to_string(axis) + " out of range for " + str());
  }
  return dims_[axis];
}

std::size_t Shape::numel() const noexcept {
  if (rank_ == 0) return 0;
  std::size_t n = 1;
  for (std::size_t i = 0; i < rank_; ++i) n *= dims_[i];
  return n;
}

bool Shape::operator==(const Shape& other) const noexcept {
  return rank_ == other.rank_ && std::equal(dims_.begin(), dims_.begin() + rank_, other.dims_.begin());
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < rank_; ++i) os << (i ? "," : "") << dims_[i];
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape shape, Real fill)
    : shape_(shape), data_(shape.numel(), fill), layout_(shape.rank() == 4 ? Layout::NCHW : Layout::Flat) {}

Tensor::Tensor(Shape shape, std::vector<Real> data)
    : shape_(shape), data_(std::move(data)), layout_(shape.rank() == 4 ? Layout::NCHW : Layout::Flat) {
  if (data_.size() != shape_.numel()) {
    throw ShapeError("Tensor", "size",
                     "shape " + shape_.str() + " needs " + std::to_string(shape_.numel()) + " values, got " +
                         std::to_string(data_.size()));
  }
}

Tensor Tensor::nchw(std::size_t n, std::size_t c, std::size_t h, std::size_t w, Real fill) {
  return Tensor(Shape{n, c, h, w}, fill);
}

Tensor Tensor::scalar(Real value) { return Tensor(Shape{1}, value); }

std::size_t Tensor::dim4(std::size_t axis) const {
  if (shape_.rank() != 4) throw ShapeError("Tensor", "rank", "expected NCHW, got " + shape_.str());
  return shape_[axis];
}

Real& Tensor::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
  return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

Real Tensor::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
  return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape.numel() != data_.size()) {
    throw ShapeError("reshape", "size", shape_.str() + " -> " + shape.str());
  }
  return Tensor(shape, data_);
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](Real v) { return std::isfinite(v); });
}

bool bit_equal(const Tensor& a, const Tensor& b) noexcept {
  return a.shape() == b.shape() &&
         (a.size() == 0 || std::memcmp(a.ptr(), b.ptr(), a.size() * sizeof(Real)) == 0);
}

Real max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape())) throw ShapeError("max_abs_diff", "shape", a.shape().str() + " vs " + b.shape().str());
  Real m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace l2sa
