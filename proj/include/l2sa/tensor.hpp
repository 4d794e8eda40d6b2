#pragma once

#include <array>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "l2sa/error.hpp"

namespace l2sa {

#ifdef L2SA_FLOAT32
using Real = float;
#else
using Real = double;
#endif

// Widest floating type available for accumulation.
using Accum = double;

inline constexpr std::size_t kMaxRank = 4;

enum class Layout { Flat, NCHW };

// Extents of a tensor, rank 1..4.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims);
  explicit Shape(std::span<const std::size_t> dims);

  std::size_t rank() const noexcept { return rank_; }
  std::size_t operator[](std::size_t axis) const;
  std::size_t numel() const noexcept;
  std::span<const std::size_t> dims() const noexcept { return {dims_.data(), rank_}; }

  bool operator==(const Shape& other) const noexcept;
  std::string str() const;

 private:
  std::array<std::size_t, kMaxRank> dims_{};
  std::size_t rank_ = 0;
};

// Dense row-major array of Real. NCHW tensors are rank 4 (batch, channels, height, width).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, Real fill = Real(0));
  Tensor(Shape shape, std::vector<Real> data);

  static Tensor nchw(std::size_t n, std::size_t c, std::size_t h, std::size_t w, Real fill = Real(0));
  static Tensor scalar(Real value);

  const Shape& shape() const noexcept { return shape_; }
  Layout layout() const noexcept { return layout_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<Real> data() noexcept { return data_; }
  std::span<const Real> data() const noexcept { return data_; }
  Real* ptr() noexcept { return data_.data(); }
  const Real* ptr() const noexcept { return data_.data(); }

  Real& operator[](std::size_t i) noexcept { return data_[i]; }
  Real operator[](std::size_t i) const noexcept { return data_[i]; }

  // NCHW accessors; only valid on rank-4 tensors.
  std::size_t batch() const { return dim4(0); }
  std::size_t channels() const { return dim4(1); }
  std::size_t height() const { return dim4(2); }
  std::size_t width() const { return dim4(3); }
  Real& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w);
  Real at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const;

  Tensor reshaped(Shape shape) const;
  bool all_finite() const noexcept;

 private:
  std::size_t dim4(std::size_t axis) const;

  Shape shape_;
  std::vector<Real> data_;
  Layout layout_ = Layout::Flat;
};

bool bit_equal(const Tensor& a, const Tensor& b) noexcept;
Real max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace l2sa
