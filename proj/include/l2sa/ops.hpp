#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "l2sa/tensor.hpp"

// Numeric kernels. Every function is pure: inputs are never modified and the
// result depends only on the arguments. Backward kernels return the gradient
// with respect to each differentiable input given the upstream gradient.
namespace l2sa::ops {

enum class Padding { Same, Valid };

struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  Padding padding = Padding::Same;

  void validate() const;
  // Output extent along one spatial axis of size `in`.
  std::size_t output_extent(std::size_t in) const;
  // Zero rows/columns added before the first input cell. With `same` padding
  // an odd total is split with the extra cell after the last input cell.
  std::size_t pad_before(std::size_t in) const;
  std::size_t parameter_count() const { return in_channels * out_channels * kernel * kernel + out_channels; }
};

struct Pool2d {
  std::size_t window_h = 2;
  std::size_t window_w = 2;
  std::size_t stride_h = 2;
  std::size_t stride_w = 2;

  static Pool2d square(std::size_t k) { return {k, k, k, k}; }
  // Floor semantics: trailing partial windows are dropped.
  std::size_t out_h(std::size_t h) const { return (h - window_h) / stride_h + 1; }
  std::size_t out_w(std::size_t w) const { return (w - window_w) / stride_w + 1; }
};

enum class Reduce { Max, Min, Mean };

inline constexpr Real kL2Epsilon = Real(1e-12);

struct ConvGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;
};

struct DenseGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;
};

struct SoftmaxXent {
  Real loss = 0;
  Tensor probabilities;
};

Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias, const ConvSpec& spec);
ConvGrads conv2d_backward(const Tensor& input, const Tensor& weights, const ConvSpec& spec, const Tensor& grad_out);

Tensor maxpool2d(const Tensor& input, const Pool2d& pool);
Tensor maxpool2d_backward(const Tensor& input, const Pool2d& pool, const Tensor& grad_out);
// True when some window holds two equal maxima (a non-differentiable point).
bool maxpool2d_has_tie(const Tensor& input, const Pool2d& pool);

Tensor avgpool2d(const Tensor& input, const Pool2d& pool);
Tensor avgpool2d_backward(const Shape& input_shape, const Pool2d& pool, const Tensor& grad_out);

Tensor channel_reduce(const Tensor& input, Reduce mode);
Tensor channel_reduce_backward(const Tensor& input, Reduce mode, const Tensor& grad_out);

Tensor l2_normalize_per_sample(const Tensor& input, Real epsilon = kL2Epsilon);
Tensor l2_normalize_per_sample_backward(const Tensor& input, Real epsilon, const Tensor& grad_out);

Tensor sigmoid(const Tensor& input);
Tensor sigmoid_backward(const Tensor& output, const Tensor& grad_out);
Tensor relu(const Tensor& input);
Tensor relu_backward(const Tensor& input, const Tensor& grad_out);

Tensor dense(const Tensor& input, const Tensor& weights, const Tensor& bias);
DenseGrads dense_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_out);

Tensor flatten(const Tensor& input);

SoftmaxXent softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);
// Gradient of the mean loss with respect to the logits, scaled by `grad_loss`.
Tensor softmax_cross_entropy_backward(const Tensor& probabilities, std::span<const int> labels, Real grad_loss);

// Multiplies every channel of `features` (B,C,H,W) by `gate` (B,1,H,W).
Tensor gate(const Tensor& gate, const Tensor& features);
struct GateGrads {
  Tensor gate;
  Tensor features;
};
GateGrads gate_backward(const Tensor& gate, const Tensor& features, const Tensor& grad_out);

// Stacks two NCHW tensors along the channel axis.
Tensor concat_channels(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Real factor);
Real sum(const Tensor& a);

void require_finite(const Tensor& t, const char* op);

}  // namespace l2sa::ops
