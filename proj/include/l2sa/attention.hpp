#pragma once

#include <cstddef>
#include <string>

#include "l2sa/autodiff.hpp"
#include "l2sa/ops.hpp"

// Spatial attention blocks. Each block computes a (B,1,H,W) map in (0,1) and
// multiplies it into every channel of the incoming feature map. The functions
// are written against a backend (Eager or Recorder) so the same code serves
// inference and training.
namespace l2sa::attention {

enum class Kind { None, L2Sab, CbamSpatial };

const char* to_string(Kind kind);
Kind parse_kind(const std::string& name);

struct L2SabConfig {
  std::size_t kernel = 7;
  Real epsilon = ops::kL2Epsilon;
};

// Single-output `same` convolution used by both blocks to turn the pooled
// descriptor into the pre-sigmoid map.
inline ops::ConvSpec map_conv(std::size_t in_channels, std::size_t kernel) {
  return ops::ConvSpec{in_channels, 1, kernel, 1, ops::Padding::Same};
}

// sigmoid(conv(l2(max_c F) - l2(min_c F)))
template <typename Backend, typename V, typename W>
auto l2_sab_attention(const Backend& be, const V& features, const W& weights, const W& bias, const L2SabConfig& cfg) {
  auto max_map = be.l2_normalize(be.channel_reduce(features, ops::Reduce::Max), cfg.epsilon);
  auto min_map = be.l2_normalize(be.channel_reduce(features, ops::Reduce::Min), cfg.epsilon);
  auto diff = be.sub(max_map, min_map);
  return be.sigmoid(be.conv2d(diff, weights, bias, map_conv(1, cfg.kernel)));
}

template <typename Backend, typename V, typename W>
auto l2_sab_forward(const Backend& be, const V& features, const W& weights, const W& bias, const L2SabConfig& cfg) {
  return be.gate(l2_sab_attention(be, features, weights, bias, cfg), features);
}

// Original CBAM spatial branch: sigmoid(conv([max_c F ; mean_c F])).
template <typename Backend, typename V, typename W>
auto cbam_spatial_attention(const Backend& be, const V& features, const W& weights, const W& bias, std::size_t kernel) {
  auto stacked = be.concat_channels(be.channel_reduce(features, ops::Reduce::Max),
                                    be.channel_reduce(features, ops::Reduce::Mean));
  return be.sigmoid(be.conv2d(stacked, weights, bias, map_conv(2, kernel)));
}

template <typename Backend, typename V, typename W>
auto cbam_spatial_forward(const Backend& be, const V& features, const W& weights, const W& bias, std::size_t kernel) {
  return be.gate(cbam_spatial_attention(be, features, weights, bias, kernel), features);
}

// Weight shape of the map convolution for a block kind.
Shape weight_shape(Kind kind, std::size_t kernel);

// Eager conveniences for callers holding plain tensors.
Tensor l2_sab_attention(const Tensor& features, const Tensor& weights, const Tensor& bias, const L2SabConfig& cfg = {});
Tensor l2_sab_forward(const Tensor& features, const Tensor& weights, const Tensor& bias, const L2SabConfig& cfg = {});
Tensor cbam_spatial_attention(const Tensor& features, const Tensor& weights, const Tensor& bias, std::size_t kernel);
Tensor cbam_spatial_forward(const Tensor& features, const Tensor& weights, const Tensor& bias, std::size_t kernel);

}  // namespace l2sa::attention
