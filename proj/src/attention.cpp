#include "l2sa/attention.hpp"

namespace l2sa::attention {
namespace {

// Eager with no named parameters; the blocks receive their weights directly.
const ParameterSet& no_params() {
  static const ParameterSet empty;
  return empty;
}

}  // namespace

const char* to_string(Kind kind) {
  switch (kind) {
    case Kind::None: return "none";
    case Kind::L2Sab: return "l2sab";
    case Kind::CbamSpatial: return "cbam_spatial";
  }
  return "none";
}

Kind parse_kind(const std::string& name) {
  if (name == "none") return Kind::None;
  if (name == "l2sab") return Kind::L2Sab;
  if (name == "cbam_spatial") return Kind::CbamSpatial;
  throw Error(ErrorKind::Config, "unknown attention kind '" + name + "' (expected l2sab, cbam_spatial or none)");
}

Shape weight_shape(Kind kind, std::size_t kernel) {
  return Shape{1, kind == Kind::CbamSpatial ? std::size_t(2) : std::size_t(1), kernel, kernel};
}

Tensor l2_sab_attention(const Tensor& features, const Tensor& weights, const Tensor& bias, const L2SabConfig& cfg) {
  return l2_sab_attention(Eager(no_params()), features, weights, bias, cfg);
}

Tensor l2_sab_forward(const Tensor& features, const Tensor& weights, const Tensor& bias, const L2SabConfig& cfg) {
  return l2_sab_forward(Eager(no_params()), features, weights, bias, cfg);
}

Tensor cbam_spatial_attention(const Tensor& features, const Tensor& weights, const Tensor& bias, std::size_t kernel) {
  return cbam_spatial_attention(Eager(no_params()), features, weights, bias, kernel);
}

Tensor cbam_spatial_forward(const Tensor& features, const Tensor& weights, const Tensor& bias, std::size_t kernel) {
  return cbam_spatial_forward(Eager(no_params()), features, weights, bias, kernel);
}

}  // namespace l2sa::attention
