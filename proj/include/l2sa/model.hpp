#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "l2sa/attention.hpp"
#include "l2sa/autodiff.hpp"
#include "l2sa/ops.hpp"

namespace l2sa::model {

enum class LayerKind { Conv, Relu, MaxPool, Attention, Flatten, Dense };

struct Layer {
  LayerKind kind = LayerKind::Relu;
  std::string name;                  // parameter prefix, e.g. "conv1"
  ops::ConvSpec conv;                // Conv
  ops::Pool2d pool;                  // MaxPool
  attention::Kind attention = attention::Kind::None;
  std::size_t attention_kernel = 0;  // Attention
  std::size_t site = 0;              // Attention: index among attention layers
  std::size_t dense_in = 0, dense_out = 0;

  std::size_t parameter_count() const;
};

// Multiplicative skip: the attention map of site `source`, average-pooled to
// the destination's spatial size, multiplies the destination's map before it
// gates the features.
struct Skip {
  std::string label;
  std::size_t source_site = 0;
  std::size_t dest_site = 0;
};

struct InputSpec {
  std::size_t channels = 3, height = 256, width = 256;
};

struct LayerGraph {
  std::string model_name;
  InputSpec input;
  std::size_t class_count = 3;
  std::vector<Layer> layers;
  std::vector<Skip> skips;

  std::size_t attention_sites() const;
  // Line-oriented text form stored in checkpoints.
  std::string describe() const;
  static LayerGraph parse(const std::string& text);

  bool operator==(const LayerGraph& other) const { return describe() == other.describe(); }
};

// Backbone geometry shared by the baseline family.
struct BackboneConfig {
  std::vector<std::size_t> channels{64, 128, 256};
  std::vector<std::size_t> kernels{25, 13, 9};
  std::vector<std::size_t> pools{4, 2, 2};
  std::size_t head_width = 256;
};

struct VggConfig {
  std::vector<std::size_t> channels{8, 16, 32};
  std::size_t kernel = 3;
  std::size_t convs_per_block = 2;
  std::size_t head_width = 256;
};

inline const std::vector<std::size_t> kDefaultSabKernels{16, 8, 4};
inline constexpr std::size_t kDefaultCbamKernel = 7;

LayerGraph build_baseline(InputSpec input = {}, std::size_t classes = 3, const BackboneConfig& backbone = {});
LayerGraph build_l2sa(InputSpec input = {}, std::size_t classes = 3,
                      const std::vector<std::size_t>& sab_kernels = kDefaultSabKernels, bool skips_enabled = true,
                      const BackboneConfig& backbone = {});
LayerGraph build_baseline_cbam(InputSpec input = {}, std::size_t classes = 3, std::size_t kernel = kDefaultCbamKernel,
                               const BackboneConfig& backbone = {});
LayerGraph build_vgg16_star(InputSpec input = {}, std::size_t classes = 3, const VggConfig& vgg = {});

// Builds by CLI model name: baseline, l2sa, l2sa_noskip, baseline_cbam, vgg16_star.
LayerGraph build_named(const std::string& name, InputSpec input, std::size_t classes,
                       const std::vector<std::size_t>& sab_kernels, const BackboneConfig& backbone);

std::size_t count_parameters(const LayerGraph& graph);

// Output shape of every layer for the given batch size. Throws ShapeError on
// any inconsistency, including skip wiring that cannot be downsampled exactly.
std::vector<Shape> infer_shapes(const LayerGraph& graph, std::size_t batch = 1);

// Glorot-uniform weights from a seeded generator; all biases zero.
ParameterSet init_parameters(const LayerGraph& graph, std::uint64_t seed);

// Parameter names and shapes the graph expects, in registration order.
std::vector<std::pair<std::string, Shape>> parameter_slots(const LayerGraph& graph);

// Largest per-chunk activation (elements) that predict() materializes at once.
inline constexpr std::size_t kActivationBudget = std::size_t(1) << 17;

// Logits for an NCHW batch. Results do not depend on the chunking.
Tensor predict(const LayerGraph& graph, const ParameterSet& params, const Tensor& batch);
Var forward(const LayerGraph& graph, Tape& tape, const ParameterSet& params, Var batch);

}  // namespace l2sa::model
