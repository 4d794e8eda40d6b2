#pragma once

#include <string>

#include "l2sa/autodiff.hpp"
#include "l2sa/model.hpp"

namespace l2sa {

struct BenchConfig {
  std::size_t iterations = 30;  // timed single-image passes, >= 30
  std::size_t warmup = 3;
  std::size_t batch = 64;
  std::size_t batch_iterations = 3;
  std::uint64_t seed = 1;
};

struct LatencyReport {
  std::string model_name;
  std::size_t parameter_count = 0;
  std::size_t iterations = 0;
  double median_ms = 0, p95_ms = 0, mean_ms = 0;
  std::size_t batch = 0;
  double batch_median_ms = 0;
  double single_images_per_s = 0, batch_images_per_s = 0;
  std::string hardware;

  std::string text() const;
};

// Nearest-rank percentile of unsorted samples, q in (0, 100].
double percentile(std::vector<double> samples, double q);
std::string hardware_description();

LatencyReport benchmark_inference(const model::LayerGraph& graph, const ParameterSet& params,
                                  const BenchConfig& cfg = {});

}  // namespace l2sa
