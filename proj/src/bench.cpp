#include "l2sa/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

#include "l2sa/random.hpp"

namespace l2sa {

double percentile(std::vector<double> samples, double q) {
  if (samples.empty()) throw Error(ErrorKind::Value, "percentile of empty sample");
  std::sort(samples.begin(), samples.end());
  const auto rank = std::size_t(std::ceil(q / 100.0 * double(samples.size())));
  return samples[std::clamp<std::size_t>(rank, 1, samples.size()) - 1];
}

std::string hardware_description() {
  std::string cpu = "unknown cpu";
  std::ifstream is("/proc/cpuinfo");
  std::string line;
  while (std::getline(is, line)) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) cpu = line.substr(colon + 2);
      break;
    }
  }
  return cpu + ", " + std::to_string(std::thread::hardware_concurrency()) + " hardware threads, " +
         (sizeof(Real) == 8 ? "f64" : "f32");
}

std::string LatencyReport::text() const {
  std::ostringstream os;
  os << "model=" << model_name << '\n'
     << "parameters=" << parameter_count << '\n'
     << "iterations=" << iterations << '\n'
     << "single.median_ms=" << median_ms << '\n'
     << "single.p95_ms=" << p95_ms << '\n'
     << "single.mean_ms=" << mean_ms << '\n'
     << "single.images_per_s=" << single_images_per_s << '\n'
     << "batch=" << batch << '\n'
     << "batch.median_ms=" << batch_median_ms << '\n'
     << "batch.images_per_s=" << batch_images_per_s << '\n'
     << "hardware=" << hardware << '\n';
  return os.str();
}

LatencyReport benchmark_inference(const model::LayerGraph& graph, const ParameterSet& params,
                                  const BenchConfig& cfg) {
  if (cfg.iterations < 30) throw Error(ErrorKind::Config, "benchmark needs at least 30 iterations");
  if (cfg.batch < 1 || cfg.batch_iterations < 1) throw Error(ErrorKind::Config, "benchmark batch settings must be >= 1");
  using clock = std::chrono::steady_clock;
  Rng rng(cfg.seed);
  const auto& in = graph.input;
  const Tensor single = rng.uniform_tensor(Shape{1, in.channels, in.height, in.width}, 0, 1);
  const Tensor batch = rng.uniform_tensor(Shape{cfg.batch, in.channels, in.height, in.width}, 0, 1);

  auto time_ms = [&](const Tensor& x) {
    const auto t0 = clock::now();
    const Tensor out = model::predict(graph, params, x);
    const auto t1 = clock::now();
    if (out.size() == 0) throw Error(ErrorKind::Value, "empty model output");
    return std::chrono::duration<double, std::milli>(t1 - t0).count();
  };

  for (std::size_t i = 0; i < cfg.warmup; ++i) time_ms(single);
  std::vector<double> single_ms;
  for (std::size_t i = 0; i < cfg.iterations; ++i) single_ms.push_back(time_ms(single));
  time_ms(batch);
  std::vector<double> batch_ms;
  for (std::size_t i = 0; i < cfg.batch_iterations; ++i) batch_ms.push_back(time_ms(batch));

  LatencyReport r;
  r.model_name = graph.model_name;
  r.parameter_count = model::count_parameters(graph);
  r.iterations = cfg.iterations;
  r.median_ms = percentile(single_ms, 50);
  r.p95_ms = percentile(single_ms, 95);
  double total = 0;
  for (double v : single_ms) total += v;
  r.mean_ms = total / double(single_ms.size());
  r.batch = cfg.batch;
  r.batch_median_ms = percentile(batch_ms, 50);
  r.single_images_per_s = 1000.0 / r.median_ms;
  r.batch_images_per_s = 1000.0 * double(cfg.batch) / r.batch_median_ms;
  r.hardware = hardware_description();
  return r;
}

}  // namespace l2sa
