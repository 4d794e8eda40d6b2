#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "l2sa/autodiff.hpp"
#include "l2sa/checkpoint.hpp"
#include "l2sa/data.hpp"
#include "l2sa/model.hpp"

namespace l2sa::train {

struct TrainConfig {
  Real learning_rate = Real(0.01);
  Real adam_epsilon = Real(0.1);
  Real adam_beta1 = Real(0.9);
  Real adam_beta2 = Real(0.999);
  std::size_t batch_size = 64;
  std::size_t epochs = 50;
  std::uint64_t seed = 1;
  std::size_t repeats = 1;

  void validate() const;
};

struct AdamState {
  std::map<std::string, Tensor> first_moment;
  std::map<std::string, Tensor> second_moment;
  std::uint64_t step = 0;
};

// One bias-corrected Adam update of every parameter that has a gradient:
//   p -= lr * m_hat / (sqrt(v_hat) + eps)
void adam_step(ParameterSet& params, const Gradients& grads, AdamState& state, const TrainConfig& cfg);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0, train_accuracy = 0;
  double val_loss = 0, val_accuracy = 0;
};

struct Metrics {
  double accuracy = 0;
  double loss = 0;
  std::size_t samples = 0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  std::vector<double> precision, recall;

  std::string report(const std::string& prefix = "") const;
};

// Confusion-matrix metrics; `loss` is left for the caller.
Metrics metrics_from_predictions(const std::vector<int>& labels, const std::vector<int>& predictions,
                                 std::size_t classes);

Metrics evaluate(const model::LayerGraph& graph, const ParameterSet& params, const data::Dataset& dataset,
                 data::Split split, std::size_t batch_size = 64);
Metrics evaluate(const Checkpoint& ckpt, const data::Dataset& dataset, data::Split split, std::size_t batch_size = 64);

struct RunResult {
  std::uint64_t seed = 0;
  bool failed = false;
  std::string failure;
  std::size_t best_epoch = 0;
  Checkpoint best;
  Metrics val;
  std::optional<Metrics> test;
  std::vector<EpochRecord> curve;

  std::string curve_csv() const;
  std::string report() const;
};

struct TrainReport {
  std::vector<RunResult> runs;
  std::optional<std::size_t> best_run;  // highest validation accuracy among converged runs
  double best_test_accuracy = 0;        // test accuracy of best_run
  double max_test_accuracy = 0;         // highest test accuracy over converged runs
  double mean_test_accuracy = 0, std_test_accuracy = 0;

  std::string summary() const;
};

// Trains one repeat with `seed` (initialization and shuffling).
RunResult train_once(const model::LayerGraph& graph, const data::Dataset& dataset, const TrainConfig& cfg,
                     std::uint64_t seed);

// Runs cfg.repeats repeats with seeds seed, seed+1, ... When `run_dir` is set
// each repeat writes seed<k>/{checkpoint.l2sa, metrics.csv, report.txt} and a
// summary.txt is written alongside.
TrainReport train(const model::LayerGraph& graph, const data::Dataset& dataset, const TrainConfig& cfg,
                  const std::optional<std::filesystem::path>& run_dir = std::nullopt);

// Skip-connection ablation: the same l2-SA graph trained with skips on and
// off over an identical seed set.
struct AblationReport {
  std::vector<std::uint64_t> seeds;
  TrainReport with_skips;
  TrainReport without_skips;

  std::string text() const;
};

// `graph` must be an l2-SA graph with skips; the skip-free variant is derived
// from it. Run directories, when set, are <run_dir>/skips_on and
// <run_dir>/skips_off, and the comparison goes to <run_dir>/ablation.txt.
AblationReport ablate_skips(const model::LayerGraph& graph, const data::Dataset& dataset, const TrainConfig& cfg,
                            const std::optional<std::filesystem::path>& run_dir = std::nullopt);

}  // namespace l2sa::train
