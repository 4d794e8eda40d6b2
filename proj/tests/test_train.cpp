#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "l2sa/bench.hpp"
#include "l2sa/train.hpp"

using namespace l2sa;
using namespace l2sa::train;
namespace fs = std::filesystem;

namespace {

const model::BackboneConfig kTiny{{4, 6, 8}, {5, 3, 3}, {4, 2, 2}, 16};

data::Dataset synthetic(std::size_t per_class, std::uint64_t seed, std::size_t size = 32) {
  data::Dataset ds = data::synth_dataset(3, per_class, seed, size);
  data::split(ds, {}, seed);
  return ds;
}

model::LayerGraph tiny_l2sa(std::size_t size = 32, bool skips = true) {
  return model::build_l2sa({3, size, size}, 3, {3, 3, 3}, skips, kTiny);
}

std::string file_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

}  // namespace

TEST(Adam, FirstStepOnScalar) {
  ParameterSet p;
  p.add("w", Tensor(Shape{1}, 0.0));
  AdamState state;
  TrainConfig cfg;
  adam_step(p, {{"w", Tensor(Shape{1}, 1.0)}}, state, cfg);
  // m_hat = v_hat = 1, so the update is -0.01 / (1 + 0.1).
  EXPECT_NEAR(p.at("w")[0], -0.01 / 1.1, 1e-15);
  EXPECT_NEAR(p.at("w")[0], -0.009091, 1e-6);
  EXPECT_EQ(state.step, 1u);
}

TEST(Adam, SecondStepMatchesHandEvaluation) {
  ParameterSet p;
  p.add("w", Tensor(Shape{1}, 0.0));
  AdamState state;
  const TrainConfig cfg;
  adam_step(p, {{"w", Tensor(Shape{1}, 1.0)}}, state, cfg);
  adam_step(p, {{"w", Tensor(Shape{1}, -2.0)}}, state, cfg);
  const double m = 0.9 * 0.1 * 1 + 0.1 * -2.0;
  const double v = 0.999 * 0.001 * 1 + 0.001 * 4.0;
  const double m_hat = m / (1 - 0.81), v_hat = v / (1 - 0.999 * 0.999);
  EXPECT_NEAR(p.at("w")[0], -0.01 / 1.1 - 0.01 * m_hat / (std::sqrt(v_hat) + 0.1), 1e-15);
}

TEST(Adam, ZeroGradientIsAFixedPoint) {
  ParameterSet p;
  p.add("w", Tensor(Shape{2, 2}, std::vector<Real>{1, -2, 3, 0.5}));
  const Tensor before = p.at("w");
  AdamState state;
  for (int i = 0; i < 100; ++i) adam_step(p, {{"w", Tensor(Shape{2, 2}, 0.0)}}, state, {});
  EXPECT_TRUE(bit_equal(p.at("w"), before));
}

TEST(Adam, ShapeMismatchIsAnError) {
  ParameterSet p;
  p.add("w", Tensor(Shape{2}, 0.0));
  AdamState state;
  EXPECT_THROW(adam_step(p, {{"w", Tensor(Shape{3}, 1.0)}}, state, {}), ShapeError);
}

TEST(Config, Validation) {
  TrainConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  cfg.learning_rate = -1;
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(Metrics, MajorityClassOnReportedDistribution) {
  std::vector<int> labels, predictions;
  const std::size_t counts[3] = {708, 1426, 930};
  for (int c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < counts[c]; ++i) {
      labels.push_back(c);
      predictions.push_back(1);
    }
  const Metrics m = metrics_from_predictions(labels, predictions, 3);
  EXPECT_DOUBLE_EQ(m.accuracy, 1426.0 / 3064.0);
  EXPECT_NEAR(m.accuracy, 0.4654, 1e-4);
  EXPECT_EQ(m.confusion[0][1], 708u);
  EXPECT_DOUBLE_EQ(m.recall[1], 1.0);
  EXPECT_DOUBLE_EQ(m.recall[0], 0.0);
}

TEST(Metrics, PerfectPredictorGivesIdentityConfusion) {
  const data::Dataset ds = synthetic(5, 1);
  std::vector<int> labels;
  for (const auto& s : ds.samples) labels.push_back(s.label);
  const Metrics m = metrics_from_predictions(labels, labels, 3);
  EXPECT_DOUBLE_EQ(m.accuracy, 1.0);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(m.confusion[i][j], i == j ? 5u : 0u);
}

TEST(Evaluate, AccuracyIsTraceOverTotalAndRowsMatchCounts) {
  const data::Dataset ds = synthetic(10, 2);
  const model::LayerGraph g = tiny_l2sa();
  const Metrics m = evaluate(g, model::init_parameters(g, 3), ds, data::Split::Train, 7);
  std::size_t trace = 0, total = 0;
  const auto counts = ds.class_counts(data::Split::Train);
  for (std::size_t i = 0; i < 3; ++i) {
    std::size_t row = 0;
    for (std::size_t j = 0; j < 3; ++j) row += m.confusion[i][j];
    EXPECT_EQ(row, counts[i]);
    trace += m.confusion[i][i];
    total += row;
  }
  EXPECT_EQ(m.accuracy, double(trace) / double(total));
  EXPECT_TRUE(std::isfinite(m.loss));
}

TEST(Evaluate, Errors) {
  data::Dataset ds = data::synth_dataset(3, 4, 1, 32);
  const model::LayerGraph g = tiny_l2sa();
  const ParameterSet p = model::init_parameters(g, 1);
  EXPECT_THROW(evaluate(g, p, ds, data::Split::Test), Error);  // nothing assigned yet
  data::split(ds, {}, 1);
  const model::LayerGraph wrong = tiny_l2sa(64);
  EXPECT_THROW(evaluate(wrong, model::init_parameters(wrong, 1), ds, data::Split::Test), ShapeError);
}

TEST(Train, ZeroLearningRateKeepsMetricsFixed) {
  const data::Dataset ds = synthetic(4, 3);
  TrainConfig cfg;
  cfg.learning_rate = 0;
  cfg.epochs = 3;
  cfg.batch_size = 5;
  const RunResult r = train_once(tiny_l2sa(), ds, cfg, 1);
  ASSERT_EQ(r.curve.size(), 3u);
  for (const auto& e : r.curve) {
    EXPECT_EQ(e.val_accuracy, r.curve[0].val_accuracy);
    EXPECT_EQ(e.val_loss, r.curve[0].val_loss);
    EXPECT_EQ(e.train_accuracy, r.curve[0].train_accuracy);
  }
  EXPECT_TRUE(r.best.params == model::init_parameters(tiny_l2sa(), 1));
}

TEST(Train, DeterministicCheckpointsAndMetrics) {
  const data::Dataset ds = synthetic(4, 5);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 4;
  const fs::path root = fs::temp_directory_path() / "l2sa_train_tests" / "determinism";
  fs::remove_all(root);
  const TrainReport a = train::train(tiny_l2sa(), ds, cfg, root / "a");
  const TrainReport b = train::train(tiny_l2sa(), ds, cfg, root / "b");
  EXPECT_EQ(file_bytes(root / "a" / "seed1" / "checkpoint.l2sa"), file_bytes(root / "b" / "seed1" / "checkpoint.l2sa"));
  EXPECT_EQ(file_bytes(root / "a" / "seed1" / "metrics.csv"), file_bytes(root / "b" / "seed1" / "metrics.csv"));
  EXPECT_EQ(file_bytes(root / "a" / "summary.txt"), file_bytes(root / "b" / "summary.txt"));
  EXPECT_FALSE(file_bytes(root / "a" / "seed1" / "report.txt").empty());
  EXPECT_TRUE(a.runs[0].best.params == b.runs[0].best.params);
}

TEST(Train, RepeatsBookkeeping) {
  const data::Dataset ds = synthetic(4, 6);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  cfg.repeats = 3;
  cfg.seed = 10;
  const TrainReport rep = train::train(tiny_l2sa(), ds, cfg);
  ASSERT_EQ(rep.runs.size(), 3u);
  EXPECT_EQ(rep.runs[0].seed, 10u);
  EXPECT_EQ(rep.runs[2].seed, 12u);
  ASSERT_TRUE(rep.best_run.has_value());
  EXPECT_LT(*rep.best_run, 3u);
  EXPECT_GE(rep.max_test_accuracy, rep.best_test_accuracy);
  const std::string summary = rep.summary();
  EXPECT_NE(summary.find("runs=3"), std::string::npos) << summary;
  EXPECT_NE(summary.find("best_run="), std::string::npos) << summary;
}

TEST(Train, NonFiniteInputMarksRunFailed) {
  data::Dataset ds = synthetic(4, 7);
  for (auto& s : ds.samples)
    if (s.split == data::Split::Train) s.gray[0] = std::numeric_limits<float>::quiet_NaN();
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.repeats = 2;
  const TrainReport rep = train::train(tiny_l2sa(), ds, cfg);
  ASSERT_EQ(rep.runs.size(), 2u);
  EXPECT_TRUE(rep.runs[0].failed);
  EXPECT_FALSE(rep.runs[0].failure.empty());
  EXPECT_FALSE(rep.best_run.has_value());
}

TEST(Train, DivergentLearningRateMarksRunFailed) {
  const data::Dataset ds = synthetic(4, 8);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.learning_rate = Real(1e300);
  cfg.adam_epsilon = Real(1e-300);
  const RunResult r = train_once(tiny_l2sa(), ds, cfg, 1);
  EXPECT_TRUE(r.failed);
}

TEST(Train, TinyModelOverfitsSmallSyntheticSet) {
  data::Dataset ds = data::synth_dataset(3, 12, 3, 32);
  data::split(ds, {0.9, 0.1, 0.0}, 3);
  const model::LayerGraph g = model::build_l2sa({3, 32, 32}, 3, {3, 3, 3}, true, {{8, 16, 32}, {5, 3, 3}, {2, 2, 2}, 32});
  ASSERT_LE(model::count_parameters(g), 100000u);
  TrainConfig cfg;
  cfg.learning_rate = Real(0.01);
  cfg.adam_epsilon = Real(1e-3);
  cfg.epochs = 60;
  cfg.batch_size = 8;
  const RunResult r = train_once(g, ds, cfg, 2);
  ASSERT_FALSE(r.failed) << r.failure;
  double best_train = 0;
  for (const auto& e : r.curve) best_train = std::max(best_train, e.train_accuracy);
  EXPECT_EQ(best_train, 1.0);
}

TEST(Bench, ReportContents) {
  // Narrow trunk with the full-size 65536 x 256 dense head.
  const model::LayerGraph g = model::build_l2sa({3, 128, 128}, 3, {5, 3, 3}, true, {{4, 8, 256}, {5, 3, 3}, {2, 2, 2}, 256});
  ASSERT_EQ(g.layers[g.layers.size() - 3].dense_in, 65536u);
  const ParameterSet p = model::init_parameters(g, 1);
  BenchConfig cfg;
  cfg.iterations = 40;
  cfg.batch_iterations = 5;
  const LatencyReport a = benchmark_inference(g, p, cfg);
  EXPECT_EQ(a.parameter_count, model::count_parameters(g));
  EXPECT_NE(a.text().find(std::to_string(a.parameter_count)), std::string::npos);
  EXPECT_FALSE(a.hardware.empty());
  EXPECT_LE(a.median_ms, a.p95_ms);
  EXPECT_GE(a.batch_images_per_s, a.single_images_per_s);
  const LatencyReport b = benchmark_inference(g, p, cfg);
  EXPECT_LT(std::abs(a.median_ms - b.median_ms) / std::max(a.median_ms, b.median_ms), 0.2);
  cfg.iterations = 29;
  EXPECT_THROW(benchmark_inference(g, p, cfg), Error);
}

TEST(Bench, NearestRankPercentile) {
  EXPECT_EQ(percentile({5, 1, 3, 2, 4}, 50), 3);
  EXPECT_EQ(percentile({5, 1, 3, 2, 4}, 100), 5);
  std::vector<double> v;
  for (int i = 1; i <= 20; ++i) v.push_back(i);
  EXPECT_EQ(percentile(v, 95), 19);
}
