#include "l2sa/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "l2sa/random.hpp"

namespace l2sa::train {
namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error(ErrorKind::Io, "cannot write " + path.string());
  os << text;
}

int argmax_row(const Tensor& t, std::size_t row) {
  const std::size_t C = t.shape()[1];
  const Real* p = t.ptr() + row * C;
  return int(std::max_element(p, p + C) - p);
}

void check_input_shape(const model::LayerGraph& graph, const data::Dataset& ds) {
  if (graph.input.channels != 3) {
    throw ShapeError("evaluate", "channels", "model expects " + std::to_string(graph.input.channels) + ", data has 3");
  }
  if (graph.input.height != ds.height || graph.input.width != ds.width) {
    throw ShapeError("evaluate", "height/width",
                     "model expects " + std::to_string(graph.input.height) + "x" + std::to_string(graph.input.width) +
                         ", data is " + std::to_string(ds.height) + "x" + std::to_string(ds.width));
  }
  if (graph.class_count != ds.class_names.size()) {
    throw ShapeError("evaluate", "classes", "model has " + std::to_string(graph.class_count) + " classes, data has " +
                                                std::to_string(ds.class_names.size()));
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate >= 0)) throw Error(ErrorKind::Config, "learning rate must be >= 0");
  if (!(adam_epsilon > 0)) throw Error(ErrorKind::Config, "adam epsilon must be > 0");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1) || !(adam_beta2 >= 0 && adam_beta2 < 1)) {
    throw Error(ErrorKind::Config, "adam betas must lie in [0,1)");
  }
  if (batch_size < 1) throw Error(ErrorKind::Config, "batch size must be >= 1");
  if (repeats < 1) throw Error(ErrorKind::Config, "repeats must be >= 1");
}

void adam_step(ParameterSet& params, const Gradients& grads, AdamState& state, const TrainConfig& cfg) {
  ++state.step;
  const Accum b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const Accum correction1 = 1 - std::pow(b1, Accum(state.step));
  const Accum correction2 = 1 - std::pow(b2, Accum(state.step));
  for (const auto& name : params.names()) {
    auto it = grads.find(name);
    if (it == grads.end()) continue;
    Tensor& p = params.at(name);
    const Tensor& g = it->second;
    if (!(g.shape() == p.shape())) {
      throw ShapeError("adam_step", "gradient", name + ": " + g.shape().str() + " vs " + p.shape().str());
    }
    auto [mi, m_new] = state.first_moment.try_emplace(name, p.shape());
    auto [vi, v_new] = state.second_moment.try_emplace(name, p.shape());
    Tensor& m = mi->second;
    Tensor& v = vi->second;
    if (!(m.shape() == p.shape()) || !(v.shape() == p.shape())) {
      throw ShapeError("adam_step", "state", name + ": moment shape does not match " + p.shape().str());
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      const Accum gi = g[i];
      const Accum mi_ = b1 * m[i] + (1 - b1) * gi;
      const Accum vi_ = b2 * v[i] + (1 - b2) * gi * gi;
      m[i] = Real(mi_);
      v[i] = Real(vi_);
      const Accum m_hat = mi_ / correction1;
      const Accum v_hat = vi_ / correction2;
      p[i] = Real(p[i] - Accum(cfg.learning_rate) * m_hat / (std::sqrt(v_hat) + Accum(cfg.adam_epsilon)));
    }
  }
}

Metrics metrics_from_predictions(const std::vector<int>& labels, const std::vector<int>& predictions,
                                 std::size_t classes) {
  if (labels.size() != predictions.size()) throw Error(ErrorKind::Value, "metrics: label/prediction count mismatch");
  Metrics m;
  m.samples = labels.size();
  m.confusion.assign(classes, std::vector<std::size_t>(classes, 0));
  for (std::size_t i = 0; i < labels.size(); ++i) ++m.confusion.at(std::size_t(labels[i])).at(std::size_t(predictions[i]));
  std::size_t trace = 0;
  for (std::size_t c = 0; c < classes; ++c) trace += m.confusion[c][c];
  m.accuracy = m.samples ? double(trace) / double(m.samples) : 0.0;
  m.precision.assign(classes, 0);
  m.recall.assign(classes, 0);
  for (std::size_t c = 0; c < classes; ++c) {
    std::size_t row = 0, col = 0;
    for (std::size_t k = 0; k < classes; ++k) {
      row += m.confusion[c][k];
      col += m.confusion[k][c];
    }
    m.recall[c] = row ? double(m.confusion[c][c]) / double(row) : 0.0;
    m.precision[c] = col ? double(m.confusion[c][c]) / double(col) : 0.0;
  }
  return m;
}

std::string Metrics::report(const std::string& prefix) const {
  std::ostringstream os;
  os << prefix << "accuracy=" << fmt(accuracy) << '\n' << prefix << "loss=" << fmt(loss) << '\n'
     << prefix << "samples=" << samples << '\n';
  for (std::size_t c = 0; c < confusion.size(); ++c) {
    os << prefix << "precision." << c << '=' << fmt(precision[c]) << '\n'
       << prefix << "recall." << c << '=' << fmt(recall[c]) << '\n'
       << prefix << "confusion." << c << '=';
    for (std::size_t k = 0; k < confusion[c].size(); ++k) os << (k ? "," : "") << confusion[c][k];
    os << '\n';
  }
  return os.str();
}

Metrics evaluate(const model::LayerGraph& graph, const ParameterSet& params, const data::Dataset& ds,
                 data::Split split, std::size_t batch_size) {
  check_input_shape(graph, ds);
  const std::vector<std::size_t> idx = ds.indices(split);
  if (idx.empty()) throw Error(ErrorKind::Value, std::string("evaluate: split '") + data::to_string(split) + "' is empty");
  std::vector<int> labels, preds;
  Accum loss_sum = 0;
  for (std::size_t start = 0; start < idx.size(); start += batch_size) {
    const std::span<const std::size_t> chunk(idx.data() + start, std::min(batch_size, idx.size() - start));
    const Tensor logits = model::predict(graph, params, data::make_batch(ds, chunk));
    const std::vector<int> y = data::batch_labels(ds, chunk);
    const auto xent = ops::softmax_cross_entropy(logits, y);
    loss_sum += Accum(xent.loss) * Accum(chunk.size());
    for (std::size_t b = 0; b < chunk.size(); ++b) preds.push_back(argmax_row(logits, b));
    labels.insert(labels.end(), y.begin(), y.end());
  }
  Metrics m = metrics_from_predictions(labels, preds, graph.class_count);
  m.loss = double(loss_sum / Accum(idx.size()));
  return m;
}

Metrics evaluate(const Checkpoint& ckpt, const data::Dataset& ds, data::Split split, std::size_t batch_size) {
  return evaluate(ckpt.graph, ckpt.params, ds, split, batch_size);
}

std::string RunResult::curve_csv() const {
  std::ostringstream os;
  os << "epoch,train_loss,train_accuracy,val_loss,val_accuracy\n";
  for (const auto& e : curve) {
    os << e.epoch << ',' << fmt(e.train_loss) << ',' << fmt(e.train_accuracy) << ',' << fmt(e.val_loss) << ','
       << fmt(e.val_accuracy) << '\n';
  }
  return os.str();
}

std::string RunResult::report() const {
  std::ostringstream os;
  os << "model=" << best.graph.model_name << '\n' << "seed=" << seed << '\n'
     << "failed=" << (failed ? "true" : "false") << '\n';
  if (failed) os << "failure=" << failure << '\n';
  os << "best_epoch=" << best_epoch << '\n' << "epochs_run=" << curve.size() << '\n'
     << "parameters=" << model::count_parameters(best.graph) << '\n';
  if (!failed) {
    os << val.report("val.");
    if (test) os << test->report("test.");
  }
  return os.str();
}

std::string TrainReport::summary() const {
  std::ostringstream os;
  os << "runs=" << runs.size() << '\n';
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto& r = runs[i];
    os << "run." << i << ".seed=" << r.seed << '\n' << "run." << i << ".status=" << (r.failed ? "failed" : "ok") << '\n';
    if (!r.failed) {
      os << "run." << i << ".val_accuracy=" << fmt(r.val.accuracy) << '\n';
      if (r.test) os << "run." << i << ".test_accuracy=" << fmt(r.test->accuracy) << '\n';
    }
  }
  if (best_run) {
    os << "best_run=" << *best_run << '\n' << "best_seed=" << runs[*best_run].seed << '\n'
       << "best_test_accuracy=" << fmt(best_test_accuracy) << '\n'
       << "max_test_accuracy=" << fmt(max_test_accuracy) << '\n'
       << "mean_test_accuracy=" << fmt(mean_test_accuracy) << '\n'
       << "std_test_accuracy=" << fmt(std_test_accuracy) << '\n';
  } else {
    os << "best_run=none\n";
  }
  return os.str();
}

RunResult train_once(const model::LayerGraph& graph, const data::Dataset& ds, const TrainConfig& cfg,
                     std::uint64_t seed) {
  cfg.validate();
  check_input_shape(graph, ds);
  const std::vector<std::size_t> train_idx = ds.indices(data::Split::Train);
  if (train_idx.empty()) throw Error(ErrorKind::Value, "train: empty train split");
  if (ds.indices(data::Split::Val).empty()) throw Error(ErrorKind::Value, "train: empty validation split");

  RunResult run;
  run.seed = seed;
  run.best.graph = graph;
  ParameterSet params = model::init_parameters(graph, seed);
  AdamState state;
  Rng shuffle_rng(seed ^ 0x5851F42D4C957F2DULL);
  double best_acc = -1, best_loss = 0;

  try {
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
      std::vector<std::size_t> order = train_idx;
      shuffle_rng.shuffle(order);
      Accum loss_sum = 0;
      std::size_t correct = 0;
      for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
        const std::span<const std::size_t> chunk(order.data() + start, std::min(cfg.batch_size, order.size() - start));
        const std::vector<int> labels = data::batch_labels(ds, chunk);
        Tape tape;
        const Var x = tape.input(data::make_batch(ds, chunk));
        const Var logits = model::forward(graph, tape, params, x);
        const Var loss = tape.softmax_cross_entropy(logits, labels);
        const Real l = tape.value(loss)[0];
        if (!std::isfinite(l)) throw Error(ErrorKind::Numeric, "non-finite training loss");
        loss_sum += Accum(l) * Accum(chunk.size());
        const Tensor& probs = tape.probabilities(loss);
        for (std::size_t b = 0; b < chunk.size(); ++b) correct += argmax_row(probs, b) == labels[b];
        const auto grads = tape.backward(loss);
        adam_step(params, grads.params, state, cfg);
      }
      const Metrics val = evaluate(graph, params, ds, data::Split::Val, cfg.batch_size);
      if (!std::isfinite(val.loss)) throw Error(ErrorKind::Numeric, "non-finite validation loss");
      run.curve.push_back({epoch, double(loss_sum / Accum(order.size())), double(correct) / double(order.size()),
                           val.loss, val.accuracy});
      if (val.accuracy > best_acc || (val.accuracy == best_acc && val.loss < best_loss)) {
        best_acc = val.accuracy;
        best_loss = val.loss;
        run.best_epoch = epoch;
        run.best.params = params;
        run.val = val;
      }
    }
    if (cfg.epochs == 0) {
      run.best.params = params;
      run.val = evaluate(graph, params, ds, data::Split::Val, cfg.batch_size);
    }
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::Numeric) throw;
    run.failed = true;
    run.failure = e.what();
    if (run.best.params.size() == 0) run.best.params = params;
  }

  if (!run.failed && !ds.indices(data::Split::Test).empty()) {
    run.test = evaluate(graph, run.best.params, ds, data::Split::Test, cfg.batch_size);
  }
  auto& meta = run.best.metadata;
  meta["seed"] = std::to_string(seed);
  meta["epoch"] = std::to_string(run.best_epoch);
  meta["epochs"] = std::to_string(cfg.epochs);
  meta["failed"] = run.failed ? "true" : "false";
  if (!run.failed) {
    meta["val_accuracy"] = fmt(run.val.accuracy);
    meta["val_loss"] = fmt(run.val.loss);
    if (run.test) meta["test_accuracy"] = fmt(run.test->accuracy);
  }
  return run;
}

TrainReport train(const model::LayerGraph& graph, const data::Dataset& ds, const TrainConfig& cfg,
                  const std::optional<fs::path>& run_dir) {
  cfg.validate();
  TrainReport report;
  for (std::size_t i = 0; i < cfg.repeats; ++i) {
    const std::uint64_t seed = cfg.seed + i;
    RunResult r = train_once(graph, ds, cfg, seed);
    if (run_dir) {
      const fs::path dir = *run_dir / ("seed" + std::to_string(seed));
      save_checkpoint(r.best, dir / "checkpoint.l2sa");
      write_text(dir / "metrics.csv", r.curve_csv());
      write_text(dir / "report.txt", r.report());
    }
    report.runs.push_back(std::move(r));
  }

  std::vector<double> accs;
  for (std::size_t i = 0; i < report.runs.size(); ++i) {
    const auto& r = report.runs[i];
    if (r.failed) continue;
    const double acc = r.test ? r.test->accuracy : r.val.accuracy;
    accs.push_back(acc);
    if (!report.best_run) {
      report.best_run = i;
      continue;
    }
    const auto& b = report.runs[*report.best_run];
    if (r.val.accuracy > b.val.accuracy || (r.val.accuracy == b.val.accuracy && r.val.loss < b.val.loss)) {
      report.best_run = i;
    }
  }
  if (report.best_run) {
    const auto& b = report.runs[*report.best_run];
    report.best_test_accuracy = b.test ? b.test->accuracy : b.val.accuracy;
    report.max_test_accuracy = *std::max_element(accs.begin(), accs.end());
    double mean = 0;
    for (double a : accs) mean += a;
    mean /= double(accs.size());
    double var = 0;
    for (double a : accs) var += (a - mean) * (a - mean);
    report.mean_test_accuracy = mean;
    report.std_test_accuracy = accs.size() > 1 ? std::sqrt(var / double(accs.size() - 1)) : 0.0;
  }
  if (run_dir) write_text(*run_dir / "summary.txt", report.summary());
  return report;
}

std::string AblationReport::text() const {
  std::ostringstream os;
  os << "configurations=skips_on,skips_off\n" << "seeds=";
  for (std::size_t i = 0; i < seeds.size(); ++i) os << (i ? "," : "") << seeds[i];
  os << '\n';
  auto accuracy = [](const RunResult& r) -> std::string {
    if (r.failed) return "failed";
    return fmt(r.test ? r.test->accuracy : r.val.accuracy);
  };
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    os << "seed." << seeds[i] << ".skips_on=" << accuracy(with_skips.runs[i]) << '\n'
       << "seed." << seeds[i] << ".skips_off=" << accuracy(without_skips.runs[i]) << '\n';
  }
  for (const auto& [label, rep] : {std::pair<const char*, const TrainReport*>{"skips_on", &with_skips},
                                   std::pair<const char*, const TrainReport*>{"skips_off", &without_skips}}) {
    if (!rep->best_run) {
      os << label << ".best_run=none\n";
      continue;
    }
    os << label << ".best_test_accuracy=" << fmt(rep->best_test_accuracy) << '\n'
       << label << ".max_test_accuracy=" << fmt(rep->max_test_accuracy) << '\n'
       << label << ".mean_test_accuracy=" << fmt(rep->mean_test_accuracy) << '\n'
       << label << ".std_test_accuracy=" << fmt(rep->std_test_accuracy) << '\n';
  }
  if (with_skips.best_run && without_skips.best_run) {
    os << "delta_best_test_accuracy=" << fmt(with_skips.best_test_accuracy - without_skips.best_test_accuracy) << '\n';
  }
  return os.str();
}

AblationReport ablate_skips(const model::LayerGraph& graph, const data::Dataset& ds, const TrainConfig& cfg,
                            const std::optional<fs::path>& run_dir) {
  if (graph.skips.empty()) throw Error(ErrorKind::Config, "ablate: graph has no skip connections to disable");
  model::LayerGraph off = graph;
  off.skips.clear();
  off.model_name = graph.model_name + "_noskip";
  AblationReport report;
  for (std::size_t i = 0; i < cfg.repeats; ++i) report.seeds.push_back(cfg.seed + i);
  report.with_skips = train(graph, ds, cfg, run_dir ? std::optional<fs::path>(*run_dir / "skips_on") : std::nullopt);
  report.without_skips = train(off, ds, cfg, run_dir ? std::optional<fs::path>(*run_dir / "skips_off") : std::nullopt);
  if (run_dir) write_text(*run_dir / "ablation.txt", report.text());
  return report;
}

}  // namespace l2sa::train
