#include "cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>

#include "l2sa/bench.hpp"
#include "l2sa/checkpoint.hpp"
#include "l2sa/data.hpp"
#include "l2sa/gradcheck.hpp"
#include "l2sa/model.hpp"
#include "l2sa/train.hpp"

namespace l2sa::cli {
namespace {

namespace fs = std::filesystem;

const std::string kBuildPrecision = sizeof(Real) == 8 ? "f64" : "f32";

Error usage(const std::string& what) { return Error(ErrorKind::Config, what); }

struct DataOptions {
  std::string dataset = "synthetic";
  std::string data_root;
  std::vector<std::string> classes{"glioma", "meningioma", "pituitary"};
  std::size_t per_class = 12;
  std::size_t image_size = 0;
  std::uint64_t split_seed = 1;
  std::string split_manifest;
  double train_fraction = 0.70, val_fraction = 0.10, test_fraction = 0.20;

  std::size_t resolved_size() const {
    if (image_size) return image_size;
    return dataset == "synthetic" ? 64 : data::kInputSize;
  }
};

struct ModelOptions {
  std::string model = "l2sa";
  std::vector<std::size_t> sab_kernels = model::kDefaultSabKernels;
  bool skips = true;
  model::BackboneConfig backbone;
};

struct Common {
  std::string out;
  std::string precision = kBuildPrecision;
  std::string config;
};

void add_common(CLI::App* sc, Common& c, const std::string& out_help) {
  sc->add_option("--out", c.out, out_help);
  sc->add_option("--precision", c.precision, "element width; must match the build")->check(CLI::IsMember({"f32", "f64"}));
  sc->add_option("--config", c.config, "key=value file; keys are long flag names, flags take precedence");
}

void add_data_options(CLI::App* sc, DataOptions& d) {
  sc->add_option("--dataset", d.dataset, "synthetic or dir")->check(CLI::IsMember({"synthetic", "dir"}));
  sc->add_option("--data-root", d.data_root, "dataset root: <root>/<class>/*.png|bmp|jpg");
  sc->add_option("--classes", d.classes, "expected class directories (dir) or names (synthetic)")->delimiter(',');
  sc->add_option("--per-class", d.per_class, "synthetic samples per class")->check(CLI::PositiveNumber);
  sc->add_option("--image-size", d.image_size, "model input side; 0 selects 64 (synthetic) or 256 (dir)");
  sc->add_option("--split-seed", d.split_seed, "seed for the synthetic data and the split");
  sc->add_option("--split-manifest", d.split_manifest, "apply this manifest instead of splitting");
  sc->add_option("--train-fraction", d.train_fraction, "train fraction");
  sc->add_option("--val-fraction", d.val_fraction, "validation fraction");
  sc->add_option("--test-fraction", d.test_fraction, "test fraction");
}

void add_model_options(CLI::App* sc, ModelOptions& m, bool choose_model) {
  if (choose_model) {
    sc->add_option("--model", m.model, "model name")
        ->check(CLI::IsMember({"baseline", "l2sa", "l2sa_noskip", "baseline_cbam", "vgg16_star"}));
    sc->add_option("--skips", m.skips, "skip connections A, B, C between attention blocks (l2sa)")
        ->default_str(m.skips ? "true" : "false");
  }
  sc->add_option("--sab-kernels", m.sab_kernels, "l2-SAB kernel size per attention block")->delimiter(',');
  sc->add_option("--channels", m.backbone.channels, "backbone channels per block")->delimiter(',');
  sc->add_option("--kernels", m.backbone.kernels, "backbone kernel size per block")->delimiter(',');
  sc->add_option("--pools", m.backbone.pools, "max-pool size per block")->delimiter(',');
  sc->add_option("--head-width", m.backbone.head_width, "hidden dense width")->check(CLI::PositiveNumber);
}

void add_train_options(CLI::App* sc, train::TrainConfig& c) {
  sc->add_option("--epochs", c.epochs, "training epochs");
  sc->add_option("--batch-size", c.batch_size, "mini-batch size");
  sc->add_option("--lr", c.learning_rate, "Adam learning rate");
  sc->add_option("--adam-epsilon", c.adam_epsilon, "Adam epsilon");
  sc->add_option("--adam-beta1", c.adam_beta1, "Adam beta1");
  sc->add_option("--adam-beta2", c.adam_beta2, "Adam beta2");
  sc->add_option("--seed", c.seed, "seed of the first repeat; repeat i uses seed+i");
  sc->add_option("--repeats", c.repeats, "independent training repeats");
}

void require_precision(const Common& c) {
  if (c.precision != kBuildPrecision) {
    throw usage("--precision: " + c.precision + " does not match this build (" + kBuildPrecision +
                "); configure with -DL2SA_FLOAT32=" + (c.precision == "f32" ? "ON" : "OFF"));
  }
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool flag_given(const std::vector<std::string>& args, const std::string& flag) {
  for (const auto& a : args)
    if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
  return false;
}

// Appends config-file values for flags absent from the command line.
void merge_config(std::vector<std::string>& args, const CLI::App& sc) {
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty()) return;
  std::ifstream is(path);
  if (!is) throw usage("--config: cannot open '" + path + "'");
  std::string line;
  std::vector<std::string> extra;
  for (std::size_t n = 1; std::getline(is, line); ++n) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw usage("--config: " + path + ":" + std::to_string(n) + ": expected key=value");
    std::string key = trim(line.substr(0, eq));
    if (key.rfind("--", 0) == 0) key = key.substr(2);
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    const std::string flag = "--" + key;
    if (key.empty() || key == "config" || key == "help" || sc.get_option_no_throw(flag) == nullptr) {
      throw usage("--config: " + path + ":" + std::to_string(n) + ": unknown key '" + key + "'");
    }
    if (flag_given(args, flag)) continue;
    extra.push_back(flag);
    extra.push_back(value);
  }
  args.insert(args.end(), extra.begin(), extra.end());
}

// Effective option values as a config file that reproduces the run.
std::string effective_config(const CLI::App& sc) {
  std::ostringstream os;
  for (const CLI::Option* opt : sc.get_options()) {
    const std::string name = opt->get_lnames().empty() ? "" : opt->get_lnames().front();
    if (name.empty() || name == "help" || name == "config") continue;
    std::string value;
    if (opt->count()) {
      for (std::size_t i = 0; i < opt->results().size(); ++i) value += (i ? "," : "") + opt->results()[i];
    } else {
      value = opt->get_default_str();
      if (value.size() >= 2 && value.front() == '[' && value.back() == ']') value = value.substr(1, value.size() - 2);
    }
    os << name << '=' << value << '\n';
  }
  return os.str();
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  os << text;
  if (!os) throw Error(ErrorKind::Io, "cannot write '" + path.string() + "'");
}

data::Dataset load_data(const DataOptions& d, std::size_t size) {
  data::Dataset ds;
  if (d.dataset == "synthetic") {
    ds = data::synth_dataset(d.classes.size(), d.per_class, d.split_seed, size);
  } else {
    if (d.data_root.empty()) throw usage("--data-root: required with --dataset dir");
    if (!fs::is_directory(d.data_root)) throw usage("--data-root: directory not found: '" + d.data_root + "'");
    ds = data::load_directory(d.data_root, d.classes, size);
  }
  if (!d.split_manifest.empty()) {
    if (!fs::exists(d.split_manifest)) throw usage("--split-manifest: file not found: '" + d.split_manifest + "'");
    data::apply_manifest(ds, d.split_manifest);
  } else {
    data::split(ds, {d.train_fraction, d.val_fraction, d.test_fraction}, d.split_seed);
  }
  return ds;
}

model::LayerGraph build_model(const ModelOptions& m, std::size_t size, std::size_t classes) {
  const std::string name = m.model == "l2sa" && !m.skips ? "l2sa_noskip" : m.model;
  return model::build_named(name, {3, size, size}, classes, m.sab_kernels, m.backbone);
}

std::string split_summary(const data::Dataset& ds) {
  std::istringstream is(data::manifest_text(ds));
  std::string line, out;
  while (std::getline(is, line))
    if (!line.empty() && line[0] == '#') out += line + '\n';
  return out;
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

int exit_code_for(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::Shape: return kShape;
    case ErrorKind::Io: return kIo;
    case ErrorKind::Format: return kFormat;
    case ErrorKind::Numeric: return kNumeric;
    case ErrorKind::Config:
    case ErrorKind::Value: return kUsage;
  }
  return kInternal;
}

}  // namespace

int run_cli(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Spatial-attention brain tumor MRI classifiers: training, evaluation and verification tools", "l2sa"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);

  Common common;
  DataOptions data_opts;
  ModelOptions model_opts;
  train::TrainConfig train_cfg;
  std::function<int()> action;

  // train
  CLI::App* train_cmd = app.add_subcommand("train", "train a model; writes <out>/seed<k>/{checkpoint.l2sa,metrics.csv,report.txt}");
  add_model_options(train_cmd, model_opts, true);
  add_data_options(train_cmd, data_opts);
  add_train_options(train_cmd, train_cfg);
  add_common(train_cmd, common, "run directory (default runs/<model>)");
  train_cmd->callback([&] {
    action = [&] {
      require_precision(common);
      train_cfg.validate();
      const data::Dataset ds = load_data(data_opts, data_opts.resolved_size());
      const model::LayerGraph graph = build_model(model_opts, data_opts.resolved_size(), ds.class_names.size());
      const fs::path dir = common.out.empty() ? fs::path("runs") / graph.model_name : fs::path(common.out);
      fs::create_directories(dir);
      data::write_manifest(ds, dir / "split.tsv");
      write_file(dir / "config.txt", effective_config(*train_cmd));
      out << "model=" << graph.model_name << "\nparameters=" << model::count_parameters(graph) << '\n'
          << split_summary(ds);
      const train::TrainReport report = train::train(graph, ds, train_cfg, dir);
      out << report.summary() << "run_dir=" << dir.string() << '\n';
      if (!report.best_run) {
        err << "error[train]: every repeat diverged\n";
        return int(kCheckFailed);
      }
      return int(kOk);
    };
  });

  // ablate
  CLI::App* ablate_cmd =
      app.add_subcommand("ablate", "train l2sa with skips on and off over the same seeds; writes <out>/ablation.txt");
  add_model_options(ablate_cmd, model_opts, false);
  add_data_options(ablate_cmd, data_opts);
  add_train_options(ablate_cmd, train_cfg);
  add_common(ablate_cmd, common, "run directory (default runs/ablation)");
  ablate_cmd->callback([&] {
    action = [&] {
      require_precision(common);
      train_cfg.validate();
      const data::Dataset ds = load_data(data_opts, data_opts.resolved_size());
      const std::size_t size = data_opts.resolved_size();
      const model::LayerGraph graph =
          model::build_l2sa({3, size, size}, ds.class_names.size(), model_opts.sab_kernels, true, model_opts.backbone);
      const fs::path dir = common.out.empty() ? fs::path("runs") / "ablation" : fs::path(common.out);
      fs::create_directories(dir);
      data::write_manifest(ds, dir / "split.tsv");
      write_file(dir / "config.txt", effective_config(*ablate_cmd));
      const train::AblationReport report = train::ablate_skips(graph, ds, train_cfg, dir);
      out << report.text() << "run_dir=" << dir.string() << '\n';
      return int(report.with_skips.best_run && report.without_skips.best_run ? kOk : kCheckFailed);
    };
  });

  // eval
  std::string checkpoint_path, split_name = "test";
  std::size_t eval_batch = 64;
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on one split");
  eval_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
  eval_cmd->add_option("--split", split_name, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  eval_cmd->add_option("--batch-size", eval_batch, "evaluation batch size")->check(CLI::PositiveNumber);
  add_data_options(eval_cmd, data_opts);
  add_common(eval_cmd, common, "directory for eval.txt (optional)");
  eval_cmd->callback([&] {
    action = [&] {
      require_precision(common);
      const Checkpoint ckpt = load_checkpoint(checkpoint_path);
      const std::size_t size = data_opts.image_size ? data_opts.image_size : ckpt.graph.input.height;
      const data::Dataset ds = load_data(data_opts, size);
      const train::Metrics m = train::evaluate(ckpt, ds, data::parse_split(split_name), eval_batch);
      const std::string text = "checkpoint=" + checkpoint_path + "\nmodel=" + ckpt.graph.model_name + "\n" +
                               m.report(split_name + ".");
      out << text;
      if (!common.out.empty()) write_file(fs::path(common.out) / "eval.txt", text);
      return int(kOk);
    };
  });

  // gradcheck
  std::string module = "all";
  GradCheckOptions gc_opts;
  std::size_t instances = 20;
  std::uint64_t gc_seed = 1;
  CLI::App* gc_cmd = app.add_subcommand("gradcheck", "finite-difference gradient certification (64-bit only)");
  std::vector<std::string> module_names{"all"};
  for (const auto& m : gradcheck_modules()) module_names.push_back(m);
  gc_cmd->add_option("--module", module, "operation to check")->check(CLI::IsMember(module_names));
  gc_cmd->add_option("--tolerance", gc_opts.tolerance, "maximum relative error");
  gc_cmd->add_option("--step", gc_opts.step, "central-difference step");
  gc_cmd->add_option("--instances", instances, "random instances per operation")->check(CLI::PositiveNumber);
  gc_cmd->add_option("--seed", gc_seed, "seed for shapes and values");
  add_common(gc_cmd, common, "report directory (default runs/gradcheck)");
  gc_cmd->callback([&] {
    action = [&] {
      if (common.precision != "f64") throw usage("--precision: gradcheck runs in f64 only");
      require_precision(common);
      const fs::path dir = common.out.empty() ? fs::path("runs") / "gradcheck" : fs::path(common.out);
      std::vector<std::string> modules = module == "all" ? gradcheck_modules() : std::vector<std::string>{module};
      std::string tables, kv;
      bool all_pass = true;
      for (const auto& m : modules) {
        const auto reports = check_module(m, instances, gc_seed, gc_opts);
        std::size_t passed = 0, excluded = 0;
        Real worst = 0;
        for (const auto& r : reports) {
          passed += r.passed();
          excluded += r.excluded();
          worst = std::max(worst, r.max_rel_error());
          tables += r.table() + '\n';
          kv += r.key_values();
        }
        all_pass = all_pass && passed == reports.size();
        kv += m + ".passed=" + std::to_string(passed) + "/" + std::to_string(reports.size()) + '\n';
        out << std::left << std::setw(14) << m << ' ' << (passed == reports.size() ? "PASS" : "FAIL") << ' ' << passed
            << '/' << reports.size() << " max_rel_error=" << std::scientific << std::setprecision(2) << double(worst)
            << std::defaultfloat << " excluded=" << excluded << '\n';
      }
      kv += std::string("tolerance=") + std::to_string(double(gc_opts.tolerance)) + "\npassed=" + (all_pass ? "true" : "false") + '\n';
      write_file(dir / "gradcheck.txt", tables);
      write_file(dir / "gradcheck.kv", kv);
      out << "report=" << (dir / "gradcheck.txt").string() << '\n';
      return int(all_pass ? kOk : kCheckFailed);
    };
  });

  // bench
  BenchConfig bench_cfg;
  std::string bench_checkpoint;
  std::size_t bench_size = data::kInputSize;
  CLI::App* bench_cmd = app.add_subcommand("bench", "single-image latency and batch throughput");
  bench_cmd->add_option("--checkpoint", bench_checkpoint, "benchmark this checkpoint instead of a fresh model");
  add_model_options(bench_cmd, model_opts, true);
  bench_cmd->add_option("--image-size", bench_size, "input side for a fresh model")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--iterations", bench_cfg.iterations, "timed single-image passes (>= 30)");
  bench_cmd->add_option("--warmup", bench_cfg.warmup, "untimed warm-up passes");
  bench_cmd->add_option("--batch", bench_cfg.batch, "throughput batch size")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--batch-iterations", bench_cfg.batch_iterations, "timed batch passes")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--seed", bench_cfg.seed, "seed for weights and inputs");
  add_common(bench_cmd, common, "directory for bench.txt (optional)");
  bench_cmd->callback([&] {
    action = [&] {
      require_precision(common);
      Checkpoint ckpt;
      if (!bench_checkpoint.empty()) {
        ckpt = load_checkpoint(bench_checkpoint);
      } else {
        ckpt.graph = build_model(model_opts, bench_size, 3);
        ckpt.params = model::init_parameters(ckpt.graph, bench_cfg.seed);
      }
      const std::string text = benchmark_inference(ckpt.graph, ckpt.params, bench_cfg).text();
      out << text;
      if (!common.out.empty()) write_file(fs::path(common.out) / "bench.txt", text);
      return int(kOk);
    };
  });

  // split
  CLI::App* split_cmd = app.add_subcommand("split", "write a seeded train/val/test manifest");
  add_data_options(split_cmd, data_opts);
  add_common(split_cmd, common, "manifest path (default split.tsv)");
  split_cmd->callback([&] {
    action = [&] {
      DataOptions d = data_opts;
      d.split_manifest.clear();
      const data::Dataset ds = load_data(d, d.resolved_size());
      const fs::path path = common.out.empty() ? fs::path("split.tsv") : fs::path(common.out);
      if (path.has_parent_path()) fs::create_directories(path.parent_path());
      data::write_manifest(ds, path);
      out << split_summary(ds) << "manifest=" << path.string() << '\n';
      return int(kOk);
    };
  });

  // synth
  std::size_t synth_per_class = 12, synth_size = 64, synth_classes = 3;
  std::uint64_t synth_seed = 1;
  CLI::App* synth_cmd = app.add_subcommand("synth", "write a synthetic dataset as <out>/<class>/*.png");
  synth_cmd->add_option("--per-class", synth_per_class, "images per class")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--classes", synth_classes, "number of classes")->check(CLI::Range(1, 3));
  synth_cmd->add_option("--image-size", synth_size, "image side")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--seed", synth_seed, "generator seed");
  add_common(synth_cmd, common, "output directory");
  synth_cmd->callback([&] {
    action = [&] {
      if (common.out.empty()) throw usage("--out: required for synth");
      const data::Dataset ds = data::synth_dataset(synth_classes, synth_per_class, synth_seed, synth_size);
      data::write_dataset_images(ds, common.out);
      out << "images=" << ds.samples.size() << "\nroot=" << common.out << '\n';
      return int(kOk);
    };
  });

  // params
  std::size_t params_size = data::kInputSize;
  CLI::App* params_cmd = app.add_subcommand("params", "parameter counts of every model beside the reported figures");
  add_model_options(params_cmd, model_opts, false);
  params_cmd->add_option("--image-size", params_size, "input side")->check(CLI::PositiveNumber);
  params_cmd->callback([&] {
    action = [&] {
      const std::map<std::string, long long> reported{
          {"baseline", 4003011}, {"baseline_cbam", 5474547}, {"l2sa", 7293523}, {"vgg16_star", 25972491}};
      out << std::left << std::setw(14) << "model" << std::right << std::setw(12) << "parameters" << std::setw(12)
          << "reported" << std::setw(12) << "delta" << '\n';
      for (const std::string name : {"baseline", "baseline_cbam", "l2sa", "l2sa_noskip", "vgg16_star"}) {
        const model::LayerGraph g =
            model::build_named(name, {3, params_size, params_size}, 3, model_opts.sab_kernels, model_opts.backbone);
        const auto count = (long long)model::count_parameters(g);
        const auto it = reported.find(name);
        out << std::left << std::setw(14) << name << std::right << std::setw(12) << count;
        if (it == reported.end()) {
          out << std::setw(12) << "-" << std::setw(12) << "-" << '\n';
        } else {
          out << std::setw(12) << it->second << std::setw(12) << std::showpos << count - it->second << std::noshowpos
              << '\n';
        }
      }
      return int(kOk);
    };
  });

  std::vector<std::string> args = raw_args;
  try {
    if (!args.empty()) {
      for (CLI::App* sc : app.get_subcommands({})) {
        if (sc->get_name() == args[0]) merge_config(args, *sc);
      }
    }
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? int(kOk) : int(kUsage);
  } catch (const Error& e) {
    err << "error[usage]: " << e.what() << '\n';
    return kUsage;
  }

  try {
    return action();
  } catch (const Error& e) {
    const int code = exit_code_for(e);
    err << "error[" << (code == kUsage ? "usage" : to_string(e.kind())) << "]: " << e.what() << '\n';
    return code;
  } catch (const std::exception& e) {
    err << "error[internal]: " << e.what() << '\n';
    return kInternal;
  }
}

}  // namespace l2sa::cli
