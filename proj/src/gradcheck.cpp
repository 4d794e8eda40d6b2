#include "l2sa/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "l2sa/attention.hpp"
#include "l2sa/random.hpp"

namespace l2sa {

Real relative_error(Real analytic, Real numeric) {
  const Real denom = std::max({std::abs(analytic), std::abs(numeric), Real(1e-8)});
  return std::abs(analytic - numeric) / denom;
}

bool GradCheckReport::passed() const {
  return std::all_of(blocks.begin(), blocks.end(), [](const BlockReport& b) { return b.pass; });
}

std::size_t GradCheckReport::excluded() const {
  std::size_t n = 0;
  for (const auto& b : blocks) n += b.excluded;
  return n;
}

Real GradCheckReport::max_rel_error() const {
  Real m = 0;
  for (const auto& b : blocks) m = std::max(m, b.max_rel_error);
  return m;
}

std::string GradCheckReport::table() const {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-28s %8s %8s %14s  %s\n", "block", "checked", "excluded", "max_rel_err", "status");
  os << "gradcheck " << name << " (tolerance " << tolerance << ")\n" << line;
  for (const auto& b : blocks) {
    std::snprintf(line, sizeof line, "%-28s %8zu %8zu %14.3e  %s\n", b.name.c_str(), b.checked, b.excluded,
                  double(b.max_rel_error), b.pass ? "PASS" : "FAIL");
    os << line;
  }
  os << (passed() ? "PASS" : "FAIL") << '\n';
  return os.str();
}

std::string GradCheckReport::key_values() const {
  std::ostringstream os;
  os.precision(6);
  os << "name=" << name << '\n' << "tolerance=" << tolerance << '\n';
  for (const auto& b : blocks) {
    os << b.name << ".checked=" << b.checked << '\n'
       << b.name << ".excluded=" << b.excluded << '\n'
       << b.name << ".max_rel_error=" << std::scientific << b.max_rel_error << std::defaultfloat << '\n'
       << b.name << ".pass=" << (b.pass ? "true" : "false") << '\n';
  }
  os << "pass=" << (passed() ? "true" : "false") << '\n';
  return os.str();
}

namespace {

struct Evaluator {
  const Fragment& fragment;
  std::optional<Tensor> projection;

  Real loss(const ParameterSet& params, const Tensor& input) {
    Tape tape;
    Var out = fragment(tape, tape.input(input), params);
    return scalarize(tape, out, tape.value(out)).second;
  }

  std::pair<Var, Real> scalarize(Tape& tape, Var out, const Tensor& value) {
    if (value.size() == 1) return {out, value[0]};
    Var l = tape.dot(out, *projection);
    return {l, tape.value(l)[0]};
  }
};

// Compares analytic gradients of `values` against central differences.
template <typename Eval>
BlockReport check_block(const std::string& name, Tensor& values, const Tensor& analytic, Eval&& eval,
                        const GradCheckOptions& opt) {
  BlockReport report{name};
  const Real h = opt.step;
  const Real f0 = eval();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const Real saved = values[i];
    values[i] = saved + h;
    const Real fp = eval();
    values[i] = saved - h;
    const Real fm = eval();
    values[i] = saved;

    const Real slope_right = (fp - f0) / h;
    const Real slope_left = (f0 - fm) / h;
    const Real jump = std::abs(slope_right - slope_left);
    // Smooth points differ by O(h * curvature); a kink differs by O(1).
    if (jump > std::max(Real(1e-3), Real(0.1) * std::max(std::abs(slope_right), std::abs(slope_left)))) {
      ++report.excluded;
      continue;
    }
    const Real numeric = (fp - fm) / (2 * h);
    report.max_rel_error = std::max(report.max_rel_error, relative_error(analytic[i], numeric));
    ++report.checked;
  }
  report.pass = report.max_rel_error < opt.tolerance;
  return report;
}

}  // namespace

GradCheckReport grad_check(const std::string& name, const Fragment& fragment, ParameterSet params, const Tensor& input,
                           const GradCheckOptions& options) {
  GradCheckReport report{name, options.tolerance, {}};
  Evaluator ev{fragment, std::nullopt};

  Tape tape;
  Var x = tape.input(input);
  Var out = fragment(tape, x, params);
  if (tape.value(out).size() != 1) {
    Rng rng(options.seed);
    ev.projection = rng.uniform_tensor(tape.value(out).shape(), Real(-1), Real(1));
  }
  Var loss = ev.scalarize(tape, out, tape.value(out)).first;
  const Var wrt[] = {x};
  const auto grads = tape.backward(loss, wrt);

  for (const auto& pname : params.names()) {
    Tensor& values = params.at(pname);
    const auto it = grads.params.find(pname);
    const Tensor analytic = it != grads.params.end() ? it->second : Tensor(values.shape());
    report.blocks.push_back(check_block(pname, values, analytic, [&] { return ev.loss(params, input); }, options));
  }
  if (options.check_input) {
    Tensor perturbed = input;
    report.blocks.push_back(
        check_block("input", perturbed, grads.of(x), [&] { return ev.loss(params, perturbed); }, options));
  }
  return report;
}

}  // namespace l2sa

namespace l2sa {
namespace {

struct Instance {
  Fragment fragment;
  ParameterSet params;
  Tensor input;
  std::string shape;
};

std::size_t between(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.index(hi - lo + 1); }

Tensor random_input(Rng& rng, Shape shape) { return rng.uniform_tensor(shape, -1, 1); }

Instance make_instance(const std::string& module, Rng& rng) {
  const std::size_t n = between(rng, 1, 2), c = between(rng, 1, 3);
  const std::size_t h = between(rng, 3, 6), w = between(rng, 3, 6);
  const Shape nchw{n, c, h, w};
  Instance in;
  in.shape = nchw.str();

  if (module == "conv2d") {
    ops::ConvSpec spec{c, between(rng, 1, 3), between(rng, 1, 3)};
    spec.stride = between(rng, 1, 2);
    spec.padding = rng.index(2) ? ops::Padding::Same : ops::Padding::Valid;
    in.params.add("w", rng.uniform_tensor(Shape{spec.out_channels, c, spec.kernel, spec.kernel}, -0.5, 0.5));
    in.params.add("b", rng.uniform_tensor(Shape{spec.out_channels}, -0.5, 0.5));
    in.fragment = [spec](Tape& t, Var x, const ParameterSet& p) {
      return t.conv2d(x, t.param(p, "w"), t.param(p, "b"), spec);
    };
    in.input = random_input(rng, nchw);
    in.shape += " k=" + std::to_string(spec.kernel) + " s=" + std::to_string(spec.stride);
  } else if (module == "dense") {
    const std::size_t b = between(rng, 1, 3), fin = between(rng, 2, 6), fout = between(rng, 1, 4);
    in.params.add("w", rng.uniform_tensor(Shape{fin, fout}, -0.5, 0.5));
    in.params.add("b", rng.uniform_tensor(Shape{fout}, -0.5, 0.5));
    in.fragment = [](Tape& t, Var x, const ParameterSet& p) { return t.dense(x, t.param(p, "w"), t.param(p, "b")); };
    in.input = random_input(rng, Shape{b, fin});
    in.shape = in.input.shape().str() + " -> " + std::to_string(fout);
  } else if (module == "sigmoid") {
    in.fragment = [](Tape& t, Var x, const ParameterSet&) { return t.sigmoid(x); };
    in.input = rng.uniform_tensor(nchw, -4, 4);
  } else if (module == "relu") {
    in.fragment = [](Tape& t, Var x, const ParameterSet&) { return t.relu(x); };
    in.input = random_input(rng, nchw);
  } else if (module == "l2_normalize") {
    in.fragment = [](Tape& t, Var x, const ParameterSet&) { return t.l2_normalize(x); };
    in.input = random_input(rng, nchw);
  } else if (module == "channel_max" || module == "channel_min") {
    const ops::Reduce mode = module == "channel_max" ? ops::Reduce::Max : ops::Reduce::Min;
    in.fragment = [mode](Tape& t, Var x, const ParameterSet&) { return t.channel_reduce(x, mode); };
    in.input = random_input(rng, nchw);
  } else if (module == "maxpool" || module == "avgpool") {
    const std::size_t k = between(rng, 2, std::min<std::size_t>(3, std::min(h, w)));
    const ops::Pool2d pool{k, k, between(rng, 1, k), between(rng, 1, k)};
    if (module == "maxpool") {
      in.fragment = [pool](Tape& t, Var x, const ParameterSet&) { return t.maxpool2d(x, pool); };
    } else {
      in.fragment = [pool](Tape& t, Var x, const ParameterSet&) { return t.avgpool2d(x, pool); };
    }
    in.input = random_input(rng, nchw);
    in.shape += " window=" + std::to_string(k);
  } else if (module == "softmax_xent") {
    const std::size_t b = between(rng, 1, 4), classes = between(rng, 2, 5);
    std::vector<int> labels;
    for (std::size_t i = 0; i < b; ++i) labels.push_back(int(rng.index(classes)));
    in.fragment = [labels](Tape& t, Var x, const ParameterSet&) { return t.softmax_cross_entropy(x, labels); };
    in.input = rng.uniform_tensor(Shape{b, classes}, -3, 3);
    in.shape = in.input.shape().str();
  } else if (module == "l2sab" || module == "cbam_spatial") {
    const bool sab = module == "l2sab";
    const std::size_t k = 2 * between(rng, 0, 2) + 1;
    const Shape features{n, between(rng, 1, 4), h, w};
    in.params.add("w", rng.uniform_tensor(attention::weight_shape(sab ? attention::Kind::L2Sab : attention::Kind::CbamSpatial, k),
                                          -0.5, 0.5));
    in.params.add("b", rng.uniform_tensor(Shape{1}, -0.5, 0.5));
    in.fragment = [sab, k](Tape& t, Var x, const ParameterSet& p) {
      const Recorder be(t, p);
      return sab ? attention::l2_sab_forward(be, x, be.param("w"), be.param("b"), attention::L2SabConfig{k})
                 : attention::cbam_spatial_forward(be, x, be.param("w"), be.param("b"), k);
    };
    in.input = random_input(rng, features);
    in.shape = features.str() + " k=" + std::to_string(k);
  } else {
    throw Error(ErrorKind::Config, "unknown gradcheck module '" + module + "'");
  }
  return in;
}

}  // namespace

const std::vector<std::string>& gradcheck_modules() {
  static const std::vector<std::string> names{"conv2d",      "dense",   "sigmoid", "relu",         "l2_normalize",
                                              "channel_max", "channel_min", "maxpool", "avgpool", "softmax_xent",
                                              "l2sab",       "cbam_spatial"};
  return names;
}

std::vector<GradCheckReport> check_module(const std::string& module, std::size_t instances, std::uint64_t seed,
                                          const GradCheckOptions& options) {
  const auto& names = gradcheck_modules();
  const auto it = std::find(names.begin(), names.end(), module);
  if (it == names.end()) throw Error(ErrorKind::Config, "unknown gradcheck module '" + module + "'");
  Rng rng(seed * 1000003 + std::uint64_t(it - names.begin()));
  std::vector<GradCheckReport> reports;
  for (std::size_t i = 0; i < instances; ++i) {
    Instance inst = make_instance(module, rng);
    GradCheckOptions opts = options;
    opts.seed = options.seed + i;
    reports.push_back(grad_check(module + "#" + std::to_string(i) + " " + inst.shape, inst.fragment,
                                 std::move(inst.params), inst.input, opts));
  }
  return reports;
}

}  // namespace l2sa
