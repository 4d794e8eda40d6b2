#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "l2sa/autodiff.hpp"

namespace l2sa {

struct GradCheckOptions {
  Real step = Real(1e-5);
  Real tolerance = Real(1e-4);
  std::uint64_t seed = 7;
  bool check_input = true;
};

// Result for one parameter tensor (or the fragment input).
struct BlockReport {
  std::string name;
  std::size_t checked = 0;
  std::size_t excluded = 0;  // kink points: one-sided slopes disagree
  Real max_rel_error = 0;
  bool pass = true;
};

struct GradCheckReport {
  std::string name;
  Real tolerance = 0;
  std::vector<BlockReport> blocks;

  bool passed() const;
  std::size_t excluded() const;
  Real max_rel_error() const;
  std::string table() const;
  std::string key_values() const;
};

// Maps a recorded input to an output of any shape. The checked loss is the
// output projected onto a fixed random tensor, or the output itself when it
// is already a scalar.
using Fragment = std::function<Var(Tape& tape, Var input, const ParameterSet& params)>;

// |a - n| / max(|a|, |n|, 1e-8)
Real relative_error(Real analytic, Real numeric);

// Central finite differences over every parameter scalar and, optionally,
// every input scalar. Requires a 64-bit build for meaningful tolerances.
GradCheckReport grad_check(const std::string& name, const Fragment& fragment, ParameterSet params, const Tensor& input,
                           const GradCheckOptions& options = {});

// Names accepted by check_module: conv2d, dense, sigmoid, relu, l2_normalize,
// channel_max, channel_min, maxpool, avgpool, softmax_xent, l2sab, cbam_spatial.
const std::vector<std::string>& gradcheck_modules();

// `instances` checks of one operation on random small shapes drawn from `seed`.
std::vector<GradCheckReport> check_module(const std::string& module, std::size_t instances, std::uint64_t seed,
                                          const GradCheckOptions& options = {});

}  // namespace l2sa
