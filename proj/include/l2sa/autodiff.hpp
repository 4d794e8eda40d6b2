#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "l2sa/ops.hpp"
#include "l2sa/tensor.hpp"

namespace l2sa {

// Named trainable tensors, kept in registration order.
class ParameterSet {
 public:
  void add(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return values_.count(name) != 0; }
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
  const std::vector<std::string>& names() const noexcept { return order_; }
  std::size_t size() const noexcept { return order_.size(); }
  std::size_t scalar_count() const;

  bool operator==(const ParameterSet& other) const;  // bit-exact

 private:
  std::vector<std::string> order_;
  std::map<std::string, Tensor> values_;
};

using Gradients = std::map<std::string, Tensor>;

// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = 0;
};

// Define-by-run reverse-mode tape. Every op evaluates eagerly and records a
// closure producing its input gradients. Parameters are referenced, not
// copied: the ParameterSet must outlive the tape and stay unchanged while it
// is in use.
class Tape {
 public:
  Var input(Tensor value);
  Var param(const ParameterSet& params, const std::string& name);
  const Tensor& value(Var v) const;
  std::size_t size() const noexcept { return nodes_.size(); }

  Var conv2d(Var x, Var w, Var b, const ops::ConvSpec& spec);
  Var maxpool2d(Var x, const ops::Pool2d& pool);
  Var avgpool2d(Var x, const ops::Pool2d& pool);
  Var channel_reduce(Var x, ops::Reduce mode);
  Var l2_normalize(Var x, Real epsilon = ops::kL2Epsilon);
  Var sigmoid(Var x);
  Var relu(Var x);
  Var dense(Var x, Var w, Var b);
  Var flatten(Var x);
  Var gate(Var gate_map, Var features);
  Var concat_channels(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, Real factor);
  Var sum(Var a);
  // Scalar <a, weights> for a constant tensor of the same shape.
  Var dot(Var a, const Tensor& weights);
  // Mean cross-entropy; the softmax probabilities are kept for probabilities().
  Var softmax_cross_entropy(Var logits, std::span<const int> labels);
  const Tensor& probabilities(Var loss) const;

  struct Result {
    Gradients params;                   // one entry per registered parameter
    std::map<std::size_t, Tensor> vars;  // gradients of the requested vars
    const Tensor& of(Var v) const { return vars.at(v.id); }
  };

  // Gradients of the scalar `loss`. The tape itself is not modified, so
  // repeated calls return identical results.
  Result backward(Var loss, std::span<const Var> wrt = {}) const;

 private:
  using Backward = std::function<std::vector<Tensor>(const Tensor& grad_out)>;
  struct Node {
    std::optional<Tensor> owned;
    const Tensor* ref = nullptr;
    std::vector<std::size_t> inputs;
    Backward backward;
    std::string param_name;
    std::optional<Tensor> aux;
  };

  const Tensor& node_value(std::size_t id) const;
  Var push(Tensor value, std::vector<std::size_t> inputs, Backward backward);

  std::vector<Node> nodes_;
};

// Tape-free evaluation with the same op names as Tape, so graph code can be
// written once for both.
class Eager {
 public:
  using Value = Tensor;
  explicit Eager(const ParameterSet& params) : params_(&params) {}

  const Tensor& param(const std::string& name) const { return params_->at(name); }
  Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, const ops::ConvSpec& s) const { return ops::conv2d(x, w, b, s); }
  Tensor maxpool2d(const Tensor& x, const ops::Pool2d& p) const { return ops::maxpool2d(x, p); }
  Tensor avgpool2d(const Tensor& x, const ops::Pool2d& p) const { return ops::avgpool2d(x, p); }
  Tensor channel_reduce(const Tensor& x, ops::Reduce m) const { return ops::channel_reduce(x, m); }
  Tensor l2_normalize(const Tensor& x, Real eps = ops::kL2Epsilon) const { return ops::l2_normalize_per_sample(x, eps); }
  Tensor sigmoid(const Tensor& x) const { return ops::sigmoid(x); }
  Tensor relu(const Tensor& x) const { return ops::relu(x); }
  Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b) const { return ops::dense(x, w, b); }
  Tensor flatten(const Tensor& x) const { return ops::flatten(x); }
  Tensor gate(const Tensor& g, const Tensor& f) const { return ops::gate(g, f); }
  Tensor concat_channels(const Tensor& a, const Tensor& b) const { return ops::concat_channels(a, b); }
  Tensor mul(const Tensor& a, const Tensor& b) const { return ops::mul(a, b); }
  Tensor sub(const Tensor& a, const Tensor& b) const { return ops::sub(a, b); }
  const Tensor& value(const Tensor& v) const { return v; }

 private:
  const ParameterSet* params_;
};

// Binds Tape to a ParameterSet so it exposes the same param(name) call as Eager.
class Recorder {
 public:
  using Value = Var;
  Recorder(Tape& tape, const ParameterSet& params) : tape_(&tape), params_(&params) {}

  Var param(const std::string& name) const { return tape_->param(*params_, name); }
  Var conv2d(Var x, Var w, Var b, const ops::ConvSpec& s) const { return tape_->conv2d(x, w, b, s); }
  Var maxpool2d(Var x, const ops::Pool2d& p) const { return tape_->maxpool2d(x, p); }
  Var avgpool2d(Var x, const ops::Pool2d& p) const { return tape_->avgpool2d(x, p); }
  Var channel_reduce(Var x, ops::Reduce m) const { return tape_->channel_reduce(x, m); }
  Var l2_normalize(Var x, Real eps = ops::kL2Epsilon) const { return tape_->l2_normalize(x, eps); }
  Var sigmoid(Var x) const { return tape_->sigmoid(x); }
  Var relu(Var x) const { return tape_->relu(x); }
  Var dense(Var x, Var w, Var b) const { return tape_->dense(x, w, b); }
  Var flatten(Var x) const { return tape_->flatten(x); }
  Var gate(Var g, Var f) const { return tape_->gate(g, f); }
  Var concat_channels(Var a, Var b) const { return tape_->concat_channels(a, b); }
  Var mul(Var a, Var b) const { return tape_->mul(a, b); }
  Var sub(Var a, Var b) const { return tape_->sub(a, b); }
  const Tensor& value(Var v) const { return tape_->value(v); }
  Tape& tape() const { return *tape_; }

 private:
  Tape* tape_;
  const ParameterSet* params_;
};

}  // namespace l2sa
