#include "l2sa/autodiff.hpp"

#include <cstring>

namespace l2sa {

void ParameterSet::add(const std::string& name, Tensor value) {
  if (contains(name)) throw Error(ErrorKind::Value, "duplicate parameter '" + name + "'");
  order_.push_back(name);
  values_.emplace(name, std::move(value));
}

const Tensor& ParameterSet::at(const std::string& name) const {
  auto it = values_.find(name);
  if (it == values_.end()) throw Error(ErrorKind::Value, "unknown parameter '" + name + "'");
  return it->second;
}

Tensor& ParameterSet::at(const std::string& name) {
  auto it = values_.find(name);
  if (it == values_.end()) throw Error(ErrorKind::Value, "unknown parameter '" + name + "'");
  return it->second;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : values_) n += t.size();
  return n;
}

bool ParameterSet::operator==(const ParameterSet& other) const {
  if (order_ != other.order_) return false;
  for (const auto& name : order_) {
    if (!bit_equal(at(name), other.at(name))) return false;
  }
  return true;
}

const Tensor& Tape::node_value(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.ref ? *n.ref : *n.owned;
}

const Tensor& Tape::value(Var v) const {
  if (v.id >= nodes_.size()) throw Error(ErrorKind::Value, "Tape: var out of range");
  return node_value(v.id);
}

Var Tape::push(Tensor value, std::vector<std::size_t> inputs, Backward backward) {
  Node n;
  n.owned = std::move(value);
  n.inputs = std::move(inputs);
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::input(Tensor value) { return push(std::move(value), {}, nullptr); }

Var Tape::param(const ParameterSet& params, const std::string& name) {
  Node n;
  n.ref = &params.at(name);
  n.param_name = name;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::conv2d(Var x, Var w, Var b, const ops::ConvSpec& spec) {
  Tensor out = ops::conv2d(value(x), value(w), value(b), spec);
  return push(std::move(out), {x.id, w.id, b.id}, [this, x, w, spec](const Tensor& g) {
    auto r = ops::conv2d_backward(value(x), value(w), spec, g);
    return std::vector<Tensor>{std::move(r.input), std::move(r.weights), std::move(r.bias)};
  });
}

Var Tape::maxpool2d(Var x, const ops::Pool2d& pool) {
  return push(ops::maxpool2d(value(x), pool), {x.id}, [this, x, pool](const Tensor& g) {
    return std::vector<Tensor>{ops::maxpool2d_backward(value(x), pool, g)};
  });
}

Var Tape::avgpool2d(Var x, const ops::Pool2d& pool) {
  return push(ops::avgpool2d(value(x), pool), {x.id}, [this, x, pool](const Tensor& g) {
    return std::vector<Tensor>{ops::avgpool2d_backward(value(x).shape(), pool, g)};
  });
}

Var Tape::channel_reduce(Var x, ops::Reduce mode) {
  return push(ops::channel_reduce(value(x), mode), {x.id}, [this, x, mode](const Tensor& g) {
    return std::vector<Tensor>{ops::channel_reduce_backward(value(x), mode, g)};
  });
}

Var Tape::l2_normalize(Var x, Real epsilon) {
  return push(ops::l2_normalize_per_sample(value(x), epsilon), {x.id}, [this, x, epsilon](const Tensor& g) {
    return std::vector<Tensor>{ops::l2_normalize_per_sample_backward(value(x), epsilon, g)};
  });
}

Var Tape::sigmoid(Var x) {
  const std::size_t id = nodes_.size();
  return push(ops::sigmoid(value(x)), {x.id}, [this, id](const Tensor& g) {
    return std::vector<Tensor>{ops::sigmoid_backward(node_value(id), g)};
  });
}

Var Tape::relu(Var x) {
  return push(ops::relu(value(x)), {x.id}, [this, x](const Tensor& g) {
    return std::vector<Tensor>{ops::relu_backward(value(x), g)};
  });
}

Var Tape::dense(Var x, Var w, Var b) {
  return push(ops::dense(value(x), value(w), value(b)), {x.id, w.id, b.id}, [this, x, w](const Tensor& g) {
    auto r = ops::dense_backward(value(x), value(w), g);
    return std::vector<Tensor>{std::move(r.input), std::move(r.weights), std::move(r.bias)};
  });
}

Var Tape::flatten(Var x) {
  return push(ops::flatten(value(x)), {x.id}, [this, x](const Tensor& g) {
    return std::vector<Tensor>{g.reshaped(value(x).shape())};
  });
}

Var Tape::gate(Var gate_map, Var features) {
  return push(ops::gate(value(gate_map), value(features)), {gate_map.id, features.id},
              [this, gate_map, features](const Tensor& g) {
                auto r = ops::gate_backward(value(gate_map), value(features), g);
                return std::vector<Tensor>{std::move(r.gate), std::move(r.features)};
              });
}

Var Tape::concat_channels(Var a, Var b) {
  return push(ops::concat_channels(value(a), value(b)), {a.id, b.id}, [this, a, b](const Tensor& g) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    Tensor ga(ta.shape()), gb(tb.shape());
    const std::size_t ca = ta.channels(), cb = tb.channels(), hw = ta.height() * ta.width();
    for (std::size_t n = 0; n < ta.batch(); ++n) {
      std::copy_n(g.ptr() + n * (ca + cb) * hw, ca * hw, ga.ptr() + n * ca * hw);
      std::copy_n(g.ptr() + (n * (ca + cb) + ca) * hw, cb * hw, gb.ptr() + n * cb * hw);
    }
    return std::vector<Tensor>{std::move(ga), std::move(gb)};
  });
}

Var Tape::add(Var a, Var b) {
  return push(ops::add(value(a), value(b)), {a.id, b.id}, [](const Tensor& g) { return std::vector<Tensor>{g, g}; });
}

Var Tape::sub(Var a, Var b) {
  return push(ops::sub(value(a), value(b)), {a.id, b.id},
              [](const Tensor& g) { return std::vector<Tensor>{g, ops::scale(g, Real(-1))}; });
}

Var Tape::mul(Var a, Var b) {
  return push(ops::mul(value(a), value(b)), {a.id, b.id}, [this, a, b](const Tensor& g) {
    return std::vector<Tensor>{ops::mul(g, value(b)), ops::mul(g, value(a))};
  });
}

Var Tape::scale(Var a, Real factor) {
  return push(ops::scale(value(a), factor), {a.id},
              [factor](const Tensor& g) { return std::vector<Tensor>{ops::scale(g, factor)}; });
}

Var Tape::sum(Var a) {
  return push(Tensor::scalar(ops::sum(value(a))), {a.id}, [this, a](const Tensor& g) {
    return std::vector<Tensor>{Tensor(value(a).shape(), g[0])};
  });
}

Var Tape::dot(Var a, const Tensor& weights) {
  const Tensor& ta = value(a);
  if (!(ta.shape() == weights.shape())) {
    throw ShapeError("Tape::dot", "shape", ta.shape().str() + " vs " + weights.shape().str());
  }
  Accum s = 0;
  for (std::size_t i = 0; i < ta.size(); ++i) s += Accum(ta[i]) * weights[i];
  return push(Tensor::scalar(Real(s)), {a.id},
              [weights](const Tensor& g) { return std::vector<Tensor>{ops::scale(weights, g[0])}; });
}

Var Tape::softmax_cross_entropy(Var logits, std::span<const int> labels) {
  auto r = ops::softmax_cross_entropy(value(logits), labels);
  std::vector<int> owned(labels.begin(), labels.end());
  const std::size_t id = nodes_.size();
  Var v = push(Tensor::scalar(r.loss), {logits.id}, [this, id, owned](const Tensor& g) {
    return std::vector<Tensor>{ops::softmax_cross_entropy_backward(*nodes_[id].aux, owned, g[0])};
  });
  nodes_[id].aux = std::move(r.probabilities);
  return v;
}

const Tensor& Tape::probabilities(Var loss) const {
  if (loss.id >= nodes_.size() || !nodes_[loss.id].aux) {
    throw Error(ErrorKind::Value, "Tape::probabilities: var is not a cross-entropy node");
  }
  return *nodes_[loss.id].aux;
}

Tape::Result Tape::backward(Var loss, std::span<const Var> wrt) const {
  if (loss.id >= nodes_.size()) throw Error(ErrorKind::Value, "Tape::backward: var out of range");
  if (node_value(loss.id).size() != 1) {
    throw ShapeError("Tape::backward", "loss", "loss must be scalar, got " + node_value(loss.id).shape().str());
  }
  std::vector<bool> keep(nodes_.size(), false);
  for (Var v : wrt) keep.at(v.id) = true;

  std::vector<std::optional<Tensor>> grads(nodes_.size());
  grads[loss.id] = Tensor(node_value(loss.id).shape(), Real(1));
  Result result;

  for (std::size_t i = loss.id + 1; i-- > 0;) {
    if (!grads[i]) continue;
    const Node& node = nodes_[i];
    if (!node.param_name.empty()) {
      auto [it, inserted] = result.params.try_emplace(node.param_name, *grads[i]);
      if (!inserted) it->second = ops::add(it->second, *grads[i]);
    }
    if (node.backward) {
      std::vector<Tensor> in_grads = node.backward(*grads[i]);
      for (std::size_t k = 0; k < node.inputs.size(); ++k) {
        auto& slot = grads[node.inputs[k]];
        if (slot) {
          slot = ops::add(*slot, in_grads[k]);
        } else {
          slot = std::move(in_grads[k]);
        }
      }
    }
    if (keep[i]) {
      result.vars.emplace(i, std::move(*grads[i]));
    }
    grads[i].reset();
  }
  for (const Var v : wrt) {
    if (!result.vars.count(v.id)) result.vars.emplace(v.id, Tensor(node_value(v.id).shape()));
  }
  for (const auto& node : nodes_) {
    if (!node.param_name.empty() && !result.params.count(node.param_name)) {
      result.params.emplace(node.param_name, Tensor(node.ref->shape()));
    }
  }
  return result;
}

}  // namespace l2sa
