#include "dram/tape.hpp"

#include <stdexcept>

namespace dram {

std::size_t ParamSet::add(std::string name, Tensor value) {
  if (lookup_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  lookup_.emplace(name, values_.size());
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
  return values_.size() - 1;
}

std::size_t ParamSet::index(const std::string& name) const {
  auto it = lookup_.find(name);
  if (it == lookup_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

std::size_t ParamSet::element_count() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

ParamSet ParamSet::zeros_like() const {
  ParamSet out;
  for (std::size_t i = 0; i < size(); ++i) out.add(names_[i], Tensor(values_[i].shape()));
  return out;
}

const Tensor& Var::value() const { return tape->value(id); }

Var Tape::constant(Tensor v) {
  Node n;
  n.value = std::move(v);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::variable(Tensor v) {
  Node n;
  n.value = std::move(v);
  n.needs_grad = recording_;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::param(const ParamSet& params, std::size_t idx) {
  if (bound_params_ && bound_params_ != &params)
    throw std::logic_error("a tape can bind only one parameter set");
  bound_params_ = &params;
  if (auto it = param_nodes_.find(idx); it != param_nodes_.end()) return {this, it->second};
  Node n;
  n.external = &params[idx];
  n.needs_grad = recording_;
  nodes_.push_back(std::move(n));
  param_nodes_.emplace(idx, nodes_.size() - 1);
  return {this, nodes_.size() - 1};
}

Var Tape::push(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
  require_finite(value, "op output");
  Node n;
  n.value = std::move(value);
  if (recording_) {
    for (const Var& in : inputs) {
      if (in.tape != this) throw std::logic_error("op input recorded on a different tape");
      n.inputs.push_back(in.id);
      n.needs_grad = n.needs_grad || nodes_[in.id].needs_grad;
    }
    if (n.needs_grad) n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

const Tensor& Tape::value(std::size_t id) const {
  const Node& n = nodes_.at(id);
  return n.external ? *n.external : n.value;
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor(value(id).shape());
  return n.grad;
}

void Tape::accumulate(std::size_t id, const Tensor& g) {
  if (!nodes_[id].needs_grad) return;
  Tensor& buf = grad_buffer(id);
  if (buf.size() != g.size()) throw DimensionError("gradient shape mismatch");
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

void Tape::backward(Var seed) {
  if (!recording_) throw std::logic_error("backward on a non-recording tape");
  if (consumed_) throw std::logic_error("tape already consumed");
  if (seed.tape != this) throw std::logic_error("seed belongs to another tape");
  if (value(seed.id).size() != 1) throw DimensionError("backward seed must be a scalar");
  consumed_ = true;
  grad_buffer(seed.id)[0] = 1;
  for (std::size_t i = seed.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.empty()) continue;
    n.backward(*this, n.grad);
    n.backward = nullptr;
  }
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  return n.grad.empty() ? Tensor(value(v.id).shape()) : n.grad;
}

ParamSet Tape::param_grads(const ParamSet& params) const {
  ParamSet out = params.zeros_like();
  if (bound_params_ != &params) return out;
  for (auto [idx, node] : param_nodes_)
    if (!nodes_[node].grad.empty()) out[idx] = nodes_[node].grad;
  return out;
}

}  // namespace dram
