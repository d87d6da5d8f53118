#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <unordered_map>
#include <deque>
#include <vector>

#include "dram/tensor.hpp"

namespace dram {

/// Ordered set of named weight tensors.
class ParamSet {
 public:
  std::size_t add(std::string name, Tensor value);

  std::size_t size() const { return values_.size(); }
  Tensor& operator[](std::size_t i) { return values_[i]; }
  const Tensor& operator[](std::size_t i) const { return values_[i]; }
  const std::string& name(std::size_t i) const { return names_[i]; }
  /// Index of `name`; throws std::out_of_range if absent.
  std::size_t index(const std::string& name) const;
  bool contains(const std::string& name) const { return lookup_.count(name) != 0; }
  Tensor& at(const std::string& name) { return values_[index(name)]; }
  const Tensor& at(const std::string& name) const { return values_[index(name)]; }

  /// Total number of scalar weights.
  std::size_t element_count() const;
  /// Same names and shapes, all zeros.
  ParamSet zeros_like() const;

  bool operator==(const ParamSet& o) const { return names_ == o.names_ && values_ == o.values_; }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::unordered_map<std::string, std::size_t> lookup_;
};

class Tape;

/// Handle to a value recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Reverse-mode recording. Nodes are appended in execution order, so every
/// node's inputs precede it; backward() walks the list once in reverse.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor& out_grad)>;

  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }

  /// Leaf that never receives a gradient.
  Var constant(Tensor v);
  /// Leaf that receives a gradient.
  Var variable(Tensor v);
  /// Leaf bound to params[idx] without copying; repeated calls return the same
  /// node so shared weights accumulate into one gradient.
  Var param(const ParamSet& params, std::size_t idx);
  Var param(const ParamSet& params, const std::string& name) { return param(params, params.index(name)); }

  /// Appends an op result. The backward closure is dropped when not recording
  /// or when no input needs a gradient.
  Var push(Tensor value, std::initializer_list<Var> inputs, Backward backward);

  const Tensor& value(std::size_t id) const;
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  /// Gradient buffer of node `id`, zero-allocated on first touch.
  Tensor& grad_buffer(std::size_t id);
  /// Adds g into the gradient of `id` if it needs one.
  void accumulate(std::size_t id, const Tensor& g);

  /// Reverse sweep from a scalar seed. A tape can be swept once.
  void backward(Var seed);
  bool consumed() const { return consumed_; }

  /// Gradient of a recorded node after backward(); zeros if never reached.
  Tensor grad(Var v) const;
  /// Gradients for every entry of `params`; unused entries are zero tensors.
  ParamSet param_grads(const ParamSet& params) const;

  std::size_t size() const { return nodes_.size(); }
  /// Id the next pushed node will get; lets a closure refer to its own output.
  std::size_t next_id() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;
    Tensor grad;
    bool needs_grad = false;
    std::vector<std::size_t> inputs;
    Backward backward;
  };

  bool recording_;
  bool consumed_ = false;
  std::deque<Node> nodes_;  // stable references across push
  const ParamSet* bound_params_ = nullptr;
  std::unordered_map<std::size_t, std::size_t> param_nodes_;
};

}  // namespace dram
