// SPDX-License-Identifier: Apache-2.0
//
// Define-by-run reverse-mode differentiation. A Tape owns every value
// produced during one forward pass; Var is a cheap handle into it. Nodes are
// appended in execution order, so the tape is topologically sorted by
// construction and backward() is a single reverse sweep.
//
// A tape is confined to one thread. Parameters may be shared read-only by
// several tapes; their gradients are written only by backward().

#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "filmhred/tensor.hpp"

namespace fh {

/// Trainable tensor with an accumulated gradient of the same shape.
class Parameter {
 public:
  Parameter(std::string name, Tensor value);

  const std::string& name() const { return name_; }
  Tensor& value() { return value_; }
  const Tensor& value() const { return value_; }
  Tensor& grad() { return grad_; }
  const Tensor& grad() const { return grad_; }
  void zero_grad() { grad_.fill(0.0); }

 private:
  std::string name_;
  Tensor value_;
  Tensor grad_;
};

/// Named parameters in insertion order with stable addresses.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  ParameterStore(ParameterStore&&) = default;
  ParameterStore& operator=(ParameterStore&&) = default;

  Parameter& add(std::string name, Tensor init);
  Parameter* find(std::string_view name);
  const Parameter* find(std::string_view name) const;
  Parameter& at(std::string_view name);

  std::size_t size() const { return params_.size(); }
  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;

  /// Total scalar count of parameters whose name starts with prefix.
  std::size_t scalar_count(std::string_view prefix = {}) const;
  void zero_grad();

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, Parameter*> index_;
};

class Tape;

/// Handle to a node on a tape. Valid only while its tape lives.
class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  /// Called during backward with the node's id. Implementations read the
  /// output gradient via out_grad() and add into grad_slot() of inputs.
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Tensor value);
  /// Differentiable leaf; its gradient is readable via grad() after backward.
  Var leaf(Tensor value);
  /// Leaf bound to a parameter. Memoised: one node per parameter per tape.
  Var param(Parameter& p);

  /// Reverse sweep from a scalar loss. Parameter gradients are accumulated
  /// (added) into Parameter::grad(). May be called once per tape.
  void backward(const Var& loss);

  /// Gradient of a node after backward (zeros if it received none).
  Tensor grad(const Var& v) const;

  // ---- primitive authoring ----
  Var record(std::string_view op, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record(std::string_view op, Tensor value, std::span<const Var> inputs, BackwardFn fn);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& out_grad(std::size_t id) const { return nodes_[id].grad; }
  std::size_t input_id(std::size_t id, std::size_t k) const { return nodes_[id].inputs[k]; }
  std::size_t input_count(std::size_t id) const { return nodes_[id].inputs.size(); }
  /// Primitive name of node `id`; empty for constants and leaves.
  const std::string& op(std::size_t id) const { return nodes_[id].op; }
  bool needs_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  /// Gradient buffer of node `id`'s k-th input, or nullptr when that input
  /// does not require a gradient.
  Tensor* grad_slot(std::size_t id, std::size_t k);

 private:
  friend class Var;

  struct Node {
    Tensor value;
    Tensor grad;
    std::string op;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  Var push(Node node);

  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
  bool grad_enabled_;
  bool backward_done_ = false;
};

// ---------------------------------------------------------------------------
// Primitives. Every function checks operand shapes and throws ShapeError
// naming the primitive and the offending shapes.

/// Matrix product. Rank-1 lhs is a row vector, rank-1 rhs a column vector;
/// the corresponding output axis is dropped.
Var matmul(const Var& a, const Var& b);
/// a · bᵀ for rank-2 b.
Var matmul_nt(const Var& a, const Var& b);
/// x·Wᵀ + b for x of shape [in] or [T, in], W [out, in], b [out] (optional).
Var linear(const Var& x, const Var& weight, const Var& bias = {});

/// Elementwise with row broadcasting: b may be [cols] when a is [rows, cols].
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);

Var concat(std::span<const Var> parts, std::size_t axis = 0);
Var concat(std::initializer_list<Var> parts, std::size_t axis = 0);
/// Stacks equally sized rank-1 vectors into a [n, d] matrix.
Var stack(std::span<const Var> rows);
/// Copies [begin, end) along axis.
Var slice(const Var& a, std::size_t axis, std::size_t begin, std::size_t end);
/// Row r of a rank-2 tensor as a rank-1 vector.
Var row(const Var& a, std::size_t r);
Var reshape(const Var& a, Shape shape);
Var transpose(const Var& a);

Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var relu(const Var& a);
/// Row-wise over the last axis.
Var softmax(const Var& a);
Var log_softmax(const Var& a);

/// Rows of table [V, E] for ids; output [ids.size(), E].
Var embedding_gather(const Var& table, std::span<const int> ids);
/// Single row of table as rank-1 [E].
Var embedding_row(const Var& table, int id);

Var reduce_sum(const Var& a);
Var reduce_mean(const Var& a);
/// Element `index` of the flattened tensor, as a scalar.
Var select(const Var& a, std::size_t index);

/// LSTM cell state: c = σ(f)⊙c_prev + σ(i)⊙tanh(g) for gate pre-activations
/// z = [i; f; g; o] of length 4H.
Var lstm_cell_state(const Var& gates, const Var& c_prev);
/// LSTM output: h = σ(o)⊙tanh(c).
Var lstm_cell_output(const Var& gates, const Var& c);

}  // namespace fh
