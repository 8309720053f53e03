#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "lap/tensor/tensor.hpp"

namespace lap {

using NodeId = std::int32_t;

class Tape;

/// Handle to a value recorded on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, NodeId id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  int dim(int axis) const { return value().dim(axis); }
  std::size_t numel() const { return value().numel(); }
  NodeId id() const { return id_; }
  Tape& tape() const { return *tape_; }
  bool valid() const { return tape_ != nullptr; }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  NodeId id_ = -1;
};

/// Accumulates into the gradient of each input; entries are null for inputs
/// that do not require a gradient.
using BackwardFn = std::function<void(const Tensor& grad_out, std::span<Tensor* const> grad_in)>;

class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(std::vector<std::optional<Tensor>> grads) : grads_(std::move(grads)) {}

  bool has(const Var& v) const;
  const Tensor& at(const Var& v) const;
  const Tensor& at(NodeId id) const;

 private:
  std::vector<std::optional<Tensor>> grads_;
};

/// Define-by-run record of differentiable operations. Not thread-safe; one
/// tape per execution context.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Value that never receives a gradient.
  Var constant(Tensor value);
  /// Value the caller wants a gradient for.
  Var leaf(Tensor value);
  /// Output of a primitive. Inputs must already be on this tape.
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn backward);
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                  std::move(backward));
  }

  const Tensor& value(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  std::size_t size() const { return nodes_.size(); }
  /// Id the next recorded node will receive.
  NodeId next_id() const { return static_cast<NodeId>(nodes_.size()); }

  /// Reverse sweep from a scalar. Fan-out is accumulated by summation in fixed
  /// reverse-topological order.
  Gradients backward(const Var& loss) const;

 private:
  struct Node {
    Tensor value;
    std::vector<NodeId> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };
  std::deque<Node> nodes_;  // stable element addresses across appends
};

}  // namespace lap
