#include "lap/tensor/tape.hpp"

#include <string>

#include "lap/errors.hpp"

namespace lap {

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

bool Gradients::has(const Var& v) const {
  auto i = static_cast<std::size_t>(v.id());
  return v.id() >= 0 && i < grads_.size() && grads_[i].has_value();
}

const Tensor& Gradients::at(const Var& v) const { return at(v.id()); }

const Tensor& Gradients::at(NodeId id) const {
  auto i = static_cast<std::size_t>(id);
  if (id < 0 || i >= grads_.size() || !grads_[i].has_value()) {
    throw AbsentGradientError("no gradient for node " + std::to_string(id) +
                              " (detached or unreachable from the loss)");
  }
  return *grads_[i];
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, nullptr, false});
  return Var(this, static_cast<NodeId>(nodes_.size() - 1));
}

Var Tape::leaf(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, nullptr, true});
  return Var(this, static_cast<NodeId>(nodes_.size() - 1));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  Node node{std::move(value), {}, nullptr, false};
  node.inputs.reserve(inputs.size());
  for (const Var& in : inputs) {
    if (&in.tape() != this) throw ContractError("primitive inputs live on different tapes");
    node.inputs.push_back(in.id());
    node.requires_grad = node.requires_grad || requires_grad(in.id());
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<NodeId>(nodes_.size() - 1));
}

Gradients Tape::backward(const Var& loss) const {
  if (&loss.tape() != this) throw ContractError("loss is not on this tape");
  if (loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  std::vector<std::optional<Tensor>> grads(nodes_.size());
  const auto root = static_cast<std::size_t>(loss.id());
  grads[root] = Tensor(loss.shape(), 1.0);

  std::vector<Tensor*> slots;
  for (std::size_t k = root + 1; k-- > 0;) {
    const Node& node = nodes_[k];
    if (!grads[k] || !node.backward) continue;
    slots.assign(node.inputs.size(), nullptr);
    for (std::size_t j = 0; j < node.inputs.size(); ++j) {
      const auto in = static_cast<std::size_t>(node.inputs[j]);
      if (!nodes_[in].requires_grad) continue;
      if (!grads[in]) grads[in] = Tensor(nodes_[in].value.shape(), 0.0);
      slots[j] = &*grads[in];
    }
    node.backward(*grads[k], slots);
    // Interior gradients are no longer needed once propagated.
    if (!node.inputs.empty()) grads[k].reset();
  }
  grads[root] = Tensor(loss.shape(), 1.0);
  return Gradients(std::move(grads));
}

}  // namespace lap
