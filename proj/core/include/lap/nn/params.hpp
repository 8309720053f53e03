#pragma once

#include <cstdint>
#include <random>
#include <set>
#include <string>

#include "lap/tensor/checkpoint.hpp"
#include "lap/tensor/tape.hpp"

namespace lap::nn {

/// Group of a parameter name: the component before the first '.'.
std::string group_of(const std::string& name);

/// Named weights in name order. Groups ("delta_a", "pose", ...) are the unit
/// of freezing.
class ParamStore {
 public:
  ParamStore() = default;
  explicit ParamStore(TensorMap tensors) : tensors_(std::move(tensors)) {}

  void add(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
  const TensorMap& tensors() const { return tensors_; }
  TensorMap& tensors() { return tensors_; }
  std::set<std::string> groups() const;
  std::size_t parameter_count() const;

 private:
  TensorMap tensors_;
};

/// Parameters placed on a tape: trainable groups as leaves, the rest as
/// constants.
class Binding {
 public:
  /// An empty trainable set binds everything as constants.
  Binding(Tape& tape, const ParamStore& store, const std::set<std::string>& trainable = {});

  Tape& tape() const { return *tape_; }
  Var operator()(const std::string& name) const;
  /// Routes a parameter through a caller-provided value (e.g. a probed input).
  void rebind(const std::string& name, const Var& value);
  /// Bound leaves, by name.
  const std::map<std::string, Var>& leaves() const { return leaves_; }
  /// Collects the gradients of every bound leaf.
  TensorMap gradients(const Gradients& grads) const;

 private:
  Tape* tape_;
  std::map<std::string, Var> vars_;
  std::map<std::string, Var> leaves_;
};

/// Deterministic weight initializer: uniform in +-sqrt(1/fan_in).
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}
  Tensor uniform(const Shape& shape, int fan_in);

 private:
  std::mt19937_64 rng_;
};

// Layer helpers. Parameters are "<name>.weight" and "<name>.bias".
void add_conv(ParamStore& store, Initializer& init, const std::string& name, int in, int out, int kernel,
              bool zero = false);
void add_linear(ParamStore& store, Initializer& init, const std::string& name, int in, int out, bool zero = false);

/// x [N,C,H,W] -> [N,O,H',W'].
Var conv(const Binding& p, const std::string& name, const Var& x, int stride, int pad);
/// x [N,in] -> [N,out].
Var linear(const Binding& p, const std::string& name, const Var& x);

}  // namespace lap::nn
