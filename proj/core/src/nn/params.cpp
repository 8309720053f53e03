#include "lap/nn/params.hpp"

#include <cmath>

#include "lap/errors.hpp"
#include "lap/tensor/ops.hpp"

namespace lap::nn {

std::string group_of(const std::string& name) { return name.substr(0, name.find('.')); }

void ParamStore::add(const std::string& name, Tensor value) {
  if (!tensors_.emplace(name, std::move(value)).second) throw ContractError("parameter registered twice: " + name);
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ContractError("unknown parameter: " + name);
  return it->second;
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ContractError("unknown parameter: " + name);
  return it->second;
}

std::set<std::string> ParamStore::groups() const {
  std::set<std::string> out;
  for (const auto& [name, _] : tensors_) out.insert(group_of(name));
  return out;
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : tensors_) n += t.numel();
  return n;
}

Binding::Binding(Tape& tape, const ParamStore& store, const std::set<std::string>& trainable) : tape_(&tape) {
  for (const auto& [name, value] : store.tensors()) {
    if (trainable.count(group_of(name))) {
      Var v = tape.leaf(value);
      vars_.emplace(name, v);
      leaves_.emplace(name, v);
    } else {
      vars_.emplace(name, tape.constant(value));
    }
  }
}

Var Binding::operator()(const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw ContractError("unbound parameter: " + name);
  return it->second;
}

void Binding::rebind(const std::string& name, const Var& value) {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw ContractError("unbound parameter: " + name);
  if (it->second.shape() != value.shape()) {
    throw ShapeError("rebind " + name + ": " + shape_str(value.shape()) + " vs " + shape_str(it->second.shape()));
  }
  it->second = value;
  leaves_.erase(name);
}

TensorMap Binding::gradients(const Gradients& grads) const {
  TensorMap out;
  for (const auto& [name, v] : leaves_) {
    out.emplace(name, grads.has(v) ? grads.at(v) : Tensor(v.shape()));
  }
  return out;
}

Tensor Initializer::uniform(const Shape& shape, int fan_in) {
  const double bound = std::sqrt(1.0 / fan_in);
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(shape);
  for (double& v : t.data()) v = dist(rng_);
  return t;
}

void add_conv(ParamStore& store, Initializer& init, const std::string& name, int in, int out, int kernel, bool zero) {
  const Shape ws{out, in, kernel, kernel};
  const int fan_in = in * kernel * kernel;
  store.add(name + ".weight", zero ? Tensor(ws) : init.uniform(ws, fan_in));
  store.add(name + ".bias", zero ? Tensor({out}) : init.uniform({out}, fan_in));
}

void add_linear(ParamStore& store, Initializer& init, const std::string& name, int in, int out, bool zero) {
  store.add(name + ".weight", zero ? Tensor({in, out}) : init.uniform({in, out}, in));
  store.add(name + ".bias", zero ? Tensor({1, out}) : init.uniform({1, out}, in));
}

Var conv(const Binding& p, const std::string& name, const Var& x, int stride, int pad) {
  return ops::conv2d(x, p(name + ".weight"), p(name + ".bias"), stride, pad);
}

Var linear(const Binding& p, const std::string& name, const Var& x) {
  return ops::add(ops::matmul(x, p(name + ".weight")), p(name + ".bias"));
}

}  // namespace lap::nn
