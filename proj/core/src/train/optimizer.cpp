#include "lap/train/optimizer.hpp"

#include <cmath>

#include "lap/errors.hpp"

namespace lap::train {

void Adam::step(TensorMap& weights, const TensorMap& grads) {
  for (const auto& [name, g] : grads) {
    auto it = weights.find(name);
    if (it == weights.end()) throw ContractError("adam: gradient for unknown weight " + name);
    if (it->second.shape() != g.shape()) {
      throw ContractError("adam: gradient " + shape_str(g.shape()) + " does not match weight " + name + " " +
                          shape_str(it->second.shape()));
    }
  }
  ++steps_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  for (const auto& [name, g] : grads) {
    Tensor& w = weights.at(name);
    Tensor& m = m_.try_emplace(name, g.shape()).first->second;
    Tensor& v = v_.try_emplace(name, g.shape()).first->second;
    for (std::size_t i = 0; i < g.numel(); ++i) {
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
      w[i] -= config_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.eps);
    }
  }
}

TensorMap Adam::state() const {
  TensorMap out;
  for (const auto& [name, t] : m_) out.emplace("m/" + name, t);
  for (const auto& [name, t] : v_) out.emplace("v/" + name, t);
  out.emplace("step", Tensor::scalar(static_cast<double>(steps_)));
  return out;
}

void Adam::load_state(const TensorMap& state) {
  m_.clear();
  v_.clear();
  steps_ = 0;
  for (const auto& [key, t] : state) {
    if (key == "step") {
      steps_ = static_cast<std::int64_t>(t.item());
    } else if (key.starts_with("m/")) {
      m_.emplace(key.substr(2), t);
    } else if (key.starts_with("v/")) {
      v_.emplace(key.substr(2), t);
    } else {
      throw ContractError("adam: unexpected state entry " + key);
    }
  }
}

}  // namespace lap::train
