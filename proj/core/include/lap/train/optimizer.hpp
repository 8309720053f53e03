#pragma once

#include <cstdint>

#include "lap/tensor/checkpoint.hpp"

namespace lap::train {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam over a named weight set. Moments are created lazily
/// per weight and shaped like it.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  /// Updates every weight named in grads; weights without a gradient are left
  /// untouched. Throws ContractError on unknown names or shape mismatches.
  void step(TensorMap& weights, const TensorMap& grads);

  const AdamConfig& config() const { return config_; }
  void set_lr(double lr) { config_.lr = lr; }
  std::int64_t steps() const { return steps_; }

  /// Moments and step count as named tensors ("m/<name>", "v/<name>", "step").
  TensorMap state() const;
  void load_state(const TensorMap& state);

 private:
  AdamConfig config_;
  std::int64_t steps_ = 0;
  TensorMap m_;
  TensorMap v_;
};

}  // namespace lap::train
