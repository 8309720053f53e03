#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "lap/nn/networks.hpp"

namespace lap::train {

/// Every knob of training and inference. Text form is one "key = value" per
/// line; '#' starts a comment; unknown keys are a ContractError.
struct TrainConfig {
  nn::NetConfig net;
  double fov = 10.0;
  double tau = 0.01;
  int batch_size = 8;
  double learning_rate = 1e-4;
  double lambda_flip = 0.5;
  double min_face_fraction = 0.10;
  std::uint64_t seed = 1;
  int epochs_a = 20;
  int epochs_b = 20;
  int epochs_c = 10;
  /// Epoch from which stage A draws wild-tier identities (when wild data is given).
  int wild_start_a = 15;
  /// Identities whose name hash is divisible by this form the validation split.
  int val_modulus = 10;
  /// Worker threads for per-identity forward/backward (0 = LAP_THREADS or hardware).
  int threads = 0;

  /// Applies one key/value pair; throws ContractError for unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  void validate() const;
  /// Canonical key = value dump of every result-affecting key (threads is
  /// omitted), fixed order.
  std::string dump() const;
  /// FNV-1a of dump(), as 16 hex digits.
  std::string hash() const;

  static TrainConfig parse(const std::string& text);
  static TrainConfig load(const std::filesystem::path& path);
};

/// Worker count: explicit value, else LAP_THREADS, else hardware concurrency.
int resolve_threads(int requested);

/// FNV-1a 64-bit hash.
std::uint64_t fnv1a(const std::string& text);

}  // namespace lap::train
