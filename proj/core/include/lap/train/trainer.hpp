#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "lap/nn/params.hpp"
#include "lap/objectives/losses.hpp"
#include "lap/synth/synth.hpp"
#include "lap/train/config.hpp"
#include "lap/train/model.hpp"

namespace lap::train {

struct StagePlan {
  Stage stage = Stage::A;
  int epochs = 0;
  objectives::LossKind loss = objectives::LossKind::RelaxedConsistency;
  std::set<std::string> trainable;
  /// Stage A switches from easy to wild identities at this epoch (if any are loaded).
  int wild_start = 0;
  bool refine = false;
};

StagePlan plan_for(Stage stage, const TrainConfig& cfg);

/// One identity held in memory.
struct Sample {
  std::string name;
  Tensor images;  ///< [V,3,S,S]
  std::vector<objectives::RelaxedMask> masks;
  bool validation = false;
};

struct TrainData {
  std::vector<Sample> easy;
  std::vector<Sample> wild;
};

/// Seed-stable validation split by hash of the identity name.
bool is_validation(const std::string& identity, int modulus);

Sample load_sample(const synth::Manifest& m, int modulus);
/// Either root may be empty. Image sizes must match the configuration.
TrainData load_training_data(const std::filesystem::path& easy_root, const std::filesystem::path& wild_root,
                             const TrainConfig& cfg);

struct EpochMetrics {
  Stage stage = Stage::A;
  int epoch = 0;  ///< 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  int rejected = 0;         ///< identities whose views were all rejected
  int skipped_batches = 0;  ///< batches with nothing left after rejection
};

struct TrainOptions {
  std::filesystem::path out_dir;
  bool resume = false;
  /// Called after every epoch's checkpoint is written.
  std::function<void(const EpochMetrics&)> on_epoch;
};

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, Stage stage);
std::filesystem::path sidecar_path(const std::filesystem::path& dir, Stage stage);

/// Loads a stage checkpoint and checks it against the configured architecture.
/// Throws StagingError when missing or incompatible.
nn::ParamStore load_checkpoint(const std::filesystem::path& dir, Stage stage, const TrainConfig& cfg);
nn::ParamStore load_checkpoint_file(const std::filesystem::path& file, const TrainConfig& cfg);

/// Mean validation objective over the validation identities of the stage's
/// data, each with a set draw that depends only on the seed and identity.
double validation_loss(const nn::ParamStore& weights, const StagePlan& plan, const TrainConfig& cfg,
                       const TrainData& data);

/// Runs one curriculum stage, writing <out>/stage_<S>.lapw (+ .json sidecar,
/// optimizer state) after every epoch and <out>/metrics_<S>.csv.
std::vector<EpochMetrics> train_stage(Stage stage, const TrainConfig& cfg, const TrainData& data,
                                      const TrainOptions& options);

}  // namespace lap::train
