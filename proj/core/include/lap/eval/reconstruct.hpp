#pragma once

#include <filesystem>
#include <vector>

#include "lap/nn/params.hpp"
#include "lap/render/renderer.hpp"
#include "lap/train/config.hpp"
#include "lap/train/model.hpp"

namespace lap::eval {

/// A checkpoint together with the configuration and stage from its sidecar.
struct Model {
  nn::ParamStore weights;
  train::TrainConfig config;
  train::Stage stage = train::Stage::A;
};

/// Loads <name>.lapw and its <name>.json sidecar. Throws IoError naming the
/// missing file.
Model load_model(const std::filesystem::path& checkpoint);

enum class Personalize {
  Auto,  ///< when the checkpoint stage provides it
  Yes,   ///< CapabilityError for a stage-A checkpoint
  No,
};

struct Reconstruction {
  int set_size = 0;
  int target = 0;
  Tensor canonical_albedo;   ///< [3,S,S]
  Tensor canonical_depth;    ///< [1,S,S]
  Tensor canonical_normals;  ///< [3,S,S]
  Tensor canonical_render;   ///< (a_c, d_c) rendered into the target view
  bool personalized = false;
  Tensor target_albedo;  ///< [3,S,S], empty unless personalized
  Tensor target_depth;
  Tensor target_normals;
  Tensor sigma;       ///< [1,S,S]
  Tensor sigma_flip;  ///< [1,S,S]
  Tensor rendered;       ///< final factors rendered into the target view
  Tensor rendered_flip;  ///< same with flipped factors
  Tensor coverage;       ///< [1,S,S] of `rendered`
  render::Pose pose;
  render::Light light;
};

/// Runs the model on an image set [N,3,S,S] and reports the factors for
/// image `target`. N=1 is single-image inference.
Reconstruction reconstruct(const Model& model, const Tensor& images, int target,
                           Personalize personalize = Personalize::Auto);

/// Stacks PNG files into [N,3,S,S]; all must have the configured size.
Tensor load_images(const std::vector<std::filesystem::path>& paths, int image_size);

/// Writes canonical_*, target_*, sigma*, rendered* and factors.json.
void write_reconstruction(const std::filesystem::path& dir, const Reconstruction& r);

}  // namespace lap::eval
