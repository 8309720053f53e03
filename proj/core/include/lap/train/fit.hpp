#pragma once

#include <cstdint>
#include <vector>

#include "lap/render/renderer.hpp"
#include "lap/tensor/tensor.hpp"

namespace lap::train {

struct FitOptions {
  int iterations = 2000;
  /// Adam step size for the raw albedo/depth grids and the log confidence.
  double learning_rate = 0.05;
  /// Step size for the raw pose and light vectors; pose and the grids are
  /// nearly interchangeable, so a large value lets the pose wander.
  double vector_learning_rate = 1e-4;
  /// Step size for the raw light vector. When lighting lags behind, the pose
  /// rotates to imitate side lighting and the fit stalls.
  double light_learning_rate = 1e-3;
  /// The pose stays at its initial value for this many iterations. On the flat
  /// starting depth a yaw explains lighting asymmetry faster than the light
  /// does, and the fit settles in that corner.
  int pose_warmup = 500;
  /// The raw depth grid has (H/f, W/f) cells and is bilinearly upsampled, which
  /// keeps per-pixel depth noise from being absorbed into the albedo. H and W
  /// must be divisible by f.
  int depth_grid_factor = 4;
  /// The step sizes fall linearly to this fraction by the last iteration.
  double final_lr_fraction = 0.1;
  double tau = 0.01;
  double lambda_flip = 0.5;
  /// Uniform jitter on the raw albedo/depth grids, drawn from `seed`. Zero
  /// keeps the start exactly at gray albedo, flat depth, identity pose and
  /// frontal light.
  double init_jitter = 0.0;
  std::uint64_t seed = 0;
};

struct FactorSet {
  Tensor albedo;  ///< [3,H,W]
  Tensor depth;   ///< [1,H,W]
  render::Light light;
  render::Pose pose;
  double sigma = 1.0;
};

struct FitResult {
  FactorSet factors;
  Tensor rendered;  ///< [3,H,W] render of the final factors
  std::vector<double> loss_trace;  ///< objective before each update
};

/// Network-free inverse rendering of one image [3,H,W]: Adam directly on raw
/// factor grids under the reconstruction objective with the flipped term.
FitResult fit_single(const Tensor& image, const render::Camera& cam, const FitOptions& options = {});

}  // namespace lap::train
