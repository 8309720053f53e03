#pragma once

#include <array>

#include "lap/tensor/tape.hpp"
#include "lap/tensor/tensor.hpp"

namespace lap::render {

/// Pinhole camera looking down +z with the principal point at the image
/// centre. Canonical object centre is (0, 0, 1).
class Camera {
 public:
  Camera(int height, int width, double fov_deg = kDefaultFov);

  int height() const { return height_; }
  int width() const { return width_; }
  double fov_deg() const { return fov_deg_; }
  /// Focal length in pixels.
  double focal() const { return focal_; }
  double cx() const { return (width_ - 1) * 0.5; }
  double cy() const { return (height_ - 1) * 0.5; }

  static constexpr double kDefaultFov = 10.0;
  static constexpr double kObjectCenterZ = 1.0;

 private:
  int height_;
  int width_;
  double fov_deg_;
  double focal_;
};

/// Ambient/diffuse strengths and the tangential part of the light direction.
struct Light {
  double ambient = 0.5;
  double diffuse = 0.5;
  double lx = 0.0;
  double ly = 0.0;

  /// Packed as [ambient, diffuse, lx, ly].
  Tensor to_tensor() const;
  static Light from_tensor(const Tensor& t);
};

/// Rotation in degrees (intrinsic yaw about y, then pitch about x, then roll
/// about z, all around the object centre) and translation in camera units.
struct Pose {
  double yaw = 0.0;
  double pitch = 0.0;
  double roll = 0.0;
  double tx = 0.0;
  double ty = 0.0;
  double tz = 0.0;

  /// Packed as [yaw, pitch, roll, tx, ty, tz].
  Tensor to_tensor() const;
  static Pose from_tensor(const Tensor& t);
};

struct RenderOptions {
  /// Temperature of the soft depth test.
  double tau = 0.01;
  double background = 1.0;
  /// Pixels whose accumulated bilinear mass falls below this are background.
  double min_weight = 1e-6;
};

struct RenderOutput {
  Var image;     ///< [3,H,W] in [0,1]
  Var coverage;  ///< [1,H,W] in [0,1]
  Var depth;     ///< [1,H,W] target-view depth, background pixels hold 0
};

/// Surface normals [3,H,W] of a depth map [1,H,W]; unit length with n_z <= 0.
/// Throws ShapeError when H or W is below 3.
Var depth_to_normals(const Var& depth, const Camera& cam);

/// Unit light direction [3] from packed light parameters [4].
Var light_direction(const Var& light);

/// Lambertian shading a * (k_amb + k_diff * max(0, <n, l>)), clamped to [0,1].
Var shade(const Var& albedo, const Var& normals, const Var& light);

/// Soft forward splatting of a canonical image [C,H,W] with canonical depth
/// [1,H,W] into the view given by pose [6].
RenderOutput reproject(const Var& image, const Var& depth, const Var& pose, const Camera& cam,
                       const RenderOptions& options = {});

/// Full image formation. With flipped set, albedo and depth are mirrored
/// along the width axis before shading.
RenderOutput render(const Var& albedo, const Var& depth, const Var& light, const Var& pose, const Camera& cam,
                    bool flipped = false, const RenderOptions& options = {});

/// Rotation matrix (row-major 3x3) for a pose, using the same convention as
/// reproject().
std::array<double, 9> rotation_matrix(const Pose& pose);

}  // namespace lap::render
