#include "lap/render/renderer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "lap/errors.hpp"
#include "lap/tensor/ops.hpp"

namespace lap::render {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

void require_map(const char* what, const Var& v, int channels) {
  const Shape& s = v.shape();
  if (s.size() != 3 || s[0] != channels) {
    throw ShapeError(std::string(what) + ": expected [" + std::to_string(channels) + ",H,W], got " + shape_str(s));
  }
}

// Pixel-centred normalized ray coordinates (u - cx)/f and (v - cy)/f.
std::pair<Tensor, Tensor> ray_grids(const Camera& cam) {
  const int h = cam.height(), w = cam.width();
  Tensor rx({1, h, w}), ry({1, h, w});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      rx.at(0, y, x) = (x - cam.cx()) / cam.focal();
      ry.at(0, y, x) = (y - cam.cy()) / cam.focal();
    }
  }
  return {rx, ry};
}

// Central difference along an axis with replicated borders.
Var central_diff(const Var& p, int axis) {
  const int n = p.dim(axis);
  Var padded = ops::concat({ops::narrow(p, axis, 0, 1), p, ops::narrow(p, axis, n - 1, 1)}, axis);
  return ops::sub(ops::narrow(padded, axis, 2, n), ops::narrow(padded, axis, 0, n));
}

Var channel(const Var& v, int c) { return ops::narrow(v, 0, c, 1); }

Var entry(const Var& v, int i) { return ops::narrow(v, 0, i, 1); }

}  // namespace

Camera::Camera(int height, int width, double fov_deg) : height_(height), width_(width), fov_deg_(fov_deg) {
  if (height < 1 || width < 1) throw ContractError("camera: image size must be positive");
  if (!(fov_deg > 1.0 && fov_deg < 60.0)) throw ContractError("camera: field of view must lie in (1, 60) degrees");
  focal_ = ((width - 1) * 0.5) / std::tan(fov_deg * 0.5 * kDegToRad);
  if (width == 1) focal_ = 1.0 / std::tan(fov_deg * 0.5 * kDegToRad);
}

Tensor Light::to_tensor() const { return Tensor::from({ambient, diffuse, lx, ly}); }

Light Light::from_tensor(const Tensor& t) {
  if (t.numel() != 4) throw ShapeError("light: expected 4 values, got " + shape_str(t.shape()));
  return {t[0], t[1], t[2], t[3]};
}

Tensor Pose::to_tensor() const { return Tensor::from({yaw, pitch, roll, tx, ty, tz}); }

Pose Pose::from_tensor(const Tensor& t) {
  if (t.numel() != 6) throw ShapeError("pose: expected 6 values, got " + shape_str(t.shape()));
  return {t[0], t[1], t[2], t[3], t[4], t[5]};
}

std::array<double, 9> rotation_matrix(const Pose& pose) {
  const double a = pose.yaw * kDegToRad, b = pose.pitch * kDegToRad, c = pose.roll * kDegToRad;
  const double ca = std::cos(a), sa = std::sin(a), cb = std::cos(b), sb = std::sin(b), cc = std::cos(c),
               sc = std::sin(c);
  // Ry(yaw) * Rx(pitch) * Rz(roll)
  return {ca * cc + sa * sb * sc, -ca * sc + sa * sb * cc, sa * cb,
          cb * sc,                cb * cc,                 -sb,
          -sa * cc + ca * sb * sc, sa * sc + ca * sb * cc, ca * cb};
}

Var depth_to_normals(const Var& depth, const Camera& cam) {
  require_map("depth_to_normals", depth, 1);
  const int h = depth.dim(1), w = depth.dim(2);
  if (h < 3 || w < 3) throw ShapeError("depth_to_normals: depth map must be at least 3x3, got " + shape_str(depth.shape()));
  if (h != cam.height() || w != cam.width()) throw ShapeError("depth_to_normals: depth size differs from camera");
  Tape& tape = depth.tape();
  auto [rx, ry] = ray_grids(cam);
  const Var px = ops::mul(depth, tape.constant(std::move(rx)));
  const Var py = ops::mul(depth, tape.constant(std::move(ry)));
  const Var& pz = depth;

  // Tangents along width (axis 2) and height (axis 1).
  const Var ax = central_diff(px, 2), ay = central_diff(py, 2), az = central_diff(pz, 2);
  const Var bx = central_diff(px, 1), by = central_diff(py, 1), bz = central_diff(pz, 1);

  // -(a x b) so the normal faces the camera.
  const Var nx = ops::sub(ops::mul(az, by), ops::mul(ay, bz));
  const Var ny = ops::sub(ops::mul(ax, bz), ops::mul(az, bx));
  const Var nz = ops::sub(ops::mul(ay, bx), ops::mul(ax, by));
  const Var n = ops::concat({nx, ny, nz}, 0);
  const Var norm = ops::sqrt(ops::sum(ops::mul(n, n), 0));
  return ops::div(n, norm);
}

Var light_direction(const Var& light) {
  if (light.numel() != 4) throw ShapeError("light_direction: expected 4 light parameters, got " + shape_str(light.shape()));
  const Var l = ops::reshape(light, {4});
  const Var lx = entry(l, 2), ly = entry(l, 3);
  const Var tangential = ops::add(ops::mul(lx, lx), ops::mul(ly, ly));
  // The 1e-12 keeps the derivative finite at the horizon.
  const Var lz = ops::sqrt(ops::add_scalar(ops::relu(ops::neg(ops::add_scalar(tangential, -1.0))), 1e-12));
  const Var dir = ops::concat({lx, ly, ops::neg(lz)}, 0);
  return ops::div(dir, ops::sqrt(ops::sum(ops::mul(dir, dir))));
}

Var shade(const Var& albedo, const Var& normals, const Var& light) {
  require_map("shade", albedo, 3);
  require_map("shade", normals, 3);
  if (albedo.shape() != normals.shape()) throw ShapeError("shade: albedo " + shape_str(albedo.shape()) + " and normals " + shape_str(normals.shape()) + " differ");
  const Var l = ops::reshape(light, {4});
  const Var dir = ops::reshape(light_direction(l), {3, 1, 1});
  const Var cosine = ops::relu(ops::sum(ops::mul(normals, dir), 0));
  const Var ambient = ops::reshape(entry(l, 0), {1, 1, 1});
  const Var diffuse = ops::reshape(entry(l, 1), {1, 1, 1});
  const Var shading = ops::add(ambient, ops::mul(diffuse, cosine));
  return ops::clamp(ops::mul(albedo, shading), 0.0, 1.0);
}

RenderOutput reproject(const Var& image, const Var& depth, const Var& pose, const Camera& cam,
                       const RenderOptions& options) {
  require_map("reproject", depth, 1);
  const Shape& is = image.shape();
  if (is.size() != 3 || is[1] != depth.dim(1) || is[2] != depth.dim(2)) {
    throw ShapeError("reproject: image " + shape_str(is) + " and depth " + shape_str(depth.shape()) + " differ");
  }
  if (pose.numel() != 6) throw ShapeError("reproject: expected 6 pose parameters, got " + shape_str(pose.shape()));
  const int c = is[0], h = is[1], w = is[2], k = h * w;
  Tape& tape = image.tape();

  auto [rx, ry] = ray_grids(cam);
  const Var d = ops::reshape(depth, {k});
  const Var px = ops::mul(d, tape.constant(rx.reshaped({k})));
  const Var py = ops::mul(d, tape.constant(ry.reshaped({k})));
  const Var pz = ops::add_scalar(d, -Camera::kObjectCenterZ);

  const Var p = ops::reshape(pose, {6});
  const Var ang = ops::scale(ops::narrow(p, 0, 0, 3), kDegToRad);
  const Var ca = ops::cos(entry(ang, 0)), sa = ops::sin(entry(ang, 0));
  const Var cb = ops::cos(entry(ang, 1)), sb = ops::sin(entry(ang, 1));
  const Var cc = ops::cos(entry(ang, 2)), sc = ops::sin(entry(ang, 2));
  using ops::mul;
  using ops::add;
  using ops::sub;
  // Same entries as rotation_matrix().
  const Var r00 = add(mul(ca, cc), mul(mul(sa, sb), sc));
  const Var r01 = sub(mul(mul(sa, sb), cc), mul(ca, sc));
  const Var r02 = mul(sa, cb);
  const Var r10 = mul(cb, sc);
  const Var r11 = mul(cb, cc);
  const Var r12 = ops::neg(sb);
  const Var r20 = sub(mul(mul(ca, sb), sc), mul(sa, cc));
  const Var r21 = add(mul(sa, sc), mul(mul(ca, sb), cc));
  const Var r22 = mul(ca, cb);

  const Var qx = add(add(add(mul(r00, px), mul(r01, py)), mul(r02, pz)), entry(p, 3));
  const Var qy = add(add(add(mul(r10, px), mul(r11, py)), mul(r12, pz)), entry(p, 4));
  const Var qz = ops::add_scalar(add(add(add(mul(r20, px), mul(r21, py)), mul(r22, pz)), entry(p, 5)),
                                 Camera::kObjectCenterZ);

  const Var u = ops::add_scalar(ops::scale(ops::div(qx, qz), cam.focal()), cam.cx());
  const Var v = ops::add_scalar(ops::scale(ops::div(qy, qz), cam.focal()), cam.cy());

  // Soft depth test. The per-render shift is a constant and cancels in the
  // normalized ratio below.
  const auto& qzv = qz.value().storage();
  const double zmin = *std::min_element(qzv.begin(), qzv.end());
  const Var vis = ops::exp(ops::scale(ops::add_scalar(qz, -zmin), -1.0 / options.tau));
  const Var vis_row = ops::reshape(vis, {1, k});

  const Var colors = ops::reshape(image, {c, k});
  const Var num = ops::scatter_bilinear(ops::mul(colors, vis_row), u, v, h, w);
  const Var num_z = ops::scatter_bilinear(ops::mul(ops::reshape(qz, {1, k}), vis_row), u, v, h, w);
  const Var den = ops::scatter_bilinear(vis_row, u, v, h, w);
  const Var mass = ops::scatter_bilinear(tape.constant(Tensor({1, k}, 1.0)), u, v, h, w);

  Tensor valid({1, h, w}), invalid({1, h, w});
  for (int i = 0; i < k; ++i) {
    const bool ok = mass.value()[static_cast<std::size_t>(i)] >= options.min_weight;
    valid[static_cast<std::size_t>(i)] = ok ? 1.0 : 0.0;
    invalid[static_cast<std::size_t>(i)] = ok ? 0.0 : 1.0;
  }
  const Var valid_v = tape.constant(valid);
  const Var invalid_v = tape.constant(invalid);
  const Var safe_den = add(den, invalid_v);

  RenderOutput out;
  out.image = add(mul(ops::div(num, safe_den), valid_v), ops::scale(invalid_v, options.background));
  out.depth = mul(ops::div(num_z, safe_den), valid_v);
  out.coverage = mul(ops::clamp(mass, 0.0, 1.0), valid_v);
  return out;
}

RenderOutput render(const Var& albedo, const Var& depth, const Var& light, const Var& pose, const Camera& cam,
                    bool flipped, const RenderOptions& options) {
  const Var a = flipped ? ops::flip_width(albedo) : albedo;
  const Var d = flipped ? ops::flip_width(depth) : depth;
  const Var normals = depth_to_normals(d, cam);
  const Var shaded = shade(a, normals, light);
  return reproject(shaded, d, pose, cam, options);
}

}  // namespace lap::render
