#include "lap/train/fit.hpp"

#include <random>

#include "lap/errors.hpp"
#include "lap/nn/networks.hpp"
#include "lap/objectives/losses.hpp"
#include "lap/tensor/ops.hpp"
#include "lap/train/optimizer.hpp"

namespace lap::train {

namespace {

struct Evaluation {
  Var loss;
  Var albedo, depth, light, pose, sigma;
  Var rendered;
};

Evaluation evaluate(Tape& tape, const TensorMap& raw, const Tensor& image, const render::Camera& cam,
                    const FitOptions& o, std::map<std::string, Var>& leaves) {
  for (const auto& [name, t] : raw) leaves[name] = tape.leaf(t);
  Evaluation e;
  e.albedo = nn::map_albedo(leaves.at("albedo"));
  const Var& raw_depth = leaves.at("depth");
  e.depth = nn::map_depth(o.depth_grid_factor == 1
                              ? raw_depth
                              : ops::reshape(ops::upsample_bilinear(ops::reshape(raw_depth, {1, 1, raw_depth.dim(1),
                                                                                             raw_depth.dim(2)}),
                                                                    o.depth_grid_factor),
                                             {1, cam.height(), cam.width()}));
  e.light = ops::reshape(nn::map_light(leaves.at("light")), {4});
  e.pose = ops::reshape(nn::map_pose(leaves.at("pose")), {6});
  e.sigma = ops::exp(leaves.at("log_sigma"));
  render::RenderOptions ro;
  ro.tau = o.tau;
  const auto out = render::render(e.albedo, e.depth, e.light, e.pose, cam, false, ro);
  const auto flip = render::render(e.albedo, e.depth, e.light, e.pose, cam, true, ro);
  e.rendered = out.image;
  const Shape map{1, cam.height(), cam.width()};
  const Var sigma_map = ops::broadcast_to(ops::reshape(e.sigma, {1, 1, 1}), map);
  const Var target = tape.constant(image);
  const objectives::ObjectiveTerms terms{out.image, flip.image, target, sigma_map, sigma_map};
  e.loss = objectives::total_objective(terms, objectives::LossKind::Reconstruction, std::nullopt, o.lambda_flip);
  return e;
}

}  // namespace

FitResult fit_single(const Tensor& image, const render::Camera& cam, const FitOptions& o) {
  if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != cam.height() || image.dim(2) != cam.width()) {
    throw ShapeError("fit_single: expected image [3," + std::to_string(cam.height()) + "," +
                     std::to_string(cam.width()) + "], got " + shape_str(image.shape()));
  }
  if (o.iterations < 0) throw ContractError("fit_single: iterations must be non-negative");
  const int h = cam.height(), w = cam.width(), f = o.depth_grid_factor;
  if (f < 1 || h % f != 0 || w % f != 0) {
    throw ContractError("fit_single: depth_grid_factor " + std::to_string(f) + " does not divide the image size");
  }
  TensorMap raw;
  raw["albedo"] = Tensor({3, h, w});
  raw["depth"] = Tensor({1, h / f, w / f});
  raw["light"] = Tensor({1, 4});
  raw["pose"] = Tensor({1, 6});
  raw["log_sigma"] = Tensor({1});
  if (o.init_jitter > 0.0) {
    std::mt19937_64 rng(o.seed);
    std::uniform_real_distribution<double> u(-o.init_jitter, o.init_jitter);
    for (double& v : raw["albedo"].data()) v = u(rng);
    for (double& v : raw["depth"].data()) v = u(rng);
  }

  Adam grid_adam({o.learning_rate});
  Adam pose_adam({o.vector_learning_rate});
  Adam light_adam({o.light_learning_rate});
  FitResult result;
  result.loss_trace.reserve(static_cast<std::size_t>(o.iterations));
  for (int it = 0; it <= o.iterations; ++it) {
    Tape tape;
    std::map<std::string, Var> leaves;
    const Evaluation e = evaluate(tape, raw, image, cam, o, leaves);
    if (it == o.iterations) {
      result.factors = {e.albedo.value(), e.depth.value(), render::Light::from_tensor(e.light.value()),
                        render::Pose::from_tensor(e.pose.value()), e.sigma.value()[0]};
      result.rendered = e.rendered.value();
      break;
    }
    result.loss_trace.push_back(e.loss.value().item());
    const Gradients g = tape.backward(e.loss);
    TensorMap grid_grads, pose_grads, light_grads;
    for (const auto& [name, v] : leaves) {
      (name == "pose" ? pose_grads : name == "light" ? light_grads : grid_grads)[name] = g.at(v);
    }
    const double progress = o.iterations > 1 ? static_cast<double>(it) / (o.iterations - 1) : 0.0;
    const double decay = 1.0 - (1.0 - o.final_lr_fraction) * progress;
    grid_adam.set_lr(o.learning_rate * decay);
    pose_adam.set_lr(o.vector_learning_rate * decay);
    light_adam.set_lr(o.light_learning_rate * decay);
    grid_adam.step(raw, grid_grads);
    if (it >= o.pose_warmup) pose_adam.step(raw, pose_grads);
    light_adam.step(raw, light_grads);
  }
  return result;
}

}  // namespace lap::train
