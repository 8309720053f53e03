#include "lap/train/model.hpp"

#include "lap/errors.hpp"
#include "lap/tensor/ops.hpp"

namespace lap::train {

std::string to_string(Stage stage) {
  switch (stage) {
    case Stage::A: return "A";
    case Stage::B: return "B";
    default: return "C";
  }
}

Stage parse_stage(const std::string& name) {
  if (name == "A" || name == "a") return Stage::A;
  if (name == "B" || name == "b") return Stage::B;
  if (name == "C" || name == "c") return Stage::C;
  throw ContractError("unknown stage '" + name + "' (expected A, B or C)");
}

render::Camera make_camera(const TrainConfig& cfg) {
  return render::Camera(cfg.net.image_size, cfg.net.image_size, cfg.fov);
}

Var item(const Var& batched, int i) {
  Shape s = batched.shape();
  s.erase(s.begin());
  return ops::reshape(ops::narrow(batched, 0, i, 1), s);
}

SetForward forward_set(const nn::Binding& p, const TrainConfig& cfg, const Var& images, bool refine) {
  const render::Camera cam = make_camera(cfg);
  render::RenderOptions ro;
  ro.tau = cfg.tau;
  SetForward f;
  f.face = nn::canonical_face(p, cfg.net, images);
  f.pose = nn::predict_pose(p, cfg.net, images);
  f.light = nn::predict_light(p, cfg.net, images);
  f.confidence = nn::predict_confidence(p, cfg.net, images);
  const int n = images.dim(0);
  const Var a = item(f.face.albedo, 0), d = item(f.face.depth, 0);
  for (int i = 0; i < n; ++i) {
    const Var l = item(f.light, i), w = item(f.pose, i);
    f.canonical.push_back(render::render(a, d, l, w, cam, false, ro));
    f.canonical_flip.push_back(render::render(a, d, l, w, cam, true, ro));
  }
  if (refine) {
    f.refined = nn::refine_attributes(p, cfg.net, f.face.albedo, f.face.depth, images);
    for (int i = 0; i < n; ++i) {
      const Var at = item(f.refined->albedo, i), dt = item(f.refined->depth, i);
      const Var l = item(f.light, i), w = item(f.pose, i);
      f.refined_render.push_back(render::render(at, dt, l, w, cam, false, ro));
      f.refined_flip.push_back(render::render(at, dt, l, w, cam, true, ro));
    }
  }
  return f;
}

std::optional<Var> set_objective(const SetForward& f, const Var& images,
                                 const std::vector<objectives::RelaxedMask>& masks, const TrainConfig& cfg) {
  const int n = images.dim(0);
  if (static_cast<int>(masks.size()) != n) throw ContractError("set_objective: one mask per view required");
  std::vector<Var> terms;
  for (int i = 0; i < n; ++i) {
    const auto& mask = masks[static_cast<std::size_t>(i)];
    if (!objectives::mask_filter(mask, cfg.min_face_fraction)) continue;
    const Var target = item(images, i);
    const Var sigma = item(f.confidence.sigma, i), sigma_flip = item(f.confidence.sigma_flip, i);
    const objectives::ObjectiveTerms canonical{f.canonical[static_cast<std::size_t>(i)].image,
                                               f.canonical_flip[static_cast<std::size_t>(i)].image, target, sigma,
                                               sigma_flip};
    Var term = objectives::total_objective(canonical, objectives::LossKind::RelaxedConsistency, mask, cfg.lambda_flip);
    if (f.refined) {
      const objectives::ObjectiveTerms refined{f.refined_render[static_cast<std::size_t>(i)].image,
                                               f.refined_flip[static_cast<std::size_t>(i)].image, target, sigma,
                                               sigma_flip};
      // Full weight on every visible face pixel, including expression parts.
      const objectives::RelaxedMask support(mask.support());
      term = ops::add(term, objectives::total_objective(refined, objectives::LossKind::Reconstruction, support,
                                                        cfg.lambda_flip));
    }
    terms.push_back(term);
  }
  if (terms.empty()) return std::nullopt;
  Var total = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) total = ops::add(total, terms[i]);
  return ops::scale(total, 1.0 / static_cast<double>(terms.size()));
}

}  // namespace lap::train
