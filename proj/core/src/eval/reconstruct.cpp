#include "lap/eval/reconstruct.hpp"

#include <fstream>

#include "json.hpp"
#include "lap/errors.hpp"
#include "lap/io/image_io.hpp"
#include "lap/nn/networks.hpp"
#include "lap/tensor/checkpoint.hpp"
#include "lap/tensor/ops.hpp"
#include "lap/train/trainer.hpp"

namespace lap::eval {
namespace fs = std::filesystem;
using json = nlohmann::json;

Model load_model(const fs::path& checkpoint) {
  if (!fs::exists(checkpoint)) throw IoError("checkpoint not found: " + checkpoint.string());
  fs::path sidecar = checkpoint;
  sidecar.replace_extension(".json");
  std::ifstream in(sidecar);
  if (!in) throw IoError("checkpoint sidecar not found: " + sidecar.string());
  json side;
  try {
    side = json::parse(in);
  } catch (const json::exception& e) {
    throw IoError(sidecar.string() + ": " + e.what());
  }
  Model m;
  m.config = train::TrainConfig::parse(side.at("config").get<std::string>());
  m.stage = train::parse_stage(side.at("stage").get<std::string>());
  m.weights = train::load_checkpoint_file(checkpoint, m.config);
  return m;
}

Reconstruction reconstruct(const Model& model, const Tensor& images, int target, Personalize personalize) {
  const train::TrainConfig& cfg = model.config;
  const int s = cfg.net.image_size;
  if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != s || images.dim(3) != s) {
    throw ShapeError("reconstruct: expected images [N,3," + std::to_string(s) + "," + std::to_string(s) + "], got " +
                     shape_str(images.shape()));
  }
  const int n = images.dim(0);
  if (target < 0 || target >= n) {
    throw ContractError("reconstruct: target " + std::to_string(target) + " outside the set of " + std::to_string(n));
  }
  const bool can_personalize = model.stage != train::Stage::A;
  if (personalize == Personalize::Yes && !can_personalize) {
    throw CapabilityError("reconstruct: a stage-A checkpoint only provides ID-consistent (canonical) factors");
  }
  const bool refine = personalize == Personalize::Yes || (personalize == Personalize::Auto && can_personalize);

  Tape tape;
  const nn::Binding p(tape, model.weights, {});
  const Var set = tape.constant(images);
  const Var one = ops::narrow(set, 0, target, 1);
  const nn::CanonicalFace face = nn::canonical_face(p, cfg.net, set);
  const Var pose = train::item(nn::predict_pose(p, cfg.net, one), 0);
  const Var light = train::item(nn::predict_light(p, cfg.net, one), 0);
  const nn::Confidence conf = nn::predict_confidence(p, cfg.net, one);
  const render::Camera cam = train::make_camera(cfg);
  render::RenderOptions ro;
  ro.tau = cfg.tau;

  Reconstruction r;
  r.set_size = n;
  r.target = target;
  const Var a_c = train::item(face.albedo, 0), d_c = train::item(face.depth, 0);
  r.canonical_albedo = a_c.value();
  r.canonical_depth = d_c.value();
  r.canonical_normals = render::depth_to_normals(d_c, cam).value();
  const render::RenderOutput canonical = render::render(a_c, d_c, light, pose, cam, false, ro);
  r.canonical_render = canonical.image.value();
  r.sigma = train::item(conf.sigma, 0).value();
  r.sigma_flip = train::item(conf.sigma_flip, 0).value();
  r.pose = render::Pose::from_tensor(pose.value());
  r.light = render::Light::from_tensor(light.value());

  Var a = a_c, d = d_c;
  if (refine) {
    const nn::Refined refined = nn::refine_attributes(p, cfg.net, face.albedo, face.depth, one);
    a = train::item(refined.albedo, 0);
    d = train::item(refined.depth, 0);
    r.personalized = true;
    r.target_albedo = a.value();
    r.target_depth = d.value();
    r.target_normals = render::depth_to_normals(d, cam).value();
  }
  const render::RenderOutput out = refine ? render::render(a, d, light, pose, cam, false, ro) : canonical;
  r.rendered = out.image.value();
  r.coverage = out.coverage.value();
  r.rendered_flip = render::render(a, d, light, pose, cam, true, ro).image.value();
  return r;
}

Tensor load_images(const std::vector<fs::path>& paths, int image_size) {
  if (paths.empty()) throw ContractError("load_images: no input images");
  const std::size_t plane = static_cast<std::size_t>(3) * image_size * image_size;
  Tensor out({static_cast<int>(paths.size()), 3, image_size, image_size});
  for (std::size_t i = 0; i < paths.size(); ++i) {
    const Tensor img = io::read_png(paths[i]);
    if (img.shape() != Shape{3, image_size, image_size}) {
      throw ShapeError(paths[i].string() + ": image " + shape_str(img.shape()) + " does not match the model size " +
                       std::to_string(image_size));
    }
    std::copy(img.data().begin(), img.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * plane));
  }
  return out;
}

void write_reconstruction(const fs::path& dir, const Reconstruction& r) {
  fs::create_directories(dir);
  io::write_png(dir / "canonical_albedo.png", r.canonical_albedo);
  io::write_depth(dir / "canonical_depth.lapd", r.canonical_depth);
  io::write_normals_png(dir / "canonical_normals.png", r.canonical_normals);
  io::write_png(dir / "canonical_rendered.png", r.canonical_render);
  if (r.personalized) {
    io::write_png(dir / "target_albedo.png", r.target_albedo);
    io::write_depth(dir / "target_depth.lapd", r.target_depth);
    io::write_normals_png(dir / "target_normals.png", r.target_normals);
  }
  io::write_depth(dir / "sigma.lapd", r.sigma);
  io::write_depth(dir / "sigma_flip.lapd", r.sigma_flip);
  io::write_png(dir / "rendered.png", r.rendered);
  io::write_png(dir / "rendered_flip.png", r.rendered_flip);
  const json factors = {
      {"set_size", r.set_size},
      {"target", r.target},
      {"personalized", r.personalized},
      {"pose", {{"yaw", r.pose.yaw}, {"pitch", r.pose.pitch}, {"roll", r.pose.roll},
                {"tx", r.pose.tx}, {"ty", r.pose.ty}, {"tz", r.pose.tz}}},
      {"light", {{"ambient", r.light.ambient}, {"diffuse", r.light.diffuse}, {"lx", r.light.lx}, {"ly", r.light.ly}}},
  };
  std::ofstream out(dir / "factors.json");
  if (!out) throw IoError("cannot write " + (dir / "factors.json").string());
  out << factors.dump(2) << '\n';
}

}  // namespace lap::eval
