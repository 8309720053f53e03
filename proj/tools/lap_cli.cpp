// lap: synthetic data, training, fitting, reconstruction, evaluation and
// gradient checks from the command line.
//
// Exit status: 0 success, 1 validation failure (bad flag values, failed
// checks, contract/shape/staging errors), 2 I/O error.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "lap/errors.hpp"
#include "lap/eval/gradsuite.hpp"
#include "lap/eval/reconstruct.hpp"
#include "lap/eval/report.hpp"
#include "lap/io/image_io.hpp"
#include "lap/render/renderer.hpp"
#include "lap/synth/synth.hpp"
#include "lap/tensor/tape.hpp"
#include "lap/train/config.hpp"
#include "lap/train/fit.hpp"
#include "lap/train/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace lap;

namespace {

constexpr int kOk = 0;
constexpr int kInvalid = 1;
constexpr int kIo = 2;

struct SynthArgs {
  int identities = 200;
  int views = 6;
  std::string tier = "easy";
  std::uint64_t seed = 1;
  int size = 64;
  fs::path out;
};

struct TrainArgs {
  std::string stage = "A";
  fs::path data;
  fs::path wild;
  fs::path config;
  fs::path out = "runs";
  bool resume = false;
};

struct FitArgs {
  fs::path image;
  int iters = 2000;
  std::uint64_t seed = 0;
  double fov = render::Camera::kDefaultFov;
  fs::path out;
};

struct ReconstructArgs {
  fs::path ckpt;
  std::vector<fs::path> inputs;
  int target = 0;
  std::string personalize = "auto";
  fs::path out;
};

struct EvalArgs {
  fs::path pred;
  fs::path gt;
  std::string metrics = "side,mad,ssim,corr";
  fs::path report;
  std::string align = "none";
};

int run_synth(const SynthArgs& a) {
  synth::DatasetOptions o;
  o.identities = a.identities;
  o.views = a.views;
  o.tier = synth::parse_tier(a.tier);
  o.seed = a.seed;
  o.image_size = a.size;
  const auto manifests = synth::generate_dataset(a.out, o);
  std::printf("wrote %zu identities x %d %s views (%dx%d) to %s\n", manifests.size(), a.views, a.tier.c_str(), a.size,
              a.size, a.out.string().c_str());
  return kOk;
}

int run_train(const TrainArgs& a) {
  const train::TrainConfig cfg = a.config.empty() ? train::TrainConfig{} : train::TrainConfig::load(a.config);
  const train::Stage stage = train::parse_stage(a.stage);
  const train::TrainData data = train::load_training_data(a.data, a.wild, cfg);
  train::TrainOptions opt;
  opt.out_dir = a.out;
  opt.resume = a.resume;
  const auto start = std::chrono::steady_clock::now();
  opt.on_epoch = [&](const train::EpochMetrics& m) {
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("stage %s epoch %3d  train %10.5f  val %10.5f  rejected %d  skipped %d  %.0fs\n",
                train::to_string(m.stage).c_str(), m.epoch, m.train_loss, m.val_loss, m.rejected, m.skipped_batches, s);
    std::fflush(stdout);
  };
  train::train_stage(stage, cfg, data, opt);
  std::printf("checkpoint %s\n", train::checkpoint_path(a.out, stage).string().c_str());
  return kOk;
}

json pose_json(const render::Pose& p) {
  return {{"yaw", p.yaw}, {"pitch", p.pitch}, {"roll", p.roll}, {"tx", p.tx}, {"ty", p.ty}, {"tz", p.tz}};
}

json light_json(const render::Light& l) {
  return {{"ambient", l.ambient}, {"diffuse", l.diffuse}, {"lx", l.lx}, {"ly", l.ly}};
}

int run_fit(const FitArgs& a) {
  const Tensor image = io::read_png(a.image);
  if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError(a.image.string() + ": expected an RGB image");
  const render::Camera cam(image.dim(1), image.dim(2), a.fov);
  train::FitOptions o;
  o.iterations = a.iters;
  o.seed = a.seed;
  const train::FitResult r = train::fit_single(image, cam, o);

  fs::create_directories(a.out);
  io::write_png(a.out / "albedo.png", r.factors.albedo);
  io::write_depth(a.out / "depth.lapd", r.factors.depth);
  Tape tape;
  io::write_normals_png(a.out / "normals.png", render::depth_to_normals(tape.constant(r.factors.depth), cam).value());
  io::write_png(a.out / "rendered.png", r.rendered);
  json j{{"iterations", a.iters},       {"seed", a.seed},
         {"pose", pose_json(r.factors.pose)}, {"light", light_json(r.factors.light)},
         {"sigma", r.factors.sigma},    {"loss_trace", r.loss_trace}};
  std::ofstream(a.out / "factors.json") << j.dump(2) << "\n";
  std::printf("loss %.6f -> %.6f after %d iterations; outputs in %s\n", r.loss_trace.empty() ? 0.0 : r.loss_trace.front(),
              r.loss_trace.empty() ? 0.0 : r.loss_trace.back(), a.iters, a.out.string().c_str());
  return kOk;
}

int run_reconstruct(const ReconstructArgs& a) {
  const eval::Model model = eval::load_model(a.ckpt);
  const Tensor images = eval::load_images(a.inputs, model.config.net.image_size);
  eval::Personalize mode = eval::Personalize::Auto;
  if (a.personalize == "yes") mode = eval::Personalize::Yes;
  if (a.personalize == "no") mode = eval::Personalize::No;
  const eval::Reconstruction r = eval::reconstruct(model, images, a.target, mode);
  eval::write_reconstruction(a.out, r);
  std::printf("stage %s checkpoint, %d input(s), target %d%s; outputs in %s\n",
              train::to_string(model.stage).c_str(), r.set_size, r.target, r.personalized ? ", personalized" : "",
              a.out.string().c_str());
  return kOk;
}

int run_eval(const EvalArgs& a) {
  eval::EvalOptions o;
  o.metrics = eval::parse_metrics(a.metrics);
  o.align_median = a.align == "median";
  const eval::EvalReport report = eval::evaluate_directories(a.pred, a.gt, o);
  std::cout << report.table();
  if (!a.report.empty()) {
    if (a.report.has_parent_path()) fs::create_directories(a.report.parent_path());
    std::ofstream out(a.report);
    if (!out) throw IoError(a.report.string() + ": cannot write report");
    out << report.csv();
  }
  return kOk;
}

int run_gradcheck(const std::string& suite) {
  const auto start = std::chrono::steady_clock::now();
  const auto rows = eval::run_gradient_suite(suite);
  std::printf("%-11s %-24s %12s %10s  %s\n", "suite", "check", "max rel err", "tolerance", "result");
  bool ok = true;
  for (const auto& r : rows) {
    std::printf("%-11s %-24s %12.3e %10.0e  %s\n", r.suite.c_str(), r.name.c_str(), r.max_rel_error, r.tolerance,
                r.pass() ? "ok" : "FAIL");
    ok = ok && r.pass();
  }
  std::printf("%zu checks, %s, %.1fs\n", rows.size(), ok ? "all passed" : "FAILURES",
              std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  return ok ? kOk : kInvalid;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lap - unsupervised 3D face reconstruction on synthetic data"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic face collection");
  synth->add_option("--identities", sa.identities, "Number of identities")->check(CLI::PositiveNumber);
  synth->add_option("--views", sa.views, "Views per identity")->check(CLI::PositiveNumber);
  synth->add_option("--tier", sa.tier, "Difficulty tier")->check(CLI::IsMember({"easy", "wild"}));
  synth->add_option("--seed", sa.seed, "Generator seed");
  synth->add_option("--size", sa.size, "Image side in pixels (power of two)")->check(CLI::PositiveNumber);
  synth->add_option("--out", sa.out, "Output directory")->required();

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Run one curriculum stage");
  train->add_option("--stage", ta.stage, "A, B or C")->check(CLI::IsMember({"A", "B", "C"}));
  train->add_option("--data", ta.data, "Easy-tier dataset root")->required();
  train->add_option("--wild", ta.wild, "Wild-tier dataset root");
  train->add_option("--config", ta.config, "key = value configuration file");
  train->add_option("--out", ta.out, "Checkpoint directory");
  train->add_flag("--resume", ta.resume, "Continue from the stage's last checkpoint");

  FitArgs fa;
  auto* fit = app.add_subcommand("fit", "Network-free inverse rendering of one image");
  fit->add_option("--image", fa.image, "Input PNG")->required();
  fit->add_option("--iters", fa.iters, "Adam iterations")->check(CLI::NonNegativeNumber);
  fit->add_option("--seed", fa.seed, "Initialization seed");
  fit->add_option("--fov", fa.fov, "Camera field of view in degrees")->check(CLI::Range(1.0, 90.0));
  fit->add_option("--out", fa.out, "Output directory")->required();

  ReconstructArgs ra;
  auto* rec = app.add_subcommand("reconstruct", "Reconstruct a face from an image set");
  rec->add_option("--ckpt", ra.ckpt, "Checkpoint (.lapw with .json sidecar)")->required();
  rec->add_option("--input", ra.inputs, "Input PNGs (1 to 6)")->required()->expected(1, -1);
  rec->add_option("--target", ra.target, "Index of the target image")->check(CLI::NonNegativeNumber);
  rec->add_option("--personalize", ra.personalize, "auto, yes or no")->check(CLI::IsMember({"auto", "yes", "no"}));
  rec->add_option("--out", ra.out, "Output directory")->required();

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Score reconstructions against synthetic ground truth");
  ev->add_option("--pred-dir", ea.pred, "Reconstruction directory (or root of per-identity directories)")->required();
  ev->add_option("--gt-dir", ea.gt, "Identity directory or dataset root")->required();
  ev->add_option("--metrics", ea.metrics, "Comma-separated subset of side,mad,ssim,corr");
  ev->add_option("--report", ea.report, "CSV report path");
  ev->add_option("--align", ea.align, "Depth alignment before SIDE")->check(CLI::IsMember({"none", "median"}));

  std::string suite = "all";
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  gc->add_option("--suite", suite, "primitives, renderer, losses, networks or all")
      ->check(CLI::IsMember({"primitives", "renderer", "losses", "networks", "all"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInvalid;
  }

  try {
    if (*synth) return run_synth(sa);
    if (*train) return run_train(ta);
    if (*fit) return run_fit(fa);
    if (*rec) return run_reconstruct(ra);
    if (*ev) return run_eval(ea);
    if (*gc) return run_gradcheck(suite);
  } catch (const IoError& e) {
    std::fprintf(stderr, "lap: %s\n", e.what());
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "lap: %s\n", e.what());
    return kIo;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "lap: %s\n", e.what());
    return kInvalid;
  }
  return kInvalid;
}
