#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "lap/errors.hpp"
#include "lap/synth/synth.hpp"
#include "lap/tensor/checkpoint.hpp"
#include "lap/tensor/ops.hpp"
#include "lap/train/config.hpp"
#include "lap/train/fit.hpp"
#include "lap/train/optimizer.hpp"
#include "lap/train/trainer.hpp"

namespace {

using namespace lap;
using namespace lap::train;
namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

TensorMap scalar_weight(double w) { return {{"w", Tensor::scalar(w)}}; }

TEST(Adam, ZeroGradientLeavesWeightsAndCountsStep) {
  Adam adam;
  TensorMap w = scalar_weight(0.25);
  adam.step(w, scalar_weight(0.0));
  EXPECT_EQ(w.at("w")[0], 0.25);
  EXPECT_EQ(adam.steps(), 1);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Adam adam;
  TensorMap w = scalar_weight(0.0);
  adam.step(w, scalar_weight(1.0));
  EXPECT_NEAR(w.at("w")[0], -1e-4, 1e-12);
}

TEST(Adam, OpposingGradientsMostlyCancel) {
  Adam adam;
  TensorMap w = scalar_weight(0.0);
  adam.step(w, scalar_weight(1.0));
  adam.step(w, scalar_weight(-1.0));
  EXPECT_LT(std::abs(w.at("w")[0]), 1e-4);
}

TEST(Adam, MatchesHandIteration) {
  Adam adam({0.01, 0.9, 0.999, 1e-8});
  TensorMap w = scalar_weight(1.0);
  double m = 0, v = 0, x = 1.0;
  const double gs[] = {0.5, -2.0, 3.0};
  for (int t = 1; t <= 3; ++t) {
    const double g = gs[t - 1];
    adam.step(w, scalar_weight(g));
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    x -= 0.01 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
  }
  EXPECT_NEAR(w.at("w")[0], x, 1e-14);
}

TEST(Adam, RejectsMismatchedGradients) {
  Adam adam;
  TensorMap w = scalar_weight(0.0);
  EXPECT_THROW(adam.step(w, {{"w", Tensor({2})}}), ContractError);
  EXPECT_THROW(adam.step(w, {{"other", Tensor::scalar(1.0)}}), ContractError);
}

TEST(Adam, StateRoundTripContinuesIdentically) {
  Adam a;
  TensorMap wa = scalar_weight(0.5);
  a.step(wa, scalar_weight(0.3));
  Adam b;
  b.load_state(a.state());
  TensorMap wb = wa;
  a.step(wa, scalar_weight(-0.7));
  b.step(wb, scalar_weight(-0.7));
  EXPECT_EQ(wa.at("w")[0], wb.at("w")[0]);
  EXPECT_EQ(b.steps(), 2);
}

TEST(Config, DefaultsParseFromEmptyText) {
  const TrainConfig cfg = TrainConfig::parse("# nothing\n\n");
  EXPECT_EQ(cfg.batch_size, 8);
  EXPECT_DOUBLE_EQ(cfg.learning_rate, 1e-4);
  EXPECT_EQ(cfg.epochs_a, 20);
  EXPECT_EQ(cfg.hash(), TrainConfig{}.hash());
}

TEST(Config, ParsesValuesListsAndComments) {
  const TrainConfig cfg =
      TrainConfig::parse("image_size = 32  # smaller\nwidths = 4, 8,8,16,16\nlearning_rate=0.001\nseed = 9\n");
  EXPECT_EQ(cfg.net.image_size, 32);
  EXPECT_EQ(cfg.net.widths[1], 8);
  EXPECT_EQ(cfg.net.widths[4], 16);
  EXPECT_DOUBLE_EQ(cfg.learning_rate, 0.001);
  EXPECT_EQ(cfg.seed, 9u);
  EXPECT_EQ(TrainConfig::parse(cfg.dump()).hash(), cfg.hash());
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(TrainConfig::parse("learning_rat = 0.1\n"), ContractError);
  EXPECT_THROW(TrainConfig::parse("batch_size = eight\n"), ContractError);
  EXPECT_THROW(TrainConfig::parse("widths = 1,2,3\n"), ContractError);
  EXPECT_THROW(TrainConfig::parse("batch_size = 0\n"), ContractError);
  EXPECT_THROW(TrainConfig::load("/nonexistent/lap.cfg"), IoError);
}

TEST(Config, ThreadsDoNotAffectHash) {
  TrainConfig a, b;
  b.threads = 3;
  EXPECT_EQ(a.hash(), b.hash());
  b.seed = 2;
  EXPECT_NE(a.hash(), b.hash());
}

TEST(Plan, TrainableGroupsPerStage) {
  const TrainConfig cfg;
  const StagePlan a = plan_for(Stage::A, cfg), b = plan_for(Stage::B, cfg), c = plan_for(Stage::C, cfg);
  EXPECT_EQ(a.trainable, nn::kAggregationGroups);
  EXPECT_FALSE(a.refine);
  EXPECT_EQ(a.loss, objectives::LossKind::RelaxedConsistency);
  EXPECT_EQ(b.trainable, nn::kRefineGroups);
  EXPECT_TRUE(b.refine);
  EXPECT_EQ(c.trainable.size(), nn::kAggregationGroups.size() + nn::kRefineGroups.size());
  EXPECT_EQ(c.loss, objectives::LossKind::Reconstruction);
}

TEST(Plan, ValidationSplitIsAboutTenPercent) {
  int hits = 0;
  for (int i = 0; i < 2000; ++i) hits += is_validation("id_" + std::to_string(i), 10);
  EXPECT_GT(hits, 140);
  EXPECT_LT(hits, 260);
  EXPECT_EQ(is_validation("id_00042", 10), is_validation("id_00042", 10));
}

TrainConfig tiny_config() {
  TrainConfig cfg = TrainConfig::parse(
      "image_size = 16\ncode_size = 8\nwidths = 4,4,4,8,8\nhead_widths = 4,4,4,4\n"
      "batch_size = 3\nlearning_rate = 0.001\nepochs_a = 2\nepochs_b = 1\nepochs_c = 1\nval_modulus = 3\n");
  cfg.threads = 1;
  return cfg;
}

class TinyTraining : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / "lap_test_training";
    fs::remove_all(root_);
    synth::DatasetOptions o;
    o.identities = 8;
    o.views = 3;
    o.image_size = 16;
    o.seed = 5;
    synth::generate_dataset(root_ / "easy", o);
    o.tier = synth::Tier::Wild;
    synth::generate_dataset(root_ / "wild", o);
  }
  static void TearDownTestSuite() { if (!std::getenv("LAP_KEEP_TEST_DIR")) fs::remove_all(root_); }

  static TrainData data(const TrainConfig& cfg) { return load_training_data(root_ / "easy", root_ / "wild", cfg); }

  static inline fs::path root_;
};

TEST_F(TinyTraining, SplitHasBothParts) {
  const TrainData d = data(tiny_config());
  int val = 0;
  for (const Sample& s : d.easy) val += s.validation;
  EXPECT_GT(val, 0);
  EXPECT_LT(val, static_cast<int>(d.easy.size()));
}

TEST_F(TinyTraining, LaterStagesNeedEarlierCheckpoints) {
  const TrainConfig cfg = tiny_config();
  const fs::path out = root_ / "run_missing";
  EXPECT_THROW(train_stage(Stage::B, cfg, data(cfg), {out}), StagingError);
  EXPECT_THROW(train_stage(Stage::C, cfg, data(cfg), {out}), StagingError);
}

TEST_F(TinyTraining, ImageSizeMismatchIsRejected) {
  TrainConfig cfg = tiny_config();
  cfg.net.image_size = 32;
  EXPECT_THROW(load_training_data(root_ / "easy", {}, cfg), ContractError);
}

TEST_F(TinyTraining, StagesAreDeterministicFrozenAndReevaluable) {
  const TrainConfig cfg = tiny_config();
  const TrainData d = data(cfg);
  const fs::path run1 = root_ / "run1", run2 = root_ / "run2";
  const auto hist_a = train_stage(Stage::A, cfg, d, {run1});
  ASSERT_EQ(hist_a.size(), 2u);
  for (const auto& m : hist_a) {
    EXPECT_TRUE(std::isfinite(m.train_loss));
    EXPECT_TRUE(std::isfinite(m.val_loss));
  }
  train_stage(Stage::A, cfg, d, {run2});
  EXPECT_TRUE(slurp(checkpoint_path(run1, Stage::A)) == slurp(checkpoint_path(run2, Stage::A)));
  EXPECT_TRUE(slurp(sidecar_path(run1, Stage::A)) == slurp(sidecar_path(run2, Stage::A)));
  EXPECT_TRUE(slurp(run1 / "metrics_A.csv") == slurp(run2 / "metrics_A.csv"));

  // The logged validation loss is a function of the saved weights alone.
  const nn::ParamStore a = load_checkpoint(run1, Stage::A, cfg);
  EXPECT_NEAR(validation_loss(a, plan_for(Stage::A, cfg), cfg, d), hist_a.back().val_loss, 1e-10);

  // Stage A leaves the refine groups at their initial values.
  const nn::ParamStore init = nn::init_parameters(cfg.net, cfg.seed);
  for (const auto& [name, t] : a.tensors()) {
    if (nn::kRefineGroups.count(nn::group_of(name)) == 0) continue;
    EXPECT_EQ(t.storage(), init.at(name).storage()) << name;
  }

  const auto hist_b = train_stage(Stage::B, cfg, d, {run1});
  ASSERT_EQ(hist_b.size(), 1u);
  const nn::ParamStore b = load_checkpoint(run1, Stage::B, cfg);
  int changed = 0;
  for (const auto& [name, t] : b.tensors()) {
    const bool trainable = nn::kRefineGroups.count(nn::group_of(name)) > 0;
    if (!trainable) {
      EXPECT_EQ(t.storage(), a.at(name).storage()) << name;
    } else if (t.storage() != a.at(name).storage()) {
      ++changed;
    }
  }
  EXPECT_GT(changed, 0);
  EXPECT_NEAR(validation_loss(b, plan_for(Stage::B, cfg), cfg, d), hist_b.back().val_loss, 1e-10);

  train_stage(Stage::C, cfg, d, {run1});
  EXPECT_NO_THROW(load_checkpoint(run1, Stage::C, cfg));
}

TEST_F(TinyTraining, ResumeMatchesUninterruptedRun) {
  const TrainConfig cfg = tiny_config();
  const TrainData d = data(cfg);
  const fs::path full = root_ / "full", cut = root_ / "cut";
  train_stage(Stage::A, cfg, d, {full});
  TrainOptions stop{cut};
  stop.on_epoch = [](const EpochMetrics& m) {
    if (m.epoch == 1) throw std::runtime_error("interrupted");
  };
  EXPECT_THROW(train_stage(Stage::A, cfg, d, stop), std::runtime_error);
  TrainOptions resume{cut};
  resume.resume = true;
  const auto hist = train_stage(Stage::A, cfg, d, resume);
  EXPECT_EQ(hist.size(), 2u);
  EXPECT_TRUE(slurp(checkpoint_path(full, Stage::A)) == slurp(checkpoint_path(cut, Stage::A)));
  EXPECT_TRUE(slurp(full / "metrics_A.csv") == slurp(cut / "metrics_A.csv"));
}

TEST_F(TinyTraining, ThreadCountDoesNotChangeResults) {
  TrainConfig one = tiny_config(), two = tiny_config();
  one.epochs_a = two.epochs_a = 1;
  two.threads = 2;
  const TrainData d = data(one);
  train_stage(Stage::A, one, d, {root_ / "t1"});
  train_stage(Stage::A, two, d, {root_ / "t2"});
  EXPECT_TRUE(slurp(checkpoint_path(root_ / "t1", Stage::A)) == slurp(checkpoint_path(root_ / "t2", Stage::A)));
}

TEST_F(TinyTraining, CheckpointFromOtherArchitectureIsRejected) {
  const TrainConfig cfg = tiny_config();
  const fs::path dir = root_ / "arch";
  fs::create_directories(dir);
  TrainConfig other = cfg;
  other.net.code_size = 16;
  save_weights(checkpoint_path(dir, Stage::A), nn::init_parameters(other.net, 1).tensors());
  EXPECT_THROW(load_checkpoint(dir, Stage::A, cfg), StagingError);
}

Tensor self_rendered(std::uint64_t seed, int size, const render::Light& light) {
  const synth::Scene s = synth::generate_identity(seed, size);
  Tape t;
  const render::Camera cam(size, size);
  return render::render(t.constant(s.albedo.reshaped({3, size, size})), t.constant(s.depth.reshaped({1, size, size})),
                        t.constant(light.to_tensor()), t.constant(render::Pose{}.to_tensor()), cam)
      .image.value();
}

TEST(FitSingle, ZeroIterationsReturnInitialization) {
  const render::Camera cam(16, 16);
  FitOptions o;
  o.iterations = 0;
  const FitResult r = fit_single(self_rendered(3, 16, {}), cam, o);
  EXPECT_TRUE(r.loss_trace.empty());
  for (double v : r.factors.albedo.data()) EXPECT_EQ(v, 0.5);
  for (double v : r.factors.depth.data()) EXPECT_EQ(v, 1.0);
  EXPECT_EQ(r.factors.light.ambient, 0.5);
  EXPECT_EQ(r.factors.light.diffuse, 0.5);
  EXPECT_EQ(r.factors.light.lx, 0.0);
  EXPECT_EQ(r.factors.pose.yaw, 0.0);
  EXPECT_EQ(r.factors.pose.tz, 0.0);
  EXPECT_EQ(r.factors.sigma, 1.0);
}

TEST(FitSingle, LossTraceStaysFiniteAcrossSeeds) {
  const render::Camera cam(16, 16);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    FitOptions o;
    o.iterations = 40;
    o.seed = seed;
    o.init_jitter = 0.05;
    const render::Light light{0.4, 0.5, 0.01 * static_cast<double>(seed) - 0.1, 0.05};
    const FitResult r = fit_single(self_rendered(synth::mix_seed(11, seed), 16, light), cam, o);
    ASSERT_EQ(r.loss_trace.size(), 40u);
    for (double l : r.loss_trace) ASSERT_TRUE(std::isfinite(l)) << "seed " << seed;
    EXPECT_LT(r.loss_trace.back(), r.loss_trace.front()) << "seed " << seed;
  }
}

TEST(FitSingle, IsDeterministic) {
  const render::Camera cam(16, 16);
  FitOptions o;
  o.iterations = 15;
  const Tensor img = self_rendered(4, 16, {});
  const FitResult a = fit_single(img, cam, o), b = fit_single(img, cam, o);
  EXPECT_EQ(a.loss_trace, b.loss_trace);
  EXPECT_EQ(a.factors.depth.storage(), b.factors.depth.storage());
}

TEST(FitSingle, PoseHeldDuringWarmup) {
  const render::Camera cam(16, 16);
  const Tensor img = self_rendered(5, 16, {0.4, 0.5, 0.2, 0.0});
  FitOptions o;
  o.iterations = 30;
  o.pose_warmup = 30;
  const FitResult held = fit_single(img, cam, o);
  const Tensor held_pose = held.factors.pose.to_tensor();
  for (double v : held_pose.data()) EXPECT_EQ(v, 0.0);
  EXPECT_NE(held.factors.light.lx, 0.0);
  o.pose_warmup = 10;
  const FitResult moved = fit_single(img, cam, o);
  EXPECT_NE(moved.factors.pose.to_tensor().storage(), held_pose.storage());
}

TEST(FitSingle, RejectsBadInputs) {
  const render::Camera cam(16, 16);
  EXPECT_THROW(fit_single(Tensor({3, 8, 8}), cam), ShapeError);
  FitOptions o;
  o.depth_grid_factor = 3;
  EXPECT_THROW(fit_single(Tensor({3, 16, 16}), cam, o), ContractError);
}

}  // namespace
