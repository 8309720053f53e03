#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "json.hpp"
#include "lap/errors.hpp"
#include "lap/eval/metrics.hpp"
#include "lap/eval/reconstruct.hpp"
#include "lap/eval/report.hpp"
#include "lap/synth/synth.hpp"
#include "lap/tensor/checkpoint.hpp"
#include "lap/tensor/ops.hpp"
#include "lap/train/trainer.hpp"

namespace {

using namespace lap;
using namespace lap::eval;
namespace fs = std::filesystem;

Tensor map_of(int h, int w, std::vector<double> v) { return Tensor({1, h, w}, std::move(v)); }

Tensor random_depth(std::mt19937_64& rng, int h, int w) {
  std::uniform_real_distribution<double> u(0.8, 1.2);
  Tensor t({1, h, w});
  for (double& v : t.data()) v = u(rng);
  return t;
}

Tensor flip(const Tensor& t) {
  Tensor out = t;
  const int c = t.dim(0), h = t.dim(1), w = t.dim(2);
  for (int k = 0; k < c; ++k)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(k, y, x) = t.at(k, y, w - 1 - x);
  return out;
}

TEST(Side, ZeroForEqualAndScaledDepth) {
  std::mt19937_64 rng(1);
  const Tensor d = random_depth(rng, 5, 6), mask({1, 5, 6}, 1.0);
  EXPECT_EQ(side(d, d, mask), 0.0);
  Tensor twice = d;
  for (double& v : twice.data()) v *= 2.0;
  EXPECT_NEAR(side(twice, d, mask), 0.0, 1e-7);
  EXPECT_NEAR(side(d, twice, mask), 0.0, 1e-7);
}

TEST(Side, TwoPixelExample) {
  // Deltas (0, ln 2): population std of two values is half their difference.
  const Tensor gt = map_of(1, 3, {1.0, 1.0, 5.0}), pred = map_of(1, 3, {1.0, 2.0, 0.5});
  const Tensor mask = map_of(1, 3, {1.0, 1.0, 0.0});
  EXPECT_NEAR(side(pred, gt, mask), std::log(2.0) / 2.0, 1e-12);
}

TEST(Side, MatchesDirectVarianceOnRandomMaps) {
  std::mt19937_64 rng(2);
  const Tensor a = random_depth(rng, 4, 4), b = random_depth(rng, 4, 4);
  Tensor mask({1, 4, 4}, 1.0);
  mask[3] = mask[7] = 0.0;
  std::vector<double> d;
  for (std::size_t i = 0; i < 16; ++i)
    if (mask[i] != 0.0) d.push_back(std::log(a[i] / b[i]));
  double mu = 0.0;
  for (double v : d) mu += v / d.size();
  double var = 0.0;
  for (double v : d) var += (v - mu) * (v - mu) / d.size();
  EXPECT_NEAR(side(a, b, mask), std::sqrt(var), 1e-12);
}

TEST(Side, Errors) {
  const Tensor d({1, 2, 2}, 1.0);
  EXPECT_THROW(side(d, d, Tensor({1, 2, 2}, 0.0)), EmptyDomainError);
  EXPECT_THROW(side(map_of(1, 2, {1.0, -1.0}), map_of(1, 2, {1.0, 1.0}), map_of(1, 2, {1.0, 1.0})), DomainError);
  EXPECT_THROW(side(d, Tensor({1, 3, 2}, 1.0), d), ShapeError);
}

// Unit normals and a second set tilted by `deg` about a per-pixel perpendicular axis.
std::pair<Tensor, Tensor> tilted_normals(std::mt19937_64& rng, int h, int w, double deg) {
  std::normal_distribution<double> g;
  Tensor n({3, h, w}), m({3, h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const double t = deg * std::numbers::pi / 180.0;
  for (std::size_t i = 0; i < plane; ++i) {
    double a[3] = {g(rng), g(rng), g(rng)}, r[3] = {g(rng), g(rng), g(rng)};
    const double na = std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
    for (double& v : a) v /= na;
    const double dot = r[0] * a[0] + r[1] * a[1] + r[2] * a[2];
    for (int k = 0; k < 3; ++k) r[k] -= dot * a[k];
    const double nr = std::sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2]);
    for (int k = 0; k < 3; ++k) {
      n[k * plane + i] = a[k];
      m[k * plane + i] = std::cos(t) * a[k] + std::sin(t) * r[k] / nr;
    }
  }
  return {n, m};
}

TEST(Mad, ConstructedAngles) {
  std::mt19937_64 rng(3);
  const Tensor mask({1, 4, 5}, 1.0);
  for (double deg : {0.0, 30.0, 90.0}) {
    const auto [n, m] = tilted_normals(rng, 4, 5, deg);
    EXPECT_NEAR(mad(m, n, mask), deg, 1e-6) << deg;
    EXPECT_NEAR(mad(n, m, mask), mad(m, n, mask), 1e-12);
  }
  const auto [n, m] = tilted_normals(rng, 4, 5, 30.0);
  EXPECT_NEAR(mad(m, n, mask), 30.0, 1e-9);
  EXPECT_NEAR(mad(n, n, mask), 0.0, 1e-12);
  EXPECT_THROW(mad(n, m, Tensor({1, 4, 5}, 0.0)), EmptyDomainError);
}

TEST(DepthCorr, HandExampleAndAffineInvariance) {
  const Tensor a = map_of(1, 3, {1, 2, 3}), b = map_of(1, 3, {1, 2, 4});
  const std::vector<Keypoint> k{{0, 0}, {1, 0}, {2, 0}};
  // means 2 and 7/3; covariance sum 3; variance sums 2 and 42/9.
  EXPECT_NEAR(depth_corr(a, b, k), 100.0 * 3.0 / std::sqrt(2.0 * 42.0 / 9.0), 1e-12);
  EXPECT_NEAR(depth_corr(a, b, k), 98.198, 1e-3);
  EXPECT_NEAR(depth_corr(b, a, k), depth_corr(a, b, k), 1e-12);

  std::mt19937_64 rng(4);
  const Tensor d = random_depth(rng, 6, 6);
  Tensor affine = d, negated = d;
  for (double& v : affine.data()) v = 3.0 * v + 0.5;
  for (double& v : negated.data()) v = -v;
  const std::vector<Keypoint> kp{{0.5, 1.0}, {4.0, 2.5}, {2.0, 5.0}, {5.0, 0.0}, {3.25, 3.75}};
  EXPECT_NEAR(depth_corr(affine, d, kp), 100.0, 1e-9);
  EXPECT_NEAR(depth_corr(negated, d, kp), -100.0, 1e-9);
}

TEST(DepthCorr, DegenerateInputs) {
  const Tensor a = map_of(1, 3, {1, 2, 3});
  EXPECT_THROW(depth_corr(a, a, {{0, 0}, {1, 0}}), DegenerateInputError);
  EXPECT_THROW(depth_corr(a, a, {{0, 0}, {1, 0}, {7, 0}}), DegenerateInputError);
  EXPECT_THROW(depth_corr(Tensor({1, 1, 3}, 2.0), a, {{0, 0}, {1, 0}, {2, 0}}), DegenerateInputError);
}

TEST(Ssim, IdentityConstantsAndSymmetry) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  Tensor x({3, 16, 14}), y({3, 16, 14});
  for (double& v : x.data()) v = u(rng);
  for (double& v : y.data()) v = u(rng);
  Tensor mask({1, 16, 14}, 0.0);
  for (int yy = 3; yy < 13; ++yy)
    for (int xx = 2; xx < 9; ++xx) mask.at(0, yy, xx) = 1.0;
  EXPECT_NEAR(ssim(x, x, mask), 1.0, 1e-12);
  EXPECT_NEAR(ssim(x, y, mask), ssim(y, x, mask), 1e-12);
  EXPECT_NEAR(ssim(flip(x), flip(y), flip(mask)), ssim(x, y, mask), 1e-12);
  const double c1 = 1e-4;
  EXPECT_NEAR(ssim(Tensor({1, 12, 12}, 0.0), Tensor({1, 12, 12}, 1.0), Tensor({1, 12, 12}, 1.0)), c1 / (1 + c1), 1e-6);
  EXPECT_LT(ssim(x, y, mask), 0.5);
}

TEST(Ssim, Errors) {
  EXPECT_THROW(ssim(Tensor({3, 10, 20}), Tensor({3, 10, 20}), Tensor({1, 10, 20}, 1.0)), ShapeError);
  EXPECT_THROW(ssim(Tensor({3, 12, 12}), Tensor({3, 12, 12}), Tensor({1, 12, 12}, 0.0)), EmptyDomainError);
}

TEST(Psnr, ConstantOffset) {
  const Tensor a({3, 4, 4}, 0.5), b({3, 4, 4}, 0.6), mask({1, 4, 4}, 1.0);
  EXPECT_NEAR(psnr(a, b, mask), 20.0, 1e-9);
  EXPECT_NEAR(photometric_error(a, b, mask), 0.1, 1e-12);
}

TEST(AlignMedian, ShiftsToGroundTruthMedian) {
  const Tensor pred = map_of(1, 4, {1.0, 2.0, 3.0, 100.0}), gt = map_of(1, 4, {5.0, 6.0, 7.0, 0.0});
  const Tensor mask = map_of(1, 4, {1, 1, 1, 0});
  const Tensor out = align_median_shift(pred, gt, mask);
  EXPECT_DOUBLE_EQ(out[1], 6.0);
  EXPECT_DOUBLE_EQ(out[3], 104.0);
}

TEST(Report, ParsesMetricLists) {
  EXPECT_EQ(parse_metrics("side,corr").size(), 2u);
  EXPECT_THROW(parse_metrics("side,psnr"), ContractError);
  EXPECT_THROW(parse_metrics("side,side"), ContractError);
}

TEST(Report, AggregatesAreRowMeans) {
  EvalReport r;
  r.metrics = {"side", "mad"};
  r.rows = {{"a", {{"side", 1.0}, {"mad", 10.0}}, 5, 1}, {"b", {{"side", 3.0}, {"mad", 20.0}}, 5, 1}};
  r.finalize();
  EXPECT_DOUBLE_EQ(r.mean.at("side"), 2.0);
  EXPECT_DOUBLE_EQ(r.stddev.at("side"), 1.0);
  EXPECT_DOUBLE_EQ(r.stddev.at("mad"), 5.0);
  EXPECT_TRUE(r.consistent());
  r.rows[0].values["side"] = 2.0;
  EXPECT_FALSE(r.consistent());
  EXPECT_NE(r.csv().find("side_x1e-2"), std::string::npos);
}

class EvalOnSynth : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / "lap_test_eval";
    fs::remove_all(root_);
    synth::DatasetOptions o;
    o.identities = 3;
    o.views = 2;
    o.image_size = 32;
    synth::generate_dataset(root_ / "gt", o);
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }
  static inline fs::path root_;
};

TEST_F(EvalOnSynth, GroundTruthAgainstItselfIsPerfect) {
  const EvalReport r = evaluate_directories(root_ / "gt", root_ / "gt");
  ASSERT_EQ(r.rows.size(), 3u);
  for (const EvalRow& row : r.rows) {
    EXPECT_EQ(row.values.at("side"), 0.0);
    EXPECT_NEAR(row.values.at("mad"), 0.0, 1e-12);
    EXPECT_NEAR(row.values.at("ssim"), 1.0, 1e-12);
    EXPECT_NEAR(row.values.at("corr"), 100.0, 1e-9);
    EXPECT_GT(row.masked_pixels, 0u);
  }
  EXPECT_TRUE(r.consistent());
  const EvalReport single = evaluate_directories(root_ / "gt" / "id_00001", root_ / "gt" / "id_00001");
  EXPECT_EQ(single.rows.size(), 1u);
}

TEST_F(EvalOnSynth, MissingPredictionNamesThePath) {
  fs::create_directories(root_ / "pred");
  try {
    evaluate_directories(root_ / "pred", root_ / "gt");
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("id_00000"), std::string::npos);
  }
}

train::TrainConfig small_config() {
  return train::TrainConfig::parse("image_size = 16\ncode_size = 8\nwidths = 4,4,4,8,8\nhead_widths = 4,4,4,4\n");
}

Tensor random_images(std::mt19937_64& rng, int n, int s) {
  std::uniform_real_distribution<double> u(0, 1);
  Tensor t({n, 3, s, s});
  for (double& v : t.data()) v = u(rng);
  return t;
}

Tensor view(const Tensor& images, int i) {
  const std::size_t plane = images.numel() / static_cast<std::size_t>(images.dim(0));
  Tensor out({1, images.dim(1), images.dim(2), images.dim(3)});
  std::copy(images.data().begin() + static_cast<std::ptrdiff_t>(i * plane),
            images.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * plane), out.data().begin());
  return out;
}

TEST(Reconstruct, OutputsRespectRanges) {
  const train::TrainConfig cfg = small_config();
  const Model m{nn::init_parameters(cfg.net, 3), cfg, train::Stage::B};
  std::mt19937_64 rng(6);
  const Reconstruction r = reconstruct(m, random_images(rng, 3, 16), 1);
  EXPECT_TRUE(r.personalized);
  for (double v : r.canonical_albedo.data()) EXPECT_TRUE(v >= 0.0 && v <= 1.0);
  for (double v : r.target_albedo.data()) EXPECT_TRUE(v >= 0.0 && v <= 1.0);
  for (double v : r.canonical_depth.data()) EXPECT_TRUE(v >= 0.9 && v <= 1.1);
  for (double v : r.target_depth.data()) EXPECT_TRUE(v >= 0.9 && v <= 1.1);
  for (double v : r.sigma.data()) EXPECT_GT(v, 0.0);
  for (double v : r.rendered.data()) EXPECT_TRUE(v >= 0.0 && v <= 1.0);
  const std::size_t plane = 16 * 16;
  for (std::size_t i = 0; i < plane; ++i) {
    double n2 = 0.0;
    for (std::size_t k = 0; k < 3; ++k) n2 += r.canonical_normals[k * plane + i] * r.canonical_normals[k * plane + i];
    EXPECT_NEAR(n2, 1.0, 1e-9);
  }
  EXPECT_LE(std::abs(r.pose.yaw), 60.0);
  EXPECT_LE(std::abs(r.pose.tz), 0.05);
}

TEST(Reconstruct, SetOrderDoesNotMatterAndSingleImageIsPlainInference) {
  const train::TrainConfig cfg = small_config();
  const Model m{nn::init_parameters(cfg.net, 4), cfg, train::Stage::A};
  std::mt19937_64 rng(7);
  const Tensor images = random_images(rng, 3, 16);
  Tensor swapped = images;
  const std::size_t plane = images.numel() / 3;
  std::copy(images.data().begin(), images.data().begin() + static_cast<std::ptrdiff_t>(plane),
            swapped.data().begin() + static_cast<std::ptrdiff_t>(2 * plane));
  std::copy(images.data().begin() + static_cast<std::ptrdiff_t>(2 * plane), images.data().end(),
            swapped.data().begin());
  const Reconstruction a = reconstruct(m, images, 1), b = reconstruct(m, swapped, 1);
  EXPECT_EQ(a.canonical_depth, b.canonical_depth);
  EXPECT_EQ(a.rendered, b.rendered);
  EXPECT_FALSE(a.personalized);

  const Reconstruction single = reconstruct(m, view(images, 1), 0);
  Tape tape;
  const nn::Binding p(tape, m.weights, {});
  const nn::CanonicalFace face = nn::canonical_face(p, cfg.net, tape.constant(view(images, 1)));
  EXPECT_EQ(single.canonical_depth, train::item(face.depth, 0).value());
}

TEST(Reconstruct, StageAHasNoPersonalizedFactors) {
  const train::TrainConfig cfg = small_config();
  const Model m{nn::init_parameters(cfg.net, 5), cfg, train::Stage::A};
  std::mt19937_64 rng(8);
  EXPECT_THROW(reconstruct(m, random_images(rng, 2, 16), 0, Personalize::Yes), CapabilityError);
  EXPECT_THROW(reconstruct(m, random_images(rng, 2, 16), 2), ContractError);
}

TEST(Reconstruct, LoadsCheckpointsAndWritesBundles) {
  const fs::path dir = fs::temp_directory_path() / "lap_test_reconstruct";
  fs::remove_all(dir);
  EXPECT_THROW(load_model(dir / "stage_B.lapw"), IoError);
  const train::TrainConfig cfg = small_config();
  fs::create_directories(dir);
  save_weights(dir / "stage_B.lapw", nn::init_parameters(cfg.net, 6).tensors());
  EXPECT_THROW(load_model(dir / "stage_B.lapw"), IoError);
  {
    std::ofstream side(dir / "stage_B.json");
    side << "{\"stage\": \"B\", \"config\": " << nlohmann::json(cfg.dump()).dump() << "}\n";
  }
  const Model m = load_model(dir / "stage_B.lapw");
  EXPECT_EQ(m.stage, train::Stage::B);
  EXPECT_EQ(m.config.hash(), cfg.hash());
  std::mt19937_64 rng(9);
  write_reconstruction(dir / "out", reconstruct(m, random_images(rng, 2, 16), 0));
  for (const char* f : {"canonical_albedo.png", "canonical_depth.lapd", "canonical_normals.png", "target_albedo.png",
                        "target_depth.lapd", "target_normals.png", "sigma.lapd", "sigma_flip.lapd", "rendered.png",
                        "rendered_flip.png", "factors.json"}) {
    EXPECT_TRUE(fs::exists(dir / "out" / f)) << f;
  }
  fs::remove_all(dir);
}

}  // namespace
