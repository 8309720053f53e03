// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance [--work DIR] [--only 1,5,...] [--strict] [--report FILE]
//
// Without --strict the exit status is 0 whenever every criterion ran to a
// verdict (red lines are reported, not hidden); with --strict any FAIL exits 1.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lap/errors.hpp"
#include "lap/eval/gradsuite.hpp"
#include "lap/eval/metrics.hpp"
#include "lap/eval/reconstruct.hpp"
#include "lap/io/image_io.hpp"
#include "lap/nn/networks.hpp"
#include "lap/objectives/losses.hpp"
#include "lap/render/renderer.hpp"
#include "lap/synth/synth.hpp"
#include "lap/tensor/ops.hpp"
#include "lap/train/fit.hpp"
#include "lap/train/trainer.hpp"

namespace fs = std::filesystem;
using namespace lap;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// Settings shared by criteria 6 and 7.
constexpr int kImageSize = 32;
constexpr int kIdentities = 200;
constexpr int kViews = 6;
constexpr std::uint64_t kDataSeed = 1;

// Stage A/B run on the default 8-identity batches would take only ~25 Adam
// steps per epoch; one identity per batch gives ~180 at the same cost.
const char* kTrainConfig =
    "image_size = 32\n"
    "batch_size = 1\n"
    "epochs_a = 20\n"
    "epochs_b = 20\n"
    "seed = 1\n";

// ---------------------------------------------------------------------------
// 1. Gradient suite.

Verdict gradient_suite() {
  const auto t0 = Clock::now();
  const auto rows = eval::run_gradient_suite("all");
  const double secs = seconds_since(t0);
  std::map<std::string, double> worst;
  int failed = 0;
  for (const auto& r : rows) {
    worst[r.suite] = std::max(worst[r.suite], r.max_rel_error);
    if (!r.pass()) {
      ++failed;
      std::printf("    gradient check failed: %s/%s %.3e (tol %.0e)\n", r.suite.c_str(), r.name.c_str(), r.max_rel_error,
                  r.tolerance);
    }
  }
  // Tolerances are fixed per suite inside the library; restate the required
  // ones here so a loosened library value cannot pass silently.
  const bool within = worst["primitives"] < 1e-4 && worst["renderer"] < 1e-3 && worst["losses"] < 1e-5 &&
                      worst["networks"] < 1e-3;
  return {failed == 0 && within && secs < 120.0,
          fmt("%zu checks, worst primitives %.1e (<1e-4), renderer %.1e (<1e-3), losses %.1e (<1e-5), networks %.1e "
              "(<1e-3), %.1fs (<120s)",
              rows.size(), worst["primitives"], worst["renderer"], worst["losses"], worst["networks"], secs)};
}

// ---------------------------------------------------------------------------
// 2. Closed-form loss values.

Verdict closed_form_losses() {
  Tape t;
  const double ln_sqrt2 = 0.5 * std::log(2.0), sqrt2 = std::sqrt(2.0);
  const Tensor img({3, 4, 5}, 0.25);
  const Var a = t.constant(img);
  auto sigma = [&t](int h, int w, double v) { return t.constant(Tensor({1, h, w}, v)); };

  std::vector<std::pair<double, double>> got_want;
  got_want.emplace_back(objectives::recon_nll(a, a, sigma(4, 5, 1.0 / sqrt2)).value().item(), 0.0);
  got_want.emplace_back(objectives::recon_nll(a, a, sigma(4, 5, 1.0)).value().item(), ln_sqrt2);
  const Var zero = t.constant(Tensor({3, 1, 1}, 0.0)), one = t.constant(Tensor({3, 1, 1}, 1.0));
  got_want.emplace_back(objectives::recon_nll(one, zero, sigma(1, 1, 1.0)).value().item(), ln_sqrt2 + sqrt2);

  // Two pixels: weights (1, 0.3), residuals (0, 1).
  Tensor pred({3, 1, 2}, 0.0), target({3, 1, 2}, 0.0);
  for (int c = 0; c < 3; ++c) pred.at(c, 0, 1) = 1.0;
  const objectives::RelaxedMask mask(Tensor({1, 1, 2}, std::vector<double>{1.0, 0.3}));
  got_want.emplace_back(
      objectives::relaxed_consistency(t.constant(pred), t.constant(target), sigma(1, 2, 1.0), mask).value().item(),
      (ln_sqrt2 + (ln_sqrt2 + 0.3 * sqrt2)) / 1.3);

  double worst = 0.0;
  for (const auto& [g, w] : got_want) worst = std::max(worst, std::abs(g - w));
  // The rounded reference decimals 1.760788 and 0.859558 disagree with their own
  // closed forms in the last places (1.7607871..., 0.8595471...); the closed
  // forms are what is checked, the decimals are only reported.
  const double rcl = (2 * ln_sqrt2 + 0.3 * sqrt2) / 1.3;
  return {worst < 1e-9,
          fmt("0 / %.7f / %.7f / %.7f reproduced, max abs error %.1e (<1e-9); rounded references 1.760788 and "
              "0.859558 differ from the closed forms by %.1e and %.1e",
              ln_sqrt2, ln_sqrt2 + sqrt2, rcl, worst, std::abs(ln_sqrt2 + sqrt2 - 1.760788), std::abs(rcl - 0.859558))};
}

// ---------------------------------------------------------------------------
// 3. Aggregation properties.

Verdict aggregation() {
  nn::NetConfig cfg;
  cfg.image_size = 16;
  cfg.code_size = 32;
  const nn::ParamStore store = nn::init_parameters(cfg, 7);
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g;
  bool permutation = true, identity = true, hull = true;
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + trial % 6;
    Tensor codes({n, cfg.code_size});
    for (double& v : codes.data()) v = 2.0 * g(rng);
    std::vector<int> perm(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor shuffled({n, cfg.code_size});
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < cfg.code_size; ++j)
        shuffled[static_cast<std::size_t>(i * cfg.code_size + j)] =
            codes[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)] * cfg.code_size + j)];
    Tape t;
    nn::Binding p(t, store);
    const Tensor out = nn::aggregate_codes(p, "agg_a", t.constant(codes)).value();
    const Tensor out_perm = nn::aggregate_codes(p, "agg_a", t.constant(shuffled)).value();
    permutation = permutation && out.storage() == out_perm.storage();
    if (n == 1) identity = identity && out.storage() == codes.storage();
    for (int j = 0; j < cfg.code_size; ++j) {
      double lo = 1e300, hi = -1e300;
      for (int i = 0; i < n; ++i) {
        lo = std::min(lo, codes[static_cast<std::size_t>(i * cfg.code_size + j)]);
        hi = std::max(hi, codes[static_cast<std::size_t>(i * cfg.code_size + j)]);
      }
      hull = hull && out[static_cast<std::size_t>(j)] >= lo && out[static_cast<std::size_t>(j)] <= hi;
    }
  }
  Tape t;
  const Var raw = t.constant(Tensor({2, 1}, std::vector<double>{std::log(3.0), 0.0}));
  const Var codes = t.constant(Tensor({2, 1}, std::vector<double>{1.0, -1.0}));
  const double hand = nn::set_softmax_pool(raw, codes).value().item();
  const bool example = std::abs(hand - 0.5) < 1e-12;
  return {permutation && identity && hull && example,
          fmt("permutation bit-exact %s, N=1 identity bit-exact %s, convex hull %s (50 sets), softmax example %.15f",
              permutation ? "yes" : "NO", identity ? "yes" : "NO", hull ? "yes" : "NO", hand)};
}

// ---------------------------------------------------------------------------
// 4. Metric oracles.

Tensor unit_rows(std::mt19937_64& rng, int h, int w, double tilt_deg, Tensor* base) {
  std::normal_distribution<double> g;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  Tensor n({3, h, w}), m({3, h, w});
  const double t = tilt_deg * std::numbers::pi / 180.0;
  for (std::size_t i = 0; i < plane; ++i) {
    double a[3] = {g(rng), g(rng), g(rng)}, r[3] = {g(rng), g(rng), g(rng)};
    const double na = std::hypot(a[0], a[1], a[2]);
    for (double& v : a) v /= na;
    const double dot = r[0] * a[0] + r[1] * a[1] + r[2] * a[2];
    for (int k = 0; k < 3; ++k) r[k] -= dot * a[k];
    const double nr = std::hypot(r[0], r[1], r[2]);
    for (int k = 0; k < 3; ++k) {
      n[k * plane + i] = a[k];
      m[k * plane + i] = std::cos(t) * a[k] + std::sin(t) * r[k] / nr;
    }
  }
  *base = n;
  return m;
}

Verdict metric_oracles() {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.9, 1.1);
  Tensor d({1, 8, 8});
  for (double& v : d.data()) v = u(rng);
  Tensor d2 = d;
  for (double& v : d2.data()) v *= 2.0;
  const Tensor full({1, 8, 8}, 1.0);
  const double side_scaled = eval::side(d2, d, full);
  const double side_two = eval::side(Tensor({1, 1, 2}, std::vector<double>{1.0, 2.0}), Tensor({1, 1, 2}, 1.0),
                                     Tensor({1, 1, 2}, 1.0));
  const double side_want = std::log(2.0) / 2.0;

  double mad_err = 0.0;
  for (double deg : {0.0, 30.0, 90.0}) {
    Tensor base;
    const Tensor tilted = unit_rows(rng, 6, 7, deg, &base);
    mad_err = std::max(mad_err, std::abs(eval::mad(tilted, base, Tensor({1, 6, 7}, 1.0)) - deg));
  }

  // Pearson of (1,2,3) vs (1,2,4): cov 1.5, sd 1 and sqrt(7/3).
  Tensor p({1, 1, 3}, std::vector<double>{1, 2, 3}), q({1, 1, 3}, std::vector<double>{1, 2, 4});
  const double corr = eval::depth_corr(p, q, {{0.0, 0.0}, {1.0, 0.0}, {2.0, 0.0}});
  const double corr_want = 100.0 * 1.5 / std::sqrt(1.0 * 7.0 / 3.0) / std::sqrt(1.0);

  const double c1 = 0.01 * 0.01;
  const double s = eval::ssim(Tensor({1, 12, 12}, 0.0), Tensor({1, 12, 12}, 1.0), Tensor({1, 12, 12}, 1.0));

  const bool ok = std::abs(side_scaled) < 1e-12 && std::abs(side_two - side_want) < 1e-12 && mad_err < 1e-6 &&
                  std::abs(corr - 98.198) < 1e-3 && std::abs(corr - corr_want) < 1e-9 &&
                  std::abs(s - c1 / (1 + c1)) < 1e-6;
  return {ok, fmt("SIDE(2d,d) %.1e, two-pixel SIDE %.9f (ln2/2 %.9f), MAD err %.1e deg, corr %.4f, SSIM %.6e (C1/(1+C1) "
                  "%.6e)",
                  side_scaled, side_two, side_want, mad_err, corr, s, c1 / (1 + c1))};
}

// ---------------------------------------------------------------------------
// 5. Inverse rendering recovery with fit_single.

Verdict fit_recovery() {
  constexpr int kSize = 64, kScenes = 10;
  const render::Camera cam(kSize, kSize);
  int passed = 0;
  double worst_psnr = 1e9, worst_side = 0.0, flat_side = 0.0, slowest = 0.0;
  for (int s = 0; s < kScenes; ++s) {
    const synth::Scene scene = synth::generate_identity(synth::mix_seed(2024, static_cast<std::uint64_t>(s)), kSize);
    std::mt19937_64 rng(synth::mix_seed(77, static_cast<std::uint64_t>(s)));
    auto u = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    const render::Light light{u(0.3, 0.6), u(0.3, 0.7), u(-0.3, 0.3), u(-0.3, 0.3)};
    Tape t;
    const render::RenderOutput target =
        render::render(t.constant(scene.albedo), t.constant(scene.depth), t.constant(light.to_tensor()),
                       t.constant(render::Pose{}.to_tensor()), cam);

    const auto t0 = Clock::now();
    const train::FitResult r = train::fit_single(target.image.value(), cam, {});
    slowest = std::max(slowest, seconds_since(t0));

    Tensor covered = target.coverage.value();
    for (double& v : covered.data()) v = v > 0.0 ? 1.0 : 0.0;
    Tensor face = scene.labels;
    for (double& v : face.data()) v = v != 0.0 ? 1.0 : 0.0;
    const double psnr = eval::psnr(r.rendered, target.image.value(), covered);
    const double side = eval::side(r.factors.depth, scene.depth, face);
    flat_side = std::max(flat_side, eval::side(Tensor(scene.depth.shape(), 1.0), scene.depth, face));
    worst_psnr = std::min(worst_psnr, psnr);
    worst_side = std::max(worst_side, side);
    if (psnr > 30.0 && side < 0.05) ++passed;
    std::printf("    scene %d: PSNR %.2f dB, SIDE %.4f\n", s, psnr, side);
    std::fflush(stdout);
  }
  return {passed == kScenes && slowest < 300.0,
          fmt("%d/%d scenes; worst PSNR %.2f dB (>30), worst SIDE %.4f (<0.05; flat-depth start scores up to %.4f), "
              "slowest %.1fs (<300s)",
              passed, kScenes, worst_psnr, worst_side, flat_side, slowest)};
}

// ---------------------------------------------------------------------------
// 6 and 7. Training runs on the default synthetic sets.

struct Datasets {
  fs::path easy, wild;
};

Datasets ensure_datasets(const fs::path& work) {
  Datasets d{work / "easy_32", work / "wild_32"};
  for (const auto& [dir, tier] : {std::pair{d.easy, synth::Tier::Easy}, std::pair{d.wild, synth::Tier::Wild}}) {
    fs::remove_all(dir);
    synth::DatasetOptions o;
    o.identities = kIdentities;
    o.views = kViews;
    o.tier = tier;
    o.seed = kDataSeed;
    o.image_size = kImageSize;
    synth::generate_dataset(dir, o);
  }
  return d;
}

Tensor view_of(const Tensor& images, int i) {
  const Shape& s = images.shape();
  Tensor out({1, s[1], s[2], s[3]});
  const std::size_t n = out.numel();
  std::copy_n(images.storage().begin() + static_cast<std::ptrdiff_t>(i * n), n, out.storage().begin());
  return out;
}

Tensor squeeze_view(const Tensor& images, int i) {
  const Shape& s = images.shape();
  return view_of(images, i).reshaped({s[1], s[2], s[3]});
}

struct StageARun {
  std::vector<train::EpochMetrics> history;
  double seconds = 0.0;
};

Verdict stage_a(const fs::path& work, const Datasets& data, StageARun* run) {
  const train::TrainConfig cfg = train::TrainConfig::parse(kTrainConfig);
  const train::TrainData td = train::load_training_data(data.easy, {}, cfg);
  train::TrainOptions opt;
  opt.out_dir = work / "run";
  fs::remove_all(opt.out_dir);
  opt.on_epoch = [](const train::EpochMetrics& m) {
    std::printf("    stage A epoch %2d: train %.5f val %.5f\n", m.epoch, m.train_loss, m.val_loss);
    std::fflush(stdout);
  };
  const auto t0 = Clock::now();
  run->history = train::train_stage(train::Stage::A, cfg, td, opt);
  run->seconds = seconds_since(t0);

  // (a) validation loss.
  const auto& h = run->history;
  const double first = h.front().val_loss, last = h.back().val_loss;
  // Up to noise: no epoch may sit above the running best by more than 10% of
  // the total decrease.
  double best = first, worst_rise = 0.0;
  for (const auto& m : h) {
    worst_rise = std::max(worst_rise, m.val_loss - best);
    best = std::min(best, m.val_loss);
  }
  const double drop = first - last;
  const bool a_ok = last < 0.5 * first && drop > 0.0 && worst_rise <= 0.1 * drop;

  // (b), (c) canonical depth on validation identities.
  const eval::Model model = eval::load_model(train::checkpoint_path(opt.out_dir, train::Stage::A));
  double side6 = 0.0, side1 = 0.0, flat = 0.0, asym = 0.0;
  int ids = 0, wins = 0, views = 0;
  for (const auto& m : synth::load_dataset(data.easy)) {
    if (!train::is_validation(m.identity, cfg.val_modulus)) continue;
    ++ids;
    std::vector<int> all(m.views.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
    const Tensor images = synth::load_views(m, all).images;
    const Tensor gt = io::read_depth(m.canonical_depth);
    const Tensor mask = objectives::load_relaxed_mask(m.canonical_mask).support();
    const Tensor dc = eval::reconstruct(model, images, 0, eval::Personalize::No).canonical_depth;
    const double e6 = eval::side(dc, gt, mask);
    side6 += e6;
    flat += eval::side(Tensor(gt.shape(), 1.0), gt, mask);
    double e1_sum = 0.0;
    for (int v = 0; v < images.dim(0); ++v) {
      const double e1 = eval::side(eval::reconstruct(model, view_of(images, v), 0, eval::Personalize::No).canonical_depth,
                                   gt, mask);
      e1_sum += e1;
      wins += e6 < e1;
      ++views;
    }
    side1 += e1_sum / images.dim(0);
    const int w = dc.dim(2);
    for (int y = 0; y < dc.dim(1); ++y)
      for (int x = 0; x < w; ++x) asym = std::max(asym, std::abs(dc.at(0, y, x) - dc.at(0, y, w - 1 - x)));
  }
  side6 /= ids;
  side1 /= ids;
  flat /= ids;
  const bool b_ok = side6 < side1;
  const bool c_ok = asym < 0.02;
  const bool time_ok = run->seconds < 4 * 3600.0;
  std::printf("    (a) val loss epoch 1 %.5f -> epoch %zu %.5f, largest rise over running best %.5f: %s\n", first,
              h.size(), last, worst_rise, a_ok ? "PASS" : "FAIL");
  std::printf("    (b) SIDE of d_c over %d validation identities: N=6 %.5f vs N=1 %.5f (flat depth %.5f); N=6 better "
              "on %d/%d views: %s\n",
              ids, side6, side1, flat, wins, views, b_ok ? "PASS" : "FAIL");
  std::printf("    (c) max |d_c(u,v) - d_c(W-1-u,v)| = %.5f (<0.02): %s\n", asym, c_ok ? "PASS" : "FAIL");
  return {a_ok && b_ok && c_ok && time_ok,
          fmt("(a) %s (b) %s (c) %s; stage A %.0fs (<4h)", a_ok ? "pass" : "FAIL", b_ok ? "pass" : "FAIL",
              c_ok ? "pass" : "FAIL", run->seconds)};
}

Verdict personalization(const fs::path& work, const Datasets& data) {
  const train::TrainConfig cfg = train::TrainConfig::parse(kTrainConfig);
  const train::TrainData td = train::load_training_data({}, data.wild, cfg);
  train::TrainOptions opt;
  opt.out_dir = work / "run";
  opt.on_epoch = [](const train::EpochMetrics& m) {
    std::printf("    stage B epoch %2d: train %.5f val %.5f\n", m.epoch, m.train_loss, m.val_loss);
    std::fflush(stdout);
  };
  const auto t0 = Clock::now();
  train::train_stage(train::Stage::B, cfg, td, opt);
  const double secs = seconds_since(t0);

  const eval::Model model = eval::load_model(train::checkpoint_path(opt.out_dir, train::Stage::B));
  int better = 0, total = 0;
  double err_c = 0.0, err_t = 0.0;
  for (const auto& m : synth::load_dataset(data.wild)) {
    if (!train::is_validation(m.identity, cfg.val_modulus)) continue;
    std::vector<int> all(m.views.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
    const synth::ViewBatch batch = synth::load_views(m, all);
    for (int v = 0; v < batch.images.dim(0); ++v) {
      const eval::Reconstruction r = eval::reconstruct(model, batch.images, v, eval::Personalize::Yes);
      const Tensor target = squeeze_view(batch.images, v);
      const Tensor mask = objectives::load_relaxed_mask(m.views[static_cast<std::size_t>(v)].mask).support();
      if (eval::mask_count(mask) == 0) continue;
      const double ec = eval::photometric_error(r.canonical_render, target, mask);
      const double et = eval::photometric_error(r.rendered, target, mask);
      err_c += ec;
      err_t += et;
      better += et < ec;
      ++total;
    }
  }
  const double frac = total ? static_cast<double>(better) / total : 0.0;
  return {frac >= 0.8, fmt("(a_t,d_t) beats (a_c,d_c) on %d/%d held-out wild views (%.1f%%, need >=80%%); mean masked "
                           "error %.4f vs %.4f; stage B %.0fs",
                           better, total, 100.0 * frac, total ? err_t / total : 0.0, total ? err_c / total : 0.0, secs)};
}

// ---------------------------------------------------------------------------
// 8. Determinism.

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Relative paths and contents of every regular file under root.
std::vector<std::pair<std::string, std::string>> tree(const fs::path& root) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out.emplace_back(fs::relative(e.path(), root).generic_string(), slurp(e.path()));
  }
  std::sort(out.begin(), out.end());
  return out;
}

Verdict determinism(const fs::path& work) {
  const fs::path root = work / "determinism";
  fs::remove_all(root);
  // synth
  synth::DatasetOptions so;
  so.identities = 4;
  so.views = 3;
  so.seed = 7;
  so.image_size = 16;
  for (const char* run : {"synth1", "synth2"}) synth::generate_dataset(root / run, so);
  so.tier = synth::Tier::Wild;
  for (const char* run : {"wild1", "wild2"}) synth::generate_dataset(root / run, so);
  const bool synth_same = tree(root / "synth1") == tree(root / "synth2") && tree(root / "wild1") == tree(root / "wild2");

  // train
  train::TrainConfig cfg = train::TrainConfig::parse(
      "image_size = 16\ncode_size = 8\nwidths = 4,4,8,8,8\nhead_widths = 4,4,8,8\nepochs_a = 2\nbatch_size = 2\n"
      "val_modulus = 3\nseed = 5\n");
  const train::TrainData td = train::load_training_data(root / "synth1", {}, cfg);
  for (const char* run : {"train1", "train2"}) {
    train::TrainOptions opt;
    opt.out_dir = root / run;
    train::train_stage(train::Stage::A, cfg, td, opt);
  }
  const bool train_same = tree(root / "train1") == tree(root / "train2");

  // fit
  const synth::Scene scene = synth::generate_identity(3, 32);
  const render::Camera cam(32, 32);
  Tape t;
  const Tensor image = render::render(t.constant(scene.albedo), t.constant(scene.depth),
                                      t.constant(render::Light{}.to_tensor()), t.constant(render::Pose{}.to_tensor()), cam)
                           .image.value();
  train::FitOptions fo;
  fo.iterations = 60;
  fo.init_jitter = 0.05;
  fo.seed = 9;
  const train::FitResult f1 = train::fit_single(image, cam, fo), f2 = train::fit_single(image, cam, fo);
  const bool fit_same = f1.rendered.storage() == f2.rendered.storage() &&
                        f1.factors.depth.storage() == f2.factors.depth.storage() &&
                        f1.factors.albedo.storage() == f2.factors.albedo.storage() && f1.loss_trace == f2.loss_trace;
  fs::remove_all(root);
  return {synth_same && train_same && fit_same, fmt("synth %s, train %s, fit %s (byte-identical across two runs)",
                                                    synth_same ? "identical" : "DIFFERENT",
                                                    train_same ? "identical" : "DIFFERENT",
                                                    fit_same ? "identical" : "DIFFERENT")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  fs::path work = "acceptance_work";
  std::vector<int> only;
  bool strict = false;
  fs::path report_path;
  app.add_option("--work", work, "Scratch directory");
  app.add_option("--only", only, "Criteria to run")->delimiter(',');
  app.add_flag("--strict", strict, "Exit 1 if any criterion fails");
  app.add_option("--report", report_path, "Also write the verdict lines to this file");
  CLI11_PARSE(app, argc, argv);

  const std::set<int> wanted(only.begin(), only.end());
  auto want = [&wanted](int k) { return wanted.empty() || wanted.count(k) != 0; };
  fs::create_directories(work);

  std::vector<std::string> lines;
  int failures = 0;
  auto record = [&](int k, const char* title, const std::function<Verdict()>& fn) {
    if (!want(k)) return;
    std::printf("criterion %d: %s ...\n", k, title);
    std::fflush(stdout);
    const auto t0 = Clock::now();
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    const std::string line = fmt("[%s] %d. %s: %s (%.0fs)", v.pass ? "PASS" : "FAIL", k, title, v.detail.c_str(),
                                 seconds_since(t0));
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
    lines.push_back(line);
    failures += v.pass ? 0 : 1;
  };

  record(1, "gradient suite", gradient_suite);
  record(2, "closed-form loss values", closed_form_losses);
  record(3, "aggregation properties", aggregation);
  record(4, "metric oracles", metric_oracles);
  record(5, "fit_single recovery", fit_recovery);
  Datasets data;
  if (want(6) || want(7)) data = ensure_datasets(work);
  StageARun run;
  record(6, "stage A training", [&] { return stage_a(work, data, &run); });
  record(7, "stage B personalization", [&] {
    if (!fs::exists(train::checkpoint_path(work / "run", train::Stage::A))) stage_a(work, data, &run);
    return personalization(work, data);
  });
  record(8, "determinism", [&] { return determinism(work); });

  std::printf("\nsummary\n");
  for (const auto& l : lines) std::printf("%s\n", l.c_str());
  if (!report_path.empty()) {
    std::ofstream out(report_path);
    for (const auto& l : lines) out << l << '\n';
  }
  return strict && failures > 0 ? 1 : 0;
}
