#include "lap/eval/gradsuite.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "lap/errors.hpp"
#include "lap/nn/networks.hpp"
#include "lap/objectives/losses.hpp"
#include "lap/render/renderer.hpp"
#include "lap/tensor/gradcheck.hpp"
#include "lap/tensor/ops.hpp"

namespace lap::eval {
namespace {

constexpr double kPrimitiveTol = 1e-4;
constexpr double kRendererTol = 1e-3;
constexpr double kLossTol = 1e-5;
constexpr double kNetworkTol = 1e-3;
constexpr int kTrials = 5;

using Rng = std::mt19937_64;
using Unary = std::function<Var(const Var&)>;

Tensor uniform(Rng& rng, Shape shape, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = dist(rng);
  return t;
}

Tensor signed_magnitude(Rng& rng, Shape shape, double lo, double hi) {
  Tensor t = uniform(rng, std::move(shape), lo, hi);
  std::bernoulli_distribution sign(0.5);
  for (double& v : t.data()) v = sign(rng) ? v : -v;
  return t;
}

// Distinct values, no two within 2/n of each other.
Tensor separated(Rng& rng, Shape shape) {
  Tensor t(std::move(shape));
  const std::size_t n = t.numel();
  std::vector<double> v(n);
  for (std::size_t k = 0; k < n; ++k) v[k] = -1.0 + 2.0 * (static_cast<double>(k) + 0.5) / static_cast<double>(n);
  std::shuffle(v.begin(), v.end(), rng);
  std::copy(v.begin(), v.end(), t.data().begin());
  return t;
}

Tensor frac_coords(Rng& rng, int k, int extent) {
  std::uniform_int_distribution<int> cell(-1, extent - 1);
  std::uniform_real_distribution<double> frac(0.1, 0.9);
  Tensor t({k});
  for (double& v : t.data()) v = cell(rng) + frac(rng);
  return t;
}

Shape small_shape(Rng& rng) {
  std::uniform_int_distribution<int> rank(1, 4), ext(1, 4);
  Shape s(static_cast<std::size_t>(rank(rng)));
  for (int& e : s) e = ext(rng);
  return s;
}

// sum(w * op(inputs)) with fixed weights of magnitude 0.5..1.5 and random
// sign, which keeps the probed scalar O(1) and round-off small.
double weighted_check(Rng& rng, const std::function<Var(std::span<const Var>)>& op, const std::vector<Tensor>& in,
                      const FiniteDiffOptions& options = {}) {
  Tape probe;
  std::vector<Var> vars;
  for (const Tensor& t : in) vars.push_back(probe.constant(t));
  const Tensor w = signed_magnitude(rng, op(vars).shape(), 0.5, 1.5);
  auto f = [&op, &w](Tape& tape, std::span<const Var> v) { return ops::sum(ops::mul(op(v), tape.constant(w))); };
  return finite_diff_check(f, in, options).worst();
}

struct Collector {
  std::string suite;
  double tolerance;
  std::vector<GradCheckRow>& rows;

  void add(const std::string& name, double err) {
    for (auto& r : rows) {
      if (r.suite == suite && r.name == name) {
        r.max_rel_error = std::max(r.max_rel_error, err);
        return;
      }
    }
    rows.push_back({suite, name, err, tolerance});
  }
};

void primitives(std::vector<GradCheckRow>& rows) {
  Collector c{"primitives", kPrimitiveTol, rows};
  Rng rng(20240601);
  enum class Domain { Any, AwayFromZero, Distinct, Positive };
  const std::vector<std::tuple<const char*, Unary, Domain>> unary = {
      {"negate", [](const Var& x) { return ops::neg(x); }, Domain::Any},
      {"exp", [](const Var& x) { return ops::exp(x); }, Domain::Any},
      {"tanh", [](const Var& x) { return ops::tanh(x); }, Domain::Any},
      {"sin", [](const Var& x) { return ops::sin(x); }, Domain::Any},
      {"cos", [](const Var& x) { return ops::cos(x); }, Domain::Any},
      {"sigmoid", [](const Var& x) { return ops::sigmoid(x); }, Domain::Any},
      {"softplus", [](const Var& x) { return ops::softplus(x); }, Domain::Any},
      {"add_scalar", [](const Var& x) { return ops::add_scalar(x, 0.7); }, Domain::Any},
      {"scale", [](const Var& x) { return ops::scale(x, -1.3); }, Domain::Any},
      {"softmax", [](const Var& x) { return ops::softmax(x, -1); }, Domain::Any},
      {"sum", [](const Var& x) { return ops::sum(x); }, Domain::Any},
      {"sum_axis", [](const Var& x) { return ops::sum(x, 0); }, Domain::Any},
      {"mean", [](const Var& x) { return ops::mean(x); }, Domain::Any},
      {"mean_axis", [](const Var& x) { return ops::mean(x, -1); }, Domain::Any},
      {"flip_width", [](const Var& x) { return ops::flip_width(x); }, Domain::Any},
      {"abs", [](const Var& x) { return ops::abs(x); }, Domain::AwayFromZero},
      {"relu", [](const Var& x) { return ops::relu(x); }, Domain::AwayFromZero},
      {"leaky_relu", [](const Var& x) { return ops::leaky_relu(x); }, Domain::AwayFromZero},
      {"clamp", [](const Var& x) { return ops::clamp(x, -0.05, 0.05); }, Domain::AwayFromZero},
      {"max", [](const Var& x) { return ops::max(x); }, Domain::Distinct},
      {"max_axis", [](const Var& x) { return ops::max(x, -1); }, Domain::Distinct},
      {"log", [](const Var& x) { return ops::log(x); }, Domain::Positive},
      {"sqrt", [](const Var& x) { return ops::sqrt(x); }, Domain::Positive},
      {"pow", [](const Var& x) { return ops::pow(x, 1.7); }, Domain::Positive},
  };
  for (int trial = 0; trial < kTrials; ++trial) {
    const Shape s = small_shape(rng);
    for (const auto& [name, op, domain] : unary) {
      Tensor x;
      switch (domain) {
        case Domain::Any: x = uniform(rng, s, -1, 1); break;
        case Domain::AwayFromZero: x = signed_magnitude(rng, s, 0.1, 1.0); break;
        case Domain::Distinct: x = separated(rng, s); break;
        case Domain::Positive: x = uniform(rng, s, 0.5, 2.0); break;
      }
      c.add(name, weighted_check(rng, [op = op](std::span<const Var> v) { return op(v[0]); }, {x}));
    }
  }

  using Binary = std::function<Var(const Var&, const Var&)>;
  const std::vector<std::pair<const char*, Binary>> binary = {
      {"add", [](const Var& a, const Var& b) { return ops::add(a, b); }},
      {"subtract", [](const Var& a, const Var& b) { return ops::sub(a, b); }},
      {"multiply", [](const Var& a, const Var& b) { return ops::mul(a, b); }},
      {"divide", [](const Var& a, const Var& b) { return ops::div(a, b); }},
  };
  std::bernoulli_distribution squash(0.4);
  for (int trial = 0; trial < kTrials; ++trial) {
    const Shape sa = small_shape(rng);
    Shape sb = sa;
    for (int& e : sb) e = squash(rng) ? 1 : e;
    for (const auto& [name, op] : binary) {
      const std::vector<Tensor> in{uniform(rng, sa, -1, 1), uniform(rng, sb, 0.5, 1.5)};
      c.add(name, weighted_check(rng, [op = op](std::span<const Var> v) { return op(v[0], v[1]); }, in));
    }
  }

  std::uniform_int_distribution<int> ext(1, 3);
  const std::vector<std::pair<const char*, Unary>> spatial = {
      {"upsample_nearest", [](const Var& v) { return ops::upsample_nearest(v, 2); }},
      {"upsample_bilinear", [](const Var& v) { return ops::upsample_bilinear(v, 2); }},
      {"avg_pool", [](const Var& v) { return ops::avg_pool(v, 2); }},
      {"global_avg_pool", [](const Var& v) { return ops::global_avg_pool(v); }},
      {"concat", [](const Var& v) { return ops::concat({v, ops::scale(v, 2.0)}, 1); }},
      {"narrow", [](const Var& v) { return ops::narrow(v, 3, 1, v.dim(3) - 1); }},
      {"reshape", [](const Var& v) { return ops::reshape(v, {static_cast<int>(v.numel())}); }},
      {"broadcast", [](const Var& v) { return ops::broadcast_to(ops::sum(v, 1), v.shape()); }},
  };
  for (int trial = 0; trial < kTrials; ++trial) {
    const int n = ext(rng), ch = ext(rng), h = 2 * ext(rng), w = 2 * ext(rng), o = ext(rng);
    const Tensor x = uniform(rng, {n, ch, h, w}, -1, 1);
    for (int stride : {1, 2}) {
      for (int k : {1, 3}) {
        const std::vector<Tensor> in{x, uniform(rng, {o, ch, k, k}, -1, 1), uniform(rng, {o}, -1, 1)};
        c.add("conv2d", weighted_check(rng, [stride, k](std::span<const Var> v) {
          return ops::conv2d(v[0], v[1], v[2], stride, k / 2);
        }, in));
      }
    }
    for (const auto& [name, op] : spatial) {
      c.add(name, weighted_check(rng, [op = op](std::span<const Var> v) { return op(v[0]); }, {x}));
    }
    const int m = ext(rng), kk = ext(rng), nn = ext(rng);
    c.add("matmul", weighted_check(rng, [](std::span<const Var> v) { return ops::matmul(v[0], v[1]); },
                                   {uniform(rng, {m, kk}, -1, 1), uniform(rng, {kk, nn}, -1, 1)}));
    const int k = 5;
    c.add("gather_bilinear",
          weighted_check(rng, [](std::span<const Var> v) { return ops::gather_bilinear(v[0], v[1], v[2]); },
                         {uniform(rng, {ch, h + 1, w + 2}, -1, 1), frac_coords(rng, k, w + 2), frac_coords(rng, k, h + 1)}));
    c.add("scatter_bilinear", weighted_check(rng, [h, w](std::span<const Var> v) {
      return ops::scatter_bilinear(v[0], v[1], v[2], h + 1, w + 2);
    }, {uniform(rng, {ch, k}, -1, 1), frac_coords(rng, k, w + 2), frac_coords(rng, k, h + 1)}));
  }
}

Tensor wave_depth(int h, int w, double phase) {
  Tensor d({1, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) d.at(0, y, x) = 1.0 + 0.04 * std::sin(0.37 * x + phase) * std::cos(0.29 * y - phase);
  return d;
}

Tensor wave_albedo(int h, int w, double phase) {
  Tensor a({3, h, w});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        a.at(c, y, x) = 0.5 + 0.3 * std::sin(0.21 * x + 0.5 * c + phase) * std::cos(0.17 * y + phase);
  return a;
}

// Distance of the nearest projected source point to a bilinear cell edge; the
// splat is only piecewise smooth across those edges.
double boundary_margin(const Tensor& d, const render::Pose& p, const render::Camera& cam) {
  const auto r = render::rotation_matrix(p);
  double best = 1e9;
  for (int y = 0; y < cam.height(); ++y)
    for (int x = 0; x < cam.width(); ++x) {
      const double z = d.at(0, y, x);
      const double px = z * (x - cam.cx()) / cam.focal(), py = z * (y - cam.cy()) / cam.focal(), pz = z - 1.0;
      const double qx = r[0] * px + r[1] * py + r[2] * pz + p.tx;
      const double qy = r[3] * px + r[4] * py + r[5] * pz + p.ty;
      const double qz = r[6] * px + r[7] * py + r[8] * pz + p.tz + 1.0;
      const double u = cam.focal() * qx / qz + cam.cx(), v = cam.focal() * qy / qz + cam.cy();
      for (double q : {u, v}) best = std::min(best, std::abs(q - std::round(q)));
    }
  return best;
}

void renderer(std::vector<GradCheckRow>& rows) {
  Collector c{"renderer", kRendererTol, rows};
  const int h = 8, w = 8;
  const render::Camera cam(h, w);
  for (int trial = 0; trial < 3; ++trial) {
    const double phase = 0.4 * trial;
    const Tensor a = wave_albedo(h, w, phase), d = wave_depth(h, w, phase);
    render::Pose pose{};
    for (int k = 0; k < 400; ++k) {
      pose = render::Pose{7.3 - 3.0 * trial + 0.11 * k, -4.1 + 0.07 * k, 2.2, 0.013, -0.007, 0.004};
      if (boundary_margin(d, pose, cam) > 5e-3) break;
    }
    const Tensor light = render::Light{0.3, 0.6, 0.2 - 0.1 * trial, -0.15}.to_tensor();
    for (bool flipped : {false, true}) {
      auto f = [&cam, flipped](Tape&, std::span<const Var> v) {
        return ops::mean(render::render(v[0], v[1], v[2], v[3], cam, flipped).image);
      };
      const std::vector<Tensor> in{a, d, light, pose.to_tensor()};
      const FiniteDiffResult r = finite_diff_check(f, in, {1e-5});
      const char* tag = flipped ? "render_flipped" : "render";
      c.add(std::string(tag) + "/albedo", r.max_rel_error[0]);
      c.add(std::string(tag) + "/depth", r.max_rel_error[1]);
      c.add(std::string(tag) + "/light", r.max_rel_error[2]);
      c.add(std::string(tag) + "/pose", r.max_rel_error[3]);
    }
    Rng rng(31 + trial);
    c.add("depth_to_normals", weighted_check(rng, [&cam](std::span<const Var> v) {
      return render::depth_to_normals(v[0], cam);
    }, {d}, {1e-6}));
    c.add("shade", weighted_check(rng, [&cam](std::span<const Var> v) {
      return render::shade(v[0], render::depth_to_normals(v[1], cam), v[2]);
    }, {a, d, light}, {1e-6}));
  }
}

void losses(std::vector<GradCheckRow>& rows) {
  Collector c{"losses", kLossTol, rows};
  for (int trial = 0; trial < kTrials; ++trial) {
    const double ph = 0.9 * trial;
    Tensor a({3, 3, 4}), b({3, 3, 4}), s({1, 3, 4}), sf({1, 3, 4}), wts({1, 3, 4});
    for (std::size_t k = 0; k < a.numel(); ++k) {
      a[k] = 0.5 + 0.3 * std::sin(0.7 * static_cast<double>(k) + ph);
      b[k] = a[k] + ((k % 2) ? 0.2 : -0.25) + 0.05 * std::cos(static_cast<double>(k) + ph);
    }
    for (std::size_t k = 0; k < s.numel(); ++k) {
      s[k] = 0.4 + 0.05 * static_cast<double>(k);
      sf[k] = 0.9 - 0.03 * static_cast<double>(k);
      wts[k] = (k + trial) % 3 == 0 ? objectives::kDefaultRelaxWeight : ((k + trial) % 3 == 1 ? 1.0 : 0.0);
    }
    const objectives::RelaxedMask mask(wts);
    Tensor flipped = a;
    for (double& v : flipped.data()) v = 1.0 - v;
    const std::vector<Tensor> in{a, s};
    c.add("recon_nll", finite_diff_check([&](Tape& t, std::span<const Var> v) {
      return objectives::recon_nll(v[0], t.constant(b), v[1]);
    }, in).worst());
    c.add("recon_nll_masked", finite_diff_check([&](Tape& t, std::span<const Var> v) {
      return objectives::recon_nll(v[0], t.constant(b), v[1], mask.support());
    }, in).worst());
    c.add("relaxed_consistency", finite_diff_check([&](Tape& t, std::span<const Var> v) {
      return objectives::relaxed_consistency(v[0], t.constant(b), v[1], mask);
    }, in).worst());
    const std::vector<Tensor> both{a, s, flipped, sf};
    for (auto kind : {objectives::LossKind::Reconstruction, objectives::LossKind::RelaxedConsistency}) {
      c.add(kind == objectives::LossKind::Reconstruction ? "total_objective/recon" : "total_objective/rcl",
            finite_diff_check([&](Tape& t, std::span<const Var> v) {
              objectives::ObjectiveTerms terms{v[0], v[2], t.constant(b), v[1], v[3]};
              return objectives::total_objective(terms, kind, mask, 0.5);
            }, both).worst());
    }
  }
}

nn::NetConfig tiny_net() {
  nn::NetConfig cfg;
  cfg.image_size = 16;
  cfg.code_size = 6;
  cfg.widths = {4, 5, 6, 6, 6};
  cfg.head_widths = {4, 4, 5, 5};
  return cfg;
}

// Zero-initialized output layers would make every check trivially exact.
nn::ParamStore perturbed_store(const nn::NetConfig& cfg, std::uint64_t seed) {
  nn::ParamStore store = nn::init_parameters(cfg, seed);
  Rng rng(seed + 1);
  std::uniform_real_distribution<double> dist(-0.2, 0.2);
  for (auto& [name, t] : store.tensors()) {
    if (std::all_of(t.data().begin(), t.data().end(), [](double v) { return v == 0.0; })) {
      for (double& v : t.data()) v = dist(rng);
    }
  }
  return store;
}

void networks(std::vector<GradCheckRow>& rows) {
  Collector c{"networks", kNetworkTol, rows};
  const nn::NetConfig cfg = tiny_net();
  const int s = cfg.image_size;
  // Image gradients through several layers are 1e-8..1e-6 per entry, so the
  // difference is round-off bound: a larger step (these maps are smooth away
  // from rare leaky-relu crossings) and an absolute floor on the denominator.
  const FiniteDiffOptions probe{1e-4, 48, 1e-6};
  for (int trial = 0; trial < 2; ++trial) {
    const nn::ParamStore store = perturbed_store(cfg, 100 + trial);
    Rng rng(200 + trial);
    const Tensor images = uniform(rng, {2, 3, s, s}, 0.1, 0.9);
    auto bound = [&store](Tape& t) { return nn::Binding(t, store); };

    c.add("encoder", weighted_check(rng, [&](std::span<const Var> v) {
      Tape& t = v[0].tape();
      return nn::encode(bound(t), cfg, "delta_a", v[0]).code;
    }, {images}, probe));
    c.add("set_softmax_pool", weighted_check(rng, [](std::span<const Var> v) {
      return nn::set_softmax_pool(v[0], v[1]);
    }, {uniform(rng, {3, cfg.code_size}, -1, 1), uniform(rng, {3, cfg.code_size}, -1, 1)}));
    c.add("aggregate_codes", weighted_check(rng, [&](std::span<const Var> v) {
      return nn::aggregate_codes(bound(v[0].tape()), "agg_a", v[0]);
    }, {uniform(rng, {3, cfg.code_size}, -1, 1)}));
    c.add("decoder", weighted_check(rng, [&](std::span<const Var> v) {
      return nn::map_depth(nn::decode_raw(bound(v[0].tape()), cfg, "phi_d", v[0]));
    }, {uniform(rng, {1, cfg.code_size}, -1, 1)}, probe));
    c.add("pose_head", weighted_check(rng, [&](std::span<const Var> v) {
      return nn::predict_pose(bound(v[0].tape()), cfg, v[0]);
    }, {images}, probe));
    c.add("light_head", weighted_check(rng, [&](std::span<const Var> v) {
      return nn::predict_light(bound(v[0].tape()), cfg, v[0]);
    }, {images}, probe));
    c.add("confidence", weighted_check(rng, [&](std::span<const Var> v) {
      const nn::Confidence conf = nn::predict_confidence(bound(v[0].tape()), cfg, v[0]);
      return ops::concat({conf.sigma, conf.sigma_flip}, 1);
    }, {images}, probe));
    c.add("canonical_face", weighted_check(rng, [&](std::span<const Var> v) {
      const nn::CanonicalFace face = nn::canonical_face(bound(v[0].tape()), cfg, v[0]);
      return ops::concat({face.albedo, face.depth}, 1);
    }, {images}, probe));
    const Tensor albedo = uniform(rng, {1, 3, s, s}, 0.2, 0.8);
    const Tensor depth = uniform(rng, {1, 1, s, s}, 0.95, 1.05);
    c.add("refine_attributes", weighted_check(rng, [&](std::span<const Var> v) {
      const nn::Refined r = nn::refine_attributes(bound(v[0].tape()), cfg, v[0], v[1], v[2]);
      return ops::concat({r.albedo, r.depth}, 1);
    }, {albedo, depth, images}, probe));
    const std::string weight = "phi_a.up1.weight";
    c.add("decoder_weight", weighted_check(rng, [&](std::span<const Var> v) {
      nn::Binding p(v[0].tape(), store);
      p.rebind(weight, v[1]);
      return nn::decode_raw(p, cfg, "phi_a", v[0]);
    }, {uniform(rng, {1, cfg.code_size}, -1, 1), store.at(weight)}, probe));
  }
}

}  // namespace

std::vector<std::string> gradient_suites() { return {"primitives", "renderer", "losses", "networks"}; }

std::vector<GradCheckRow> run_gradient_suite(const std::string& suite) {
  std::vector<GradCheckRow> rows;
  const bool all = suite == "all";
  bool known = all;
  if (all || suite == "primitives") primitives(rows), known = true;
  if (all || suite == "renderer") renderer(rows), known = true;
  if (all || suite == "losses") losses(rows), known = true;
  if (all || suite == "networks") networks(rows), known = true;
  if (!known) throw ContractError("gradient suite '" + suite + "' is not one of primitives, renderer, losses, networks, all");
  return rows;
}

}  // namespace lap::eval
