#include "lap/synth/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include "json.hpp"
#include "lap/errors.hpp"
#include "lap/io/image_io.hpp"
#include "lap/tensor/ops.hpp"

namespace lap::synth {
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Ellipse {
  double cx, cy, rx, ry;
  // Normalized squared radius; <= 1 inside.
  double q(double x, double y) const {
    const double a = (x - cx) / rx, b = (y - cy) / ry;
    return a * a + b * b;
  }
};

// Depth of the backdrop plane; the face dome rises from it toward the
// camera so that the face straddles the rotation centre at depth 1.
constexpr double kBackdropDepth = 1.03;

// Smooth bump that vanishes on and outside the ellipse border.
double bump(double q) { return q < 1.0 ? (1.0 - q) * (1.0 - q) : 0.0; }

struct Layout {
  Ellipse face, eye, brow, mouth;
  double dome, nose_y, nose_amp, socket, ridge, lip;
  std::array<double, 3> skin, brow_color, mouth_color, eye_color;
  double background;
};

Layout draw_layout(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto u = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  Layout l{};
  l.face = {0.0, u(-0.02, 0.06), u(0.58, 0.72), u(0.74, 0.88)};
  l.dome = u(0.045, 0.06);
  const double ex = u(0.24, 0.32), ey = u(-0.22, -0.12);
  // Eyes and brows are stored for the right half (x > 0) and mirrored.
  l.eye = {ex, ey, u(0.09, 0.12), u(0.045, 0.06)};
  l.brow = {ex, ey - u(0.11, 0.15), u(0.12, 0.16), u(0.025, 0.035)};
  l.mouth = {0.0, u(0.36, 0.46), u(0.16, 0.22), u(0.045, 0.065)};
  l.nose_y = u(0.0, 0.1);
  l.nose_amp = u(0.015, 0.025);
  l.socket = u(0.01, 0.02);
  l.ridge = u(0.005, 0.012);
  l.lip = u(0.004, 0.01);
  const double r = u(0.65, 0.9), g = r * u(0.68, 0.82), b = g * u(0.72, 0.9);
  l.skin = {r, g, b};
  const double bf = u(0.3, 0.5);
  l.brow_color = {r * bf, g * bf, b * bf};
  l.mouth_color = {r * u(0.75, 0.9), g * u(0.45, 0.6), b * u(0.5, 0.65)};
  const double e = u(0.12, 0.3);
  l.eye_color = {e, e * u(0.9, 1.1), e * u(0.9, 1.2)};
  l.background = u(0.25, 0.45);
  return l;
}

// Pixel centre in normalized coordinates; x is returned as |x| so every
// quantity below is exactly width-symmetric.
double abs_x(int col, int size) {
  const int m = std::min(col, size - 1 - col);
  return 1.0 - 2.0 * (m + 0.5) / size;
}
double norm_y(int row, int size) { return 2.0 * (row + 0.5) / size - 1.0; }
double to_pixel(double t, int size) { return (t + 1.0) * 0.5 * size - 0.5; }

Tensor one_hot(const Tensor& labels) {
  const int h = labels.dim(1), w = labels.dim(2);
  Tensor out({kRegionCount, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out.at(static_cast<int>(labels.at(0, y, x)), y, x) = 1.0;
  return out;
}

json pose_json(const render::Pose& p) {
  return {{"yaw", p.yaw}, {"pitch", p.pitch}, {"roll", p.roll}, {"tx", p.tx}, {"ty", p.ty}, {"tz", p.tz}};
}
json light_json(const render::Light& l) {
  return {{"ambient", l.ambient}, {"diffuse", l.diffuse}, {"lx", l.lx}, {"ly", l.ly}};
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

fs::path existing(const fs::path& dir, const std::string& rel) {
  fs::path p = dir / rel;
  if (!fs::exists(p)) throw IoError("missing file referenced by manifest: " + p.string());
  return p;
}

std::string view_stem(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "view_%02d", i);
  return buf;
}

}  // namespace

std::string to_string(Tier tier) { return tier == Tier::Easy ? "easy" : "wild"; }

Tier parse_tier(const std::string& name) {
  if (name == "easy") return Tier::Easy;
  if (name == "wild") return Tier::Wild;
  throw ContractError("unknown tier '" + name + "' (expected easy or wild)");
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Scene generate_identity(std::uint64_t seed, int size) {
  if (size < 8) throw ContractError("generate_identity: size must be at least 8");
  const Layout l = draw_layout(seed);
  Scene s;
  s.seed = seed;
  s.albedo = Tensor({3, size, size});
  s.depth = Tensor({1, size, size});
  s.labels = Tensor({1, size, size});
  const Ellipse nose{0.0, l.nose_y, 0.08, 0.18};
  for (int row = 0; row < size; ++row) {
    const double y = norm_y(row, size);
    for (int col = 0; col < size; ++col) {
      const double x = abs_x(col, size);
      const double qf = l.face.q(x, y);
      if (qf > 1.0) {
        s.depth.at(0, row, col) = kBackdropDepth;
        for (int c = 0; c < 3; ++c) s.albedo.at(c, row, col) = l.background;
        continue;
      }
      const double qe = l.eye.q(x, y), qb = l.brow.q(x, y), qm = l.mouth.q(x, y);
      double d = kBackdropDepth - l.dome * (1.0 - qf);
      d -= l.nose_amp * std::exp(-0.5 * nose.q(x, y) * 4.0);
      d += l.socket * bump(qe * 0.5);
      d -= l.ridge * bump(qb * 0.5);
      d += l.lip * bump(qm);
      s.depth.at(0, row, col) = std::clamp(d, 0.9, 1.1);

      Region region = Region::Face;
      std::array<double, 3> color = l.skin;
      const double tone = 1.0 - 0.12 * qf + 0.03 * std::cos(6.0 * x) * std::cos(4.0 * y);
      for (double& v : color) v *= tone;
      if (qb <= 1.0) {
        region = Region::Brow;
        color = l.brow_color;
      } else if (qe <= 1.0) {
        region = Region::Eye;
        color = l.eye_color;
      } else if (qm <= 1.0) {
        region = Region::Mouth;
        color = l.mouth_color;
      }
      s.labels.at(0, row, col) = static_cast<double>(region);
      for (int c = 0; c < 3; ++c) s.albedo.at(c, row, col) = std::clamp(color[static_cast<std::size_t>(c)], 0.0, 1.0);
    }
  }
  const double ex = l.eye.cx, erx = l.eye.rx;
  const std::array<std::array<double, 2>, kKeypointCount> pts{{
      {-(ex + erx), l.eye.cy},
      {-(ex - erx), l.eye.cy},
      {ex - erx, l.eye.cy},
      {ex + erx, l.eye.cy},
      {-ex, l.brow.cy},
      {ex, l.brow.cy},
      {0.0, l.nose_y},
      {-l.mouth.rx, l.mouth.cy},
      {l.mouth.rx, l.mouth.cy},
      {0.0, l.mouth.cy - l.mouth.ry},
      {0.0, l.face.cy + 0.92 * l.face.ry},
      {0.0, l.face.cy - 0.8 * l.face.ry},
  }};
  for (const auto& p : pts) s.keypoints.push_back({to_pixel(p[0], size), to_pixel(p[1], size)});
  return s;
}

objectives::RelaxedMask build_relaxed_mask(const Tensor& labels, double relax_weight) {
  if (relax_weight < 0.0 || relax_weight > 1.0) throw ContractError("build_relaxed_mask: relax weight must lie in [0,1]");
  Tensor w(labels.rank() == 2 ? Shape{1, labels.dim(0), labels.dim(1)} : labels.shape());
  for (std::size_t i = 0; i < w.numel(); ++i) {
    switch (static_cast<Region>(static_cast<int>(labels[i]))) {
      case Region::Background: w[i] = 0.0; break;
      case Region::Face: w[i] = 1.0; break;
      default: w[i] = relax_weight; break;
    }
  }
  return objectives::RelaxedMask(std::move(w));
}

Collection render_collection(const Scene& scene, int n_views, Tier tier, std::uint64_t seed) {
  if (n_views < 1 || n_views > 6) throw ContractError("render_collection: views must be in 1..6, got " + std::to_string(n_views));
  const int size = scene.depth.dim(2);
  const render::Camera cam(size, size);
  std::mt19937_64 rng(mix_seed(seed, tier == Tier::Easy ? 11 : 12));
  auto u = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  const Layout layout = draw_layout(scene.seed);

  Collection out;
  out.scene = scene;
  out.tier = tier;
  out.seed = seed;
  for (int i = 0; i < n_views; ++i) {
    View v;
    if (tier == Tier::Easy) {
      v.pose = {u(-45.0, 45.0), u(-15.0, 15.0), 0.0, u(-0.02, 0.02), u(-0.02, 0.02), u(-0.02, 0.02)};
      v.light = {u(0.3, 0.6), u(0.3, 0.7), u(-0.3, 0.3), u(-0.3, 0.3)};
    } else {
      // Translations use half the pose bound: at fov 10 deg a shift of 0.1 moves
      // the face centre past the image border.
      v.pose = {u(-60.0, 60.0), u(-60.0, 60.0), u(-60.0, 60.0), u(-0.05, 0.05), u(-0.05, 0.05), u(-0.05, 0.05)};
      v.light = {u(0.0, 1.0), u(0.0, 1.0), u(-1.0, 1.0), u(-1.0, 1.0)};
    }
    v.albedo = scene.albedo;
    v.depth = scene.depth;
    if (tier == Tier::Wild) {
      // Expression surrogate: recolor and deform only mouth and eye regions.
      const std::array<double, 3> mouth_tint{u(0.75, 1.25), u(0.75, 1.25), u(0.75, 1.25)};
      const std::array<double, 3> eye_tint{u(0.75, 1.25), u(0.75, 1.25), u(0.75, 1.25)};
      const double mouth_amp = u(-0.01, 0.01), eye_amp = u(-0.01, 0.01);
      for (int row = 0; row < size; ++row) {
        const double y = norm_y(row, size);
        for (int col = 0; col < size; ++col) {
          const auto region = static_cast<Region>(static_cast<int>(scene.labels.at(0, row, col)));
          if (region != Region::Mouth && region != Region::Eye) continue;
          const double x = abs_x(col, size);
          const bool mouth = region == Region::Mouth;
          const double q = mouth ? layout.mouth.q(x, y) : layout.eye.q(x, y);
          v.depth.at(0, row, col) = std::clamp(v.depth.at(0, row, col) + (mouth ? mouth_amp : eye_amp) * bump(q), 0.9, 1.1);
          const auto& tint = mouth ? mouth_tint : eye_tint;
          for (int c = 0; c < 3; ++c)
            v.albedo.at(c, row, col) = std::clamp(v.albedo.at(c, row, col) * tint[static_cast<std::size_t>(c)], 0.0, 1.0);
        }
      }
    }

    Tape tape;
    const Var depth = tape.constant(v.depth);
    const Var pose = tape.constant(v.pose.to_tensor());
    const render::RenderOutput r =
        render::render(tape.constant(v.albedo), depth, tape.constant(v.light.to_tensor()), pose, cam);
    v.clean_image = r.image.value();
    v.view_depth = r.depth.value();

    // Region labels in the view: splat one-hot labels and take the argmax.
    const render::RenderOutput lr = render::reproject(tape.constant(one_hot(scene.labels)), depth, pose, cam);
    v.labels = Tensor({1, size, size});
    for (int row = 0; row < size; ++row) {
      for (int col = 0; col < size; ++col) {
        if (lr.coverage.value().at(0, row, col) <= 0.0) continue;
        int best = 0;
        for (int k = 1; k < kRegionCount; ++k)
          if (lr.image.value().at(k, row, col) > lr.image.value().at(best, row, col)) best = k;
        v.labels.at(0, row, col) = best;
      }
    }
    Tensor weights = build_relaxed_mask(v.labels).weights();

    v.image = v.clean_image;
    if (tier == Tier::Wild) {
      const std::array<double, 3> jitter{u(0.9, 1.1), u(0.9, 1.1), u(0.9, 1.1)};
      std::normal_distribution<double> noise(0.0, u(0.0, 0.02));
      for (int c = 0; c < 3; ++c)
        for (int row = 0; row < size; ++row)
          for (int col = 0; col < size; ++col) {
            double& px = v.image.at(c, row, col);
            px = std::clamp(px * jitter[static_cast<std::size_t>(c)] + noise(rng), 0.0, 1.0);
          }
      if (u(0.0, 1.0) < 0.1) {
        v.occluded = true;
        const int w = static_cast<int>(size * u(0.2, 0.4)), h = static_cast<int>(size * u(0.2, 0.4));
        const int x0 = static_cast<int>(u(0.0, size - w)), y0 = static_cast<int>(u(0.0, size - h));
        const std::array<double, 3> color{u(0.0, 1.0), u(0.0, 1.0), u(0.0, 1.0)};
        for (int row = y0; row < y0 + h; ++row)
          for (int col = x0; col < x0 + w; ++col) {
            for (int c = 0; c < 3; ++c) v.image.at(c, row, col) = color[static_cast<std::size_t>(c)];
            weights.at(0, row, col) = 0.0;
          }
      }
    }
    v.mask = objectives::RelaxedMask(std::move(weights));
    out.views.push_back(std::move(v));
  }
  return out;
}

void write_keypoints(const fs::path& path, const std::vector<std::array<double, 2>>& keypoints) {
  json j = json::array();
  for (const auto& k : keypoints) j.push_back({k[0], k[1]});
  write_json(path, {{"keypoints", j}});
}

std::vector<std::array<double, 2>> read_keypoints(const fs::path& path) {
  const json j = read_json(path);
  std::vector<std::array<double, 2>> out;
  try {
    for (const auto& k : j.at("keypoints")) out.push_back({k.at(0).get<double>(), k.at(1).get<double>()});
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  return out;
}

Manifest write_collection(const fs::path& dir, const std::string& identity, const Collection& c) {
  fs::create_directories(dir);
  const int size = c.scene.depth.dim(2);
  io::write_png(dir / "canonical_albedo.png", c.scene.albedo);
  io::write_depth(dir / "canonical_depth.lapd", c.scene.depth);
  objectives::save_relaxed_mask(dir / "canonical_mask.png", build_relaxed_mask(c.scene.labels));
  write_keypoints(dir / "canonical_keypoints.json", c.scene.keypoints);

  json views = json::array();
  for (std::size_t i = 0; i < c.views.size(); ++i) {
    const View& v = c.views[i];
    const std::string stem = view_stem(static_cast<int>(i));
    io::write_png(dir / (stem + "_image.png"), v.image);
    objectives::save_relaxed_mask(dir / (stem + "_mask.png"), v.mask);
    io::write_depth(dir / (stem + "_depth.lapd"), v.view_depth);
    io::write_png(dir / (stem + "_albedo.png"), v.albedo);
    io::write_depth(dir / (stem + "_canonical_depth.lapd"), v.depth);
    write_json(dir / (stem + "_factors.json"),
               {{"pose", pose_json(v.pose)}, {"light", light_json(v.light)}, {"occluded", v.occluded}});
    views.push_back({{"image", stem + "_image.png"},
                     {"mask", stem + "_mask.png"},
                     {"depth", stem + "_depth.lapd"},
                     {"albedo", stem + "_albedo.png"},
                     {"canonical_depth", stem + "_canonical_depth.lapd"},
                     {"factors", stem + "_factors.json"}});
  }
  write_json(dir / "manifest.json", {{"identity", identity},
                                     {"tier", to_string(c.tier)},
                                     {"seed", c.seed},
                                     {"scene_seed", c.scene.seed},
                                     {"image_size", size},
                                     {"canonical",
                                      {{"albedo", "canonical_albedo.png"},
                                       {"depth", "canonical_depth.lapd"},
                                       {"mask", "canonical_mask.png"},
                                       {"keypoints", "canonical_keypoints.json"}}},
                                     {"views", views}});
  return load_manifest(dir);
}

Manifest load_manifest(const fs::path& dir) {
  const fs::path path = dir / "manifest.json";
  const json j = read_json(path);
  Manifest m;
  try {
    m.identity = j.at("identity").get<std::string>();
    m.directory = dir;
    m.tier = parse_tier(j.at("tier").get<std::string>());
    m.seed = j.at("seed").get<std::uint64_t>();
    m.image_size = j.at("image_size").get<int>();
    const json& c = j.at("canonical");
    m.canonical_albedo = existing(dir, c.at("albedo").get<std::string>());
    m.canonical_depth = existing(dir, c.at("depth").get<std::string>());
    m.canonical_mask = existing(dir, c.at("mask").get<std::string>());
    m.keypoints = existing(dir, c.at("keypoints").get<std::string>());
    for (const json& v : j.at("views")) {
      m.views.push_back({existing(dir, v.at("image").get<std::string>()), existing(dir, v.at("mask").get<std::string>()),
                         existing(dir, v.at("depth").get<std::string>()), existing(dir, v.at("albedo").get<std::string>()),
                         existing(dir, v.at("canonical_depth").get<std::string>()),
                         existing(dir, v.at("factors").get<std::string>())});
    }
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  } catch (const ContractError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  if (m.views.empty()) throw IoError(path.string() + ": manifest lists no views");
  return m;
}

ViewBatch load_views(const Manifest& m, const std::vector<int>& indices) {
  if (indices.empty()) throw ContractError("load_views: no views requested");
  const int s = m.image_size;
  ViewBatch b;
  b.images = Tensor({static_cast<int>(indices.size()), 3, s, s});
  const std::size_t stride = static_cast<std::size_t>(3) * s * s;
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const int i = indices[k];
    if (i < 0 || i >= static_cast<int>(m.views.size())) throw ContractError("load_views: view index out of range");
    const Tensor img = io::read_png(m.views[static_cast<std::size_t>(i)].image);
    if (img.shape() != Shape{3, s, s}) throw IoError(m.views[static_cast<std::size_t>(i)].image.string() + ": unexpected size");
    std::copy(img.data().begin(), img.data().end(), b.images.data().begin() + static_cast<std::ptrdiff_t>(k * stride));
    b.masks.push_back(objectives::load_relaxed_mask(m.views[static_cast<std::size_t>(i)].mask));
  }
  return b;
}

std::vector<Manifest> generate_dataset(const fs::path& root, const DatasetOptions& o) {
  if (o.identities < 1) throw ContractError("generate_dataset: need at least one identity");
  fs::create_directories(root);
  std::vector<Manifest> out;
  json names = json::array();
  for (int i = 0; i < o.identities; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "id_%05d", i);
    const std::uint64_t scene_seed = mix_seed(o.seed, static_cast<std::uint64_t>(i));
    const Scene scene = generate_identity(scene_seed, o.image_size);
    out.push_back(write_collection(root / name, name, render_collection(scene, o.views, o.tier, scene_seed)));
    names.push_back(name);
  }
  write_json(root / "dataset.json", {{"tier", to_string(o.tier)},
                                     {"seed", o.seed},
                                     {"image_size", o.image_size},
                                     {"views", o.views},
                                     {"identities", names}});
  return out;
}

std::vector<Manifest> load_dataset(const fs::path& root) {
  std::vector<Manifest> out;
  if (fs::exists(root / "dataset.json")) {
    const json j = read_json(root / "dataset.json");
    try {
      for (const auto& n : j.at("identities")) out.push_back(load_manifest(root / n.get<std::string>()));
    } catch (const json::exception& e) {
      throw IoError((root / "dataset.json").string() + ": " + e.what());
    }
    return out;
  }
  if (!fs::is_directory(root)) throw IoError("dataset directory not found: " + root.string());
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && fs::exists(e.path() / "manifest.json")) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  for (const auto& d : dirs) out.push_back(load_manifest(d));
  if (out.empty()) throw IoError("no manifests under " + root.string());
  return out;
}

}  // namespace lap::synth
