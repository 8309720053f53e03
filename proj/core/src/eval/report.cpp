#include "lap/eval/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <thread>

#include "lap/errors.hpp"
#include "lap/eval/metrics.hpp"
#include "lap/io/image_io.hpp"
#include "lap/objectives/losses.hpp"
#include "lap/render/renderer.hpp"
#include "lap/synth/synth.hpp"
#include "lap/tensor/tape.hpp"
#include "lap/train/config.hpp"

namespace lap::eval {
namespace fs = std::filesystem;

namespace {

struct Unit {
  synth::Manifest gt;
  fs::path pred;
};

fs::path require_file(const fs::path& p) {
  if (!fs::exists(p)) throw IoError("missing file: " + p.string());
  return p;
}

EvalRow evaluate_unit(const Unit& u, const EvalOptions& o) {
  EvalRow row;
  row.name = u.gt.identity;
  const Tensor mask = objectives::load_relaxed_mask(u.gt.canonical_mask).support();
  row.masked_pixels = mask_count(mask);
  row.rejected_pixels = mask.numel() - row.masked_pixels;
  const Tensor gt_depth = io::read_depth(u.gt.canonical_depth);
  Tensor depth = io::read_depth(require_file(u.pred / "canonical_depth.lapd"));
  if (o.align_median) depth = align_median_shift(depth, gt_depth, mask);
  for (const std::string& m : o.metrics) {
    if (m == "side") {
      row.values[m] = 100.0 * side(depth, gt_depth, mask);
    } else if (m == "mad") {
      Tape tape;
      const render::Camera cam(depth.dim(1), depth.dim(2));
      const Tensor n_pred = render::depth_to_normals(tape.constant(depth), cam).value();
      const Tensor n_gt = render::depth_to_normals(tape.constant(gt_depth), cam).value();
      row.values[m] = mad(n_pred, n_gt, mask);
    } else if (m == "ssim") {
      const Tensor albedo = io::read_png(require_file(u.pred / "canonical_albedo.png"));
      row.values[m] = ssim(albedo, io::read_png(u.gt.canonical_albedo), mask);
    } else if (m == "corr") {
      row.values[m] = depth_corr(depth, gt_depth, synth::read_keypoints(u.gt.keypoints));
    }
  }
  return row;
}

std::string format(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

const std::vector<std::string>& known_metrics() {
  static const std::vector<std::string> names{"side", "mad", "ssim", "corr"};
  return names;
}

std::vector<std::string> parse_metrics(const std::string& list) {
  std::vector<std::string> out;
  std::stringstream in(list);
  std::string name;
  while (std::getline(in, name, ',')) {
    const auto& known = known_metrics();
    if (std::find(known.begin(), known.end(), name) == known.end()) {
      throw ContractError("unknown metric '" + name + "' (expected side, mad, ssim or corr)");
    }
    if (std::find(out.begin(), out.end(), name) != out.end()) throw ContractError("metric '" + name + "' repeated");
    out.push_back(name);
  }
  if (out.empty()) throw ContractError("no metrics requested");
  return out;
}

void EvalReport::finalize() {
  mean.clear();
  stddev.clear();
  if (rows.empty()) return;
  const double n = static_cast<double>(rows.size());
  for (const std::string& m : metrics) {
    double s = 0.0;
    for (const EvalRow& r : rows) s += r.values.at(m);
    const double mu = s / n;
    double v = 0.0;
    for (const EvalRow& r : rows) v += (r.values.at(m) - mu) * (r.values.at(m) - mu);
    mean[m] = mu;
    stddev[m] = std::sqrt(v / n);
  }
}

bool EvalReport::consistent() const {
  for (const std::string& m : metrics) {
    double s = 0.0;
    for (const EvalRow& r : rows) s += r.values.at(m);
    const double mu = rows.empty() ? 0.0 : s / static_cast<double>(rows.size());
    const auto it = mean.find(m);
    if (it == mean.end() || std::abs(it->second - mu) > 1e-12 * std::max(1.0, std::abs(mu))) return false;
  }
  return true;
}

std::string EvalReport::csv() const {
  std::ostringstream o;
  o << "name";
  for (const std::string& m : metrics) o << ',' << (m == "side" ? "side_x1e-2" : m);
  o << ",masked_pixels,rejected_pixels\n";
  for (const EvalRow& r : rows) {
    o << r.name;
    for (const std::string& m : metrics) o << ',' << format(r.values.at(m));
    o << ',' << r.masked_pixels << ',' << r.rejected_pixels << '\n';
  }
  for (const char* label : {"mean", "std"}) {
    o << label;
    const auto& agg = std::string(label) == "mean" ? mean : stddev;
    for (const std::string& m : metrics) o << ',' << format(agg.at(m));
    o << ",,\n";
  }
  return o.str();
}

std::string EvalReport::table() const {
  std::ostringstream o;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-12s", "name");
  o << buf;
  for (const std::string& m : metrics) {
    std::snprintf(buf, sizeof buf, " %14s", (m == "side" ? "SIDE(x1e-2)" : m == "mad" ? "MAD(deg)" : m == "corr" ? "corr(x100)" : "SSIM"));
    o << buf;
  }
  o << '\n';
  auto line = [&](const std::string& name, auto value) {
    std::snprintf(buf, sizeof buf, "%-12s", name.c_str());
    o << buf;
    for (const std::string& m : metrics) {
      std::snprintf(buf, sizeof buf, " %14.4f", value(m));
      o << buf;
    }
    o << '\n';
  };
  for (const EvalRow& r : rows) line(r.name, [&](const std::string& m) { return r.values.at(m); });
  if (!rows.empty()) {
    line("mean", [&](const std::string& m) { return mean.at(m); });
    line("std", [&](const std::string& m) { return stddev.at(m); });
  }
  return o.str();
}

EvalReport evaluate_directories(const fs::path& pred_dir, const fs::path& gt_dir, const EvalOptions& options) {
  if (!fs::exists(pred_dir)) throw IoError("prediction directory not found: " + pred_dir.string());
  if (!fs::exists(gt_dir)) throw IoError("ground-truth directory not found: " + gt_dir.string());
  std::vector<Unit> units;
  if (fs::exists(gt_dir / "manifest.json")) {
    units.push_back({synth::load_manifest(gt_dir), pred_dir});
  } else {
    for (synth::Manifest& m : synth::load_dataset(gt_dir)) {
      const fs::path pred = pred_dir / m.identity;
      if (!fs::exists(pred)) throw IoError("no prediction for " + m.identity + ": " + pred.string());
      units.push_back({std::move(m), pred});
    }
  }
  if (units.empty()) throw IoError("no identities under " + gt_dir.string());

  EvalReport report;
  report.metrics = options.metrics;
  report.rows.resize(units.size());
  std::ostringstream cfg;
  cfg << "metrics=";
  for (std::size_t i = 0; i < options.metrics.size(); ++i) cfg << (i ? "," : "") << options.metrics[i];
  cfg << " align_median=" << (options.align_median ? "on" : "off") << " pred=" << pred_dir.string()
      << " gt=" << gt_dir.string();
  report.config = cfg.str();

  const int workers = std::min<int>(train::resolve_threads(options.threads), static_cast<int>(units.size()));
  std::vector<std::exception_ptr> errors(units.size());
  auto work = [&](int w) {
    for (std::size_t i = static_cast<std::size_t>(w); i < units.size(); i += static_cast<std::size_t>(workers)) {
      try {
        report.rows[i] = evaluate_unit(units[i], options);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  report.finalize();
  return report;
}

}  // namespace lap::eval
