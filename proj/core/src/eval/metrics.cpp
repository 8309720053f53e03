#include "lap/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "lap/errors.hpp"

namespace lap::eval {

namespace {

constexpr int kWindow = 11;
constexpr double kWindowSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

// Height and width of a [1,H,W] or [H,W] map.
std::pair<int, int> map_size(const char* what, const Tensor& t) {
  if (t.rank() == 2) return {t.dim(0), t.dim(1)};
  if (t.rank() == 3 && t.dim(0) == 1) return {t.dim(1), t.dim(2)};
  throw ShapeError(std::string(what) + ": expected [1,H,W] or [H,W], got " + shape_str(t.shape()));
}

void require_same_map(const char* what, const Tensor& a, const Tensor& b) {
  if (map_size(what, a) != map_size(what, b)) {
    throw ShapeError(std::string(what) + ": sizes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " differ");
  }
}

double bilinear(const Tensor& t, int h, int w, double col, double row) {
  const int x0 = std::clamp(static_cast<int>(std::floor(col)), 0, w - 1);
  const int y0 = std::clamp(static_cast<int>(std::floor(row)), 0, h - 1);
  const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
  const double fx = col - x0, fy = row - y0;
  auto at = [&](int y, int x) { return t[static_cast<std::size_t>(y) * w + x]; };
  return (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) + fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
}

double median(std::vector<double> v) {
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  if (v.size() % 2) return v[mid];
  const double hi = v[mid];
  return 0.5 * (hi + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid)));
}

}  // namespace

std::size_t mask_count(const Tensor& mask) {
  return static_cast<std::size_t>(std::count_if(mask.data().begin(), mask.data().end(), [](double v) { return v != 0.0; }));
}

double side(const Tensor& pred, const Tensor& gt, const Tensor& mask) {
  require_same_map("side", pred, gt);
  require_same_map("side", pred, mask);
  double s1 = 0.0, s2 = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    if (mask[i] == 0.0) continue;
    if (!(pred[i] > 0.0) || !(gt[i] > 0.0)) throw DomainError("side: non-positive depth inside the mask");
    const double d = std::log(pred[i]) - std::log(gt[i]);
    s1 += d;
    s2 += d * d;
    ++n;
  }
  if (n == 0) throw EmptyDomainError("side: empty mask");
  const double m = s1 / static_cast<double>(n);
  return std::sqrt(std::max(0.0, s2 / static_cast<double>(n) - m * m));
}

double mad(const Tensor& pred_normals, const Tensor& gt_normals, const Tensor& mask) {
  if (pred_normals.rank() != 3 || pred_normals.dim(0) != 3 || pred_normals.shape() != gt_normals.shape()) {
    throw ShapeError("mad: expected two [3,H,W] normal maps, got " + shape_str(pred_normals.shape()) + " and " +
                     shape_str(gt_normals.shape()));
  }
  const auto [h, w] = map_size("mad", mask);
  if (h != pred_normals.dim(1) || w != pred_normals.dim(2)) throw ShapeError("mad: mask size differs from normals");
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < plane; ++i) {
    if (mask[i] == 0.0) continue;
    const double a0 = pred_normals[i], a1 = pred_normals[plane + i], a2 = pred_normals[2 * plane + i];
    const double b0 = gt_normals[i], b1 = gt_normals[plane + i], b2 = gt_normals[2 * plane + i];
    // atan2(|a x b|, a.b) equals acos(a.b) for unit vectors but stays accurate
    // near 0 and 180 degrees.
    const double cx = a1 * b2 - a2 * b1, cy = a2 * b0 - a0 * b2, cz = a0 * b1 - a1 * b0;
    sum += std::atan2(std::sqrt(cx * cx + cy * cy + cz * cz), a0 * b0 + a1 * b1 + a2 * b2);
    ++n;
  }
  if (n == 0) throw EmptyDomainError("mad: empty mask");
  return sum / static_cast<double>(n) * 180.0 / std::numbers::pi;
}

double depth_corr(const Tensor& pred, const Tensor& gt, const std::vector<Keypoint>& keypoints) {
  require_same_map("depth_corr", pred, gt);
  const auto [h, w] = map_size("depth_corr", pred);
  std::vector<double> a, b;
  for (const Keypoint& k : keypoints) {
    if (!(k[0] >= 0.0 && k[0] <= w - 1 && k[1] >= 0.0 && k[1] <= h - 1)) continue;
    a.push_back(bilinear(pred, h, w, k[0], k[1]));
    b.push_back(bilinear(gt, h, w, k[0], k[1]));
  }
  if (a.size() < 3) throw DegenerateInputError("depth_corr: fewer than 3 keypoints inside the image");
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa <= 0.0 || sbb <= 0.0) throw DegenerateInputError("depth_corr: zero variance in a depth sample");
  return 100.0 * sab / std::sqrt(saa * sbb);
}

double ssim(const Tensor& x, const Tensor& y, const Tensor& mask) {
  if (x.rank() != 3 || x.shape() != y.shape()) {
    throw ShapeError("ssim: expected two [C,H,W] images of equal shape, got " + shape_str(x.shape()) + " and " +
                     shape_str(y.shape()));
  }
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h < kWindow || w < kWindow) {
    throw ShapeError("ssim: image " + shape_str(x.shape()) + " is smaller than the 11x11 window");
  }
  if (map_size("ssim", mask) != std::pair{h, w}) throw ShapeError("ssim: mask size differs from images");

  std::array<double, kWindow> g{};
  double gsum = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double d = i - kWindow / 2;
    g[static_cast<std::size_t>(i)] = std::exp(-d * d / (2 * kWindowSigma * kWindowSigma));
    gsum += g[static_cast<std::size_t>(i)];
  }
  for (double& v : g) v /= gsum;

  const int r = kWindow / 2;
  double total = 0.0;
  std::size_t windows = 0;
  for (int cy = r; cy < h - r; ++cy) {
    for (int cx = r; cx < w - r; ++cx) {
      if (mask[static_cast<std::size_t>(cy) * w + cx] == 0.0) continue;
      double per_channel = 0.0;
      for (int k = 0; k < c; ++k) {
        double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
        for (int dy = -r; dy <= r; ++dy) {
          for (int dx = -r; dx <= r; ++dx) {
            const double wt = g[static_cast<std::size_t>(dy + r)] * g[static_cast<std::size_t>(dx + r)];
            const double a = x.at(k, cy + dy, cx + dx), b = y.at(k, cy + dy, cx + dx);
            mx += wt * a;
            my += wt * b;
            sxx += wt * a * a;
            syy += wt * b * b;
            sxy += wt * a * b;
          }
        }
        const double vx = sxx - mx * mx, vy = syy - my * my, cxy = sxy - mx * my;
        per_channel += ((2 * mx * my + kC1) * (2 * cxy + kC2)) / ((mx * mx + my * my + kC1) * (vx + vy + kC2));
      }
      total += per_channel / c;
      ++windows;
    }
  }
  if (windows == 0) throw EmptyDomainError("ssim: no window centre lies inside the mask");
  return total / static_cast<double>(windows);
}

double psnr(const Tensor& pred, const Tensor& target, const Tensor& mask) {
  if (pred.rank() != 3 || pred.shape() != target.shape()) throw ShapeError("psnr: image shapes differ");
  const auto [h, w] = map_size("psnr", mask);
  if (h != pred.dim(1) || w != pred.dim(2)) throw ShapeError("psnr: mask size differs from images");
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  double se = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < plane; ++i) {
    if (mask[i] == 0.0) continue;
    for (int k = 0; k < pred.dim(0); ++k) {
      const double d = pred[k * plane + i] - target[k * plane + i];
      se += d * d;
      ++n;
    }
  }
  if (n == 0) throw EmptyDomainError("psnr: empty mask");
  return -10.0 * std::log10(se / static_cast<double>(n));
}

double photometric_error(const Tensor& pred, const Tensor& target, const Tensor& mask) {
  if (pred.rank() != 3 || pred.shape() != target.shape()) throw ShapeError("photometric_error: image shapes differ");
  const auto [h, w] = map_size("photometric_error", mask);
  if (h != pred.dim(1) || w != pred.dim(2)) throw ShapeError("photometric_error: mask size differs from images");
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < plane; ++i) {
    if (mask[i] == 0.0) continue;
    double e = 0.0;
    for (int k = 0; k < pred.dim(0); ++k) e += std::abs(pred[k * plane + i] - target[k * plane + i]);
    sum += e / pred.dim(0);
    ++n;
  }
  if (n == 0) throw EmptyDomainError("photometric_error: empty mask");
  return sum / static_cast<double>(n);
}

Tensor align_median_shift(const Tensor& pred, const Tensor& gt, const Tensor& mask) {
  require_same_map("align_median_shift", pred, gt);
  require_same_map("align_median_shift", pred, mask);
  std::vector<double> a, b;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    if (mask[i] == 0.0) continue;
    a.push_back(pred[i]);
    b.push_back(gt[i]);
  }
  if (a.empty()) throw EmptyDomainError("align_median_shift: empty mask");
  const double shift = median(b) - median(a);
  Tensor out = pred;
  for (double& v : out.data()) v += shift;
  return out;
}

}  // namespace lap::eval
