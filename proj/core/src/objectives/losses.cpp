#include "lap/objectives/losses.hpp"

#include <cmath>
#include <numbers>

#include "lap/errors.hpp"
#include "lap/io/image_io.hpp"
#include "lap/tensor/ops.hpp"

namespace lap::objectives {
namespace {

constexpr double kSqrt2 = std::numbers::sqrt2;

void check_pair(const char* op, const Var& rendered, const Var& target, const Var& sigma) {
  if (rendered.shape() != target.shape() || rendered.value().rank() != 3) {
    throw ShapeError(std::string(op) + ": rendered " + shape_str(rendered.shape()) + " and target " +
                     shape_str(target.shape()) + " differ");
  }
  const Shape expect{1, rendered.dim(1), rendered.dim(2)};
  if (sigma.shape() != expect) {
    throw ShapeError(std::string(op) + ": confidence " + shape_str(sigma.shape()) + ", expected " + shape_str(expect));
  }
  for (double s : sigma.value().data()) {
    if (!(s > 0.0)) throw DomainError(std::string(op) + ": confidence must be positive");
  }
}

// ln(sqrt2 sigma) + sqrt2 e / sigma per pixel.
Var laplace_term(const Var& residual, const Var& sigma) {
  return ops::add(ops::add_scalar(ops::log(sigma), std::log(kSqrt2)), ops::scale(ops::div(residual, sigma), kSqrt2));
}

}  // namespace

RelaxedMask::RelaxedMask(Tensor weights) {
  if (weights.rank() == 2) weights = weights.reshaped({1, weights.dim(0), weights.dim(1)});
  if (weights.rank() != 3 || weights.dim(0) != 1) {
    throw ShapeError("relaxed mask: expected [1,H,W], got " + shape_str(weights.shape()));
  }
  std::size_t face = 0;
  for (double w : weights.data()) {
    if (w < 0.0 || w > 1.0) throw ContractError("relaxed mask: weights must lie in [0,1]");
    if (w > 0.0) ++face;
  }
  face_fraction_ = static_cast<double>(face) / static_cast<double>(weights.numel());
  weights_ = std::move(weights);
}

double RelaxedMask::total_weight() const {
  double s = 0.0;
  for (double w : weights_.data()) s += w;
  return s;
}

Tensor RelaxedMask::support() const {
  Tensor s(weights_.shape());
  for (std::size_t i = 0; i < s.numel(); ++i) s[i] = weights_[i] > 0.0 ? 1.0 : 0.0;
  return s;
}

Var channel_residual(const Var& rendered, const Var& target) {
  return ops::mean(ops::abs(ops::sub(rendered, target)), 0);
}

Var recon_nll(const Var& rendered, const Var& target, const Var& sigma, const std::optional<Tensor>& domain) {
  check_pair("recon_nll", rendered, target, sigma);
  const Var term = laplace_term(channel_residual(rendered, target), sigma);
  if (!domain) return ops::mean(term);
  if (domain->shape() != sigma.shape()) {
    throw ShapeError("recon_nll: domain " + shape_str(domain->shape()) + " vs confidence " + shape_str(sigma.shape()));
  }
  double count = 0.0;
  for (double m : domain->data()) count += m;
  if (count <= 0.0) throw EmptyDomainError("recon_nll: empty loss domain");
  const Var masked = ops::mul(term, rendered.tape().constant(*domain));
  return ops::scale(ops::sum(masked), 1.0 / count);
}

Var relaxed_consistency(const Var& rendered, const Var& target, const Var& sigma, const RelaxedMask& mask) {
  check_pair("relaxed_consistency", rendered, target, sigma);
  if (mask.weights().shape() != sigma.shape()) {
    throw ShapeError("relaxed_consistency: mask " + shape_str(mask.weights().shape()) + " vs confidence " +
                     shape_str(sigma.shape()));
  }
  const double total = mask.total_weight();
  if (total <= 0.0) throw EmptyDomainError("relaxed_consistency: all-zero mask (sample should have been filtered)");
  Tape& tape = rendered.tape();
  const Var weighted = ops::mul(channel_residual(rendered, target), tape.constant(mask.weights()));
  const Var term = ops::mul(laplace_term(weighted, sigma), tape.constant(mask.support()));
  return ops::scale(ops::sum(term), 1.0 / total);
}

Var total_objective(const ObjectiveTerms& t, LossKind kind, const std::optional<RelaxedMask>& mask,
                    double lambda_flip) {
  auto term = [&](const Var& rendered, const Var& sigma) {
    if (kind == LossKind::RelaxedConsistency) {
      if (!mask) throw ContractError("total_objective: relaxed consistency needs a mask");
      return relaxed_consistency(rendered, t.target, sigma, *mask);
    }
    return recon_nll(rendered, t.target, sigma, mask ? std::optional<Tensor>(mask->support()) : std::nullopt);
  };
  const Var plain = term(t.rendered, t.sigma);
  if (lambda_flip == 0.0) return plain;
  return ops::add(plain, ops::scale(term(t.rendered_flip, t.sigma_flip), lambda_flip));
}

bool mask_filter(const RelaxedMask& mask, double min_face_fraction) {
  return mask.face_fraction() >= min_face_fraction;
}

RelaxedMask load_relaxed_mask(const std::filesystem::path& path) {
  Tensor levels = io::read_png_levels(path);
  if (levels.dim(0) != 1) throw IoError(path.string() + ": relaxed mask must be a grayscale PNG");
  for (double& v : levels.data()) {
    if (v == 0.0) {
      v = 0.0;
    } else if (v == 77.0) {
      v = kDefaultRelaxWeight;
    } else if (v == 255.0) {
      v = 1.0;
    } else {
      throw IoError(path.string() + ": mask level " + std::to_string(static_cast<int>(v)) + " is not one of 0/77/255");
    }
  }
  return RelaxedMask(std::move(levels));
}

void save_relaxed_mask(const std::filesystem::path& path, const RelaxedMask& mask) {
  Tensor img = mask.weights();
  for (double& v : img.data()) {
    if (v == 0.0 || v == 1.0) continue;
    if (v != kDefaultRelaxWeight) throw ContractError("save_relaxed_mask: weights must be 0, 0.3 or 1");
    v = 77.0 / 255.0;
  }
  io::write_png(path, img);
}

}  // namespace lap::objectives
