#pragma once

#include <filesystem>
#include <optional>

#include "lap/tensor/tape.hpp"

namespace lap::objectives {

inline constexpr double kDefaultRelaxWeight = 0.3;
inline constexpr double kDefaultMinFaceFraction = 0.10;
inline constexpr double kDefaultFlipWeight = 0.5;

/// Per-pixel weights in {0, relax, 1}: background, expression-variable parts
/// (mouth, eyes, brows) and the rest of the visible face.
class RelaxedMask {
 public:
  RelaxedMask() = default;
  /// weights: [1,H,W] or [H,W]; stored as [1,H,W].
  explicit RelaxedMask(Tensor weights);

  const Tensor& weights() const { return weights_; }
  int height() const { return weights_.dim(1); }
  int width() const { return weights_.dim(2); }
  /// Fraction of pixels with non-zero weight.
  double face_fraction() const { return face_fraction_; }
  /// Sum of weights.
  double total_weight() const;
  /// Indicator of weight > 0.
  Tensor support() const;

 private:
  Tensor weights_;
  double face_fraction_ = 0.0;
};

/// Mean absolute residual over channels: [C,H,W] pair -> [1,H,W].
Var channel_residual(const Var& rendered, const Var& target);

/// Laplacian negative log-likelihood ln(sqrt2 sigma) + sqrt2 e / sigma averaged
/// over the pixels where `domain` is 1 (all pixels when absent).
/// Throws EmptyDomainError when the domain is empty.
Var recon_nll(const Var& rendered, const Var& target, const Var& sigma, const std::optional<Tensor>& domain = {});

/// Same Laplacian term with the residual scaled by the relaxed mask, summed
/// over pixels with non-zero weight and divided by the total mask weight.
Var relaxed_consistency(const Var& rendered, const Var& target, const Var& sigma, const RelaxedMask& mask);

enum class LossKind { Reconstruction, RelaxedConsistency };

struct ObjectiveTerms {
  Var rendered;
  Var rendered_flip;
  Var target;
  Var sigma;
  Var sigma_flip;
};

/// L(I_hat, I, sigma) + lambda_flip * L(I_hat', I, sigma'). For
/// Reconstruction the mask support is the domain (full image when absent);
/// RelaxedConsistency requires a mask.
Var total_objective(const ObjectiveTerms& terms, LossKind kind, const std::optional<RelaxedMask>& mask,
                    double lambda_flip = kDefaultFlipWeight);

/// False when the visible face covers less than the given fraction of the image.
bool mask_filter(const RelaxedMask& mask, double min_face_fraction = kDefaultMinFaceFraction);

/// Grayscale PNG with levels {0 -> 0, 77 -> 0.3, 255 -> 1}; anything else is an IoError.
RelaxedMask load_relaxed_mask(const std::filesystem::path& path);
/// Inverse of load_relaxed_mask; weights must be in {0, 0.3, 1}.
void save_relaxed_mask(const std::filesystem::path& path, const RelaxedMask& mask);

}  // namespace lap::objectives
