#pragma once

#include <array>
#include <vector>

#include "lap/tensor/tensor.hpp"

namespace lap::eval {

/// Maps are [1,H,W] or [H,W]; a mask pixel counts when it is non-zero.

/// Scale-invariant depth error sqrt(mean(D^2) - mean(D)^2), D = ln pred - ln gt
/// over the mask. Throws EmptyDomainError for an empty mask and DomainError for
/// non-positive depth inside it.
double side(const Tensor& pred, const Tensor& gt, const Tensor& mask);

/// Mean angle in degrees between unit normal maps [3,H,W] over the mask.
double mad(const Tensor& pred_normals, const Tensor& gt_normals, const Tensor& mask);

/// Keypoint as (column, row) in pixels.
using Keypoint = std::array<double, 2>;

/// Pearson correlation x100 between depths sampled bilinearly at the
/// keypoints that fall inside the image. Throws DegenerateInputError for fewer
/// than 3 usable keypoints or a constant sample.
double depth_corr(const Tensor& pred, const Tensor& gt, const std::vector<Keypoint>& keypoints);

/// Single-scale SSIM with an 11x11 Gaussian window (std 1.5),
/// C1 = 0.01^2, C2 = 0.03^2, per channel then averaged; the mean runs over
/// the fully inside windows whose centre lies in the mask. Images are [C,H,W].
double ssim(const Tensor& x, const Tensor& y, const Tensor& mask);

/// Peak signal-to-noise ratio (peak 1) over the mask.
double psnr(const Tensor& pred, const Tensor& target, const Tensor& mask);

/// Mean absolute per-pixel channel-averaged error over the mask.
double photometric_error(const Tensor& pred, const Tensor& target, const Tensor& mask);

/// pred + (median(gt) - median(pred)) over the mask, for comparisons where
/// depths carry different offsets.
Tensor align_median_shift(const Tensor& pred, const Tensor& gt, const Tensor& mask);

/// Pixels where the mask is non-zero.
std::size_t mask_count(const Tensor& mask);

}  // namespace lap::eval
