#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lap/nn/networks.hpp"
#include "lap/objectives/losses.hpp"
#include "lap/render/renderer.hpp"
#include "lap/train/config.hpp"

namespace lap::train {

enum class Stage { A, B, C };
std::string to_string(Stage stage);
Stage parse_stage(const std::string& name);

/// Everything the full model produces for one image set [N,3,S,S].
struct SetForward {
  nn::CanonicalFace face;                 ///< a_c [1,3,S,S], d_c [1,1,S,S]
  Var pose;                               ///< [N,6]
  Var light;                              ///< [N,4]
  nn::Confidence confidence;              ///< [N,1,S,S] each
  std::vector<render::RenderOutput> canonical;       ///< render of (a_c, d_c) into view i
  std::vector<render::RenderOutput> canonical_flip;  ///< same with flipped factors
  std::optional<nn::Refined> refined;                ///< (a_t, d_t) per view
  std::vector<render::RenderOutput> refined_render;
  std::vector<render::RenderOutput> refined_flip;
};

render::Camera make_camera(const TrainConfig& cfg);

/// Runs encoders, aggregation, heads and renders; with `refine` also the
/// attribute-refining network.
SetForward forward_set(const nn::Binding& p, const TrainConfig& cfg, const Var& images, bool refine);

/// [N,...] -> item i as [...] without the leading axis.
Var item(const Var& batched, int i);

/// Per-set training objective: mean over accepted views of the stage-A term
/// (relaxed consistency on the canonical renders) plus, when refined factors
/// are present, the reconstruction term on the refined renders restricted to
/// the mask support. Returns nullopt when mask_filter rejects every view.
std::optional<Var> set_objective(const SetForward& f, const Var& images,
                                 const std::vector<objectives::RelaxedMask>& masks, const TrainConfig& cfg);

}  // namespace lap::train
