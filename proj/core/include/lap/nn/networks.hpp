#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "lap/nn/params.hpp"

namespace lap::nn {

inline constexpr int kPyramidLevels = 5;
/// Pyramid levels that receive attribute injection (the three coarsest).
inline constexpr int kFirstInjectionLevel = 2;

struct NetConfig {
  /// Square input size; a power of two, at least 16.
  int image_size = 64;
  /// Latent code length c.
  int code_size = 128;
  std::array<int, kPyramidLevels> widths{16, 32, 64, 128, 128};
  std::array<int, 4> head_widths{16, 32, 64, 64};
  int max_set_size = 6;
  /// Columns at the left and right edge of the canonical depth held at
  /// kBorderDepth; 0 disables. A far border makes the face convex and rules
  /// out the hollow-face solution (inverted depth with mirrored pose and light
  /// renders almost the same image at this field of view).
  int depth_border = 1;

  void validate() const;
};

/// Per-stage features of one encoder. Sizes S/2, S/4, S/8, S/16 and 1; the
/// last level is the fused latent code [N,c,1,1].
struct Pyramid {
  std::array<Var, kPyramidLevels> levels;
};

struct Encoded {
  Var code;  ///< [N,c]
  Pyramid pyramid;
};

/// Hook applied to each stage output before it feeds the next stage
/// (used for attribute injection). Receives the level index.
using Injector = std::function<Var(int level, const Var& feature)>;

// ---------------------------------------------------------------------------
// Parameter groups

inline const std::set<std::string> kAggregationGroups{"delta_a", "delta_d", "agg_a", "agg_d",
                                                      "phi_a",   "phi_d",   "pose",  "light", "conf"};
inline const std::set<std::string> kRefineGroups{"refine_a", "refine_d"};

/// All weights of the model, deterministically initialized from the seed.
ParamStore init_parameters(const NetConfig& cfg, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Components

/// Strided encoder: images [N,C,S,S] -> latent code and pyramid.
Encoded encode(const Binding& p, const NetConfig& cfg, const std::string& prefix, const Var& images,
               const Injector& inject = {});

/// Order-invariant softmax pooling over the set axis: raw weights and codes
/// [N,c] -> [1,c] with sum_i softmax_i(raw)_j * codes_ij per channel j.
/// Reductions are performed over sorted terms, so any permutation of the
/// rows yields a bit-identical result.
Var set_softmax_pool(const Var& raw, const Var& codes);

/// Codes [N,c] -> aggregated code [1,c] (N >= 1).
Var aggregate_codes(const Binding& p, const std::string& prefix, const Var& codes);
/// Same for a list of [1,c] codes; an empty list is a ContractError.
Var aggregate_codes(const Binding& p, const std::string& prefix, std::span<const Var> codes);

/// Code [N,c] -> raw canonical map [N,out,S,S] (pre range mapping).
Var decode_raw(const Binding& p, const NetConfig& cfg, const std::string& prefix, const Var& code);

/// (tanh(raw) + 1) / 2.
Var map_albedo(const Var& raw);
/// 1 + 0.1 tanh(raw).
Var map_depth(const Var& raw);
/// 0.7 of the way from the nearest to the farthest representable depth.
inline constexpr double kBorderDepth = 1.04;
/// Overwrites `columns` columns on both width edges of depth [N,1,H,W] with
/// kBorderDepth.
Var pin_depth_border(const Var& depth, int columns);
/// Inverses of the range mappings (arguments clamped just inside the range).
Var unmap_albedo(const Var& albedo);
Var unmap_depth(const Var& depth);
/// [N,6] raw -> pose: angles 60 tanh (degrees), tx/ty 0.1 tanh, tz 0.05 tanh.
Var map_pose(const Var& raw);
/// [N,4] raw -> light: ambient/diffuse (tanh + 1)/2, lx/ly tanh.
Var map_light(const Var& raw);

/// [N,3,S,S] -> [N,6] in degrees / camera units.
Var predict_pose(const Binding& p, const NetConfig& cfg, const Var& images);
/// [N,3,S,S] -> [N,4] (ambient, diffuse, lx, ly).
Var predict_light(const Binding& p, const NetConfig& cfg, const Var& images);

struct Confidence {
  Var sigma;       ///< [N,1,S,S]
  Var sigma_flip;  ///< [N,1,S,S]
};
Confidence predict_confidence(const Binding& p, const NetConfig& cfg, const Var& images);

/// Channel gate sigmoid(MLP(GAP(feature))) applied to the feature. Only
/// levels 2, 3, 4 carry gates; others throw ContractError.
Var attribute_gate(const Binding& p, const std::string& prefix, int level, const Var& feature);

struct Filtered {
  Var attention;  ///< [N,1,h,w]
  Var fused;      ///< concat(dec, enc * attention) along channels
};
Filtered filtered_connection(const Binding& p, const std::string& name, const Var& enc, const Var& dec);

struct Refined {
  Var albedo;  ///< [N,3,S,S]
  Var depth;   ///< [N,1,S,S]
  /// Attention maps of the filtered connections, coarse to fine, per branch.
  std::vector<Var> attention;
};

/// Scene-specific factors for each target image [N,3,S,S] from one canonical
/// face ([1,3,S,S] albedo, [1,1,S,S] depth).
Refined refine_attributes(const Binding& p, const NetConfig& cfg, const Var& albedo, const Var& depth,
                          const Var& targets);

struct CanonicalFace {
  Var albedo;  ///< [1,3,S,S]
  Var depth;   ///< [1,1,S,S]
};

/// Encode a set of images [N,3,S,S], aggregate and decode; the depth border
/// is pinned per NetConfig::depth_border.
CanonicalFace canonical_face(const Binding& p, const NetConfig& cfg, const Var& images);

// Gate/attention overrides for controlled experiments.
void set_injection_gates(ParamStore& store, double logit);
void set_filter_attention(ParamStore& store, double logit);

}  // namespace lap::nn
