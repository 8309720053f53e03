#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lap/objectives/losses.hpp"
#include "lap/render/renderer.hpp"
#include "lap/tensor/tensor.hpp"

namespace lap::synth {

enum class Region : int { Background = 0, Face = 1, Mouth = 2, Eye = 3, Brow = 4 };
inline constexpr int kRegionCount = 5;
inline constexpr int kKeypointCount = 12;

enum class Tier { Easy, Wild };
std::string to_string(Tier tier);
Tier parse_tier(const std::string& name);

/// 64-bit mixing (splitmix64) used to derive independent seed streams.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

/// Ground-truth canonical face of one identity.
struct Scene {
  std::uint64_t seed = 0;
  Tensor albedo;  ///< [3,S,S] in [0,1]
  Tensor depth;   ///< [1,S,S] in [0.9,1.1]
  Tensor labels;  ///< [1,S,S] holding Region values
  /// Landmarks (column, row) in pixels: eye corners x4, brow centres x2,
  /// nose tip, mouth corners x2, upper lip, chin, forehead.
  std::vector<std::array<double, 2>> keypoints;
};

/// Deterministic width-symmetric face of the given size.
Scene generate_identity(std::uint64_t seed, int size);

/// background -> 0, face -> 1, mouth/eye/brow -> relax_weight.
objectives::RelaxedMask build_relaxed_mask(const Tensor& labels, double relax_weight = objectives::kDefaultRelaxWeight);

struct View {
  render::Pose pose;
  render::Light light;
  Tensor albedo;        ///< canonical-frame albedo used for this view (perturbed in the wild tier)
  Tensor depth;         ///< canonical-frame depth used for this view
  Tensor clean_image;   ///< render of (albedo, depth, light, pose) before photometric perturbation
  Tensor image;         ///< final [3,S,S] image
  Tensor view_depth;    ///< [1,S,S] target-view depth (0 on background)
  Tensor labels;        ///< [1,S,S] reprojected region labels
  objectives::RelaxedMask mask;
  bool occluded = false;
};

struct Collection {
  Scene scene;
  Tier tier = Tier::Easy;
  std::uint64_t seed = 0;
  std::vector<View> views;
};

/// Renders n_views (1..6) views of a scene. Throws ContractError otherwise.
Collection render_collection(const Scene& scene, int n_views, Tier tier, std::uint64_t seed);

// ---------------------------------------------------------------------------
// On-disk layout: one directory per identity holding manifest.json,
// canonical_{albedo.png,depth.lapd,mask.png,keypoints.json} and per view
// view_XX_{image.png,mask.png,depth.lapd,albedo.png,canonical_depth.lapd,factors.json}.

/// Paths in a loaded manifest are resolved (directory already prepended).
struct ViewRecord {
  std::filesystem::path image;
  std::filesystem::path mask;
  std::filesystem::path depth;
  std::filesystem::path albedo;
  std::filesystem::path canonical_depth;
  std::filesystem::path factors;
};

struct Manifest {
  std::string identity;
  std::filesystem::path directory;
  Tier tier = Tier::Easy;
  std::uint64_t seed = 0;
  int image_size = 0;
  std::filesystem::path canonical_albedo;
  std::filesystem::path canonical_depth;
  std::filesystem::path canonical_mask;
  std::filesystem::path keypoints;
  std::vector<ViewRecord> views;
};

/// Writes a collection and returns its manifest.
Manifest write_collection(const std::filesystem::path& dir, const std::string& identity, const Collection& c);

/// Reads manifest.json; every referenced file must exist (IoError otherwise).
Manifest load_manifest(const std::filesystem::path& dir);

/// Images of the listed views stacked as [N,3,S,S] plus their masks [N,1,S,S].
struct ViewBatch {
  Tensor images;
  std::vector<objectives::RelaxedMask> masks;
};
ViewBatch load_views(const Manifest& m, const std::vector<int>& indices);

std::vector<std::array<double, 2>> read_keypoints(const std::filesystem::path& path);
void write_keypoints(const std::filesystem::path& path, const std::vector<std::array<double, 2>>& keypoints);

struct DatasetOptions {
  int identities = 200;
  int views = 6;
  Tier tier = Tier::Easy;
  std::uint64_t seed = 1;
  int image_size = 64;
};

/// Generates identities id_00000.. under root plus a dataset.json index.
/// Identity i uses the same scene for both tiers given the same seed.
std::vector<Manifest> generate_dataset(const std::filesystem::path& root, const DatasetOptions& options);

/// Loads every manifest listed in root/dataset.json (or every subdirectory
/// holding a manifest.json when there is no index).
std::vector<Manifest> load_dataset(const std::filesystem::path& root);

}  // namespace lap::synth
