#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace lap::eval {

/// Metric column names: "side" (reported x1e-2), "mad" (degrees), "ssim",
/// "corr" (x100).
const std::vector<std::string>& known_metrics();

/// Parses "side,mad,ssim,corr"; unknown or repeated names are a ContractError.
std::vector<std::string> parse_metrics(const std::string& list);

struct EvalRow {
  std::string name;
  std::map<std::string, double> values;
  std::size_t masked_pixels = 0;    ///< pixels inside the evaluation mask
  std::size_t rejected_pixels = 0;  ///< pixels outside it
};

struct EvalReport {
  std::vector<std::string> metrics;
  std::vector<EvalRow> rows;
  std::map<std::string, double> mean;
  /// Population standard deviation over rows.
  std::map<std::string, double> stddev;
  std::string config;

  /// Recomputes mean and stddev from the rows.
  void finalize();
  /// True when mean equals the row mean of every metric (within 1e-12 relative).
  bool consistent() const;
  std::string csv() const;
  std::string table() const;
};

struct EvalOptions {
  std::vector<std::string> metrics = known_metrics();
  /// Shift predicted depth so its masked median matches ground truth before SIDE.
  bool align_median = false;
  int threads = 0;
};

/// Compares reconstructions against a synthetic dataset. gt_dir is either an
/// identity directory (manifest.json) matched with pred_dir itself, or a
/// dataset root whose identities are matched with pred_dir/<identity>.
/// Predictions provide canonical_depth.lapd and canonical_albedo.png; ground
/// truth the canonical depth, albedo, mask and keypoints.
EvalReport evaluate_directories(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir,
                                const EvalOptions& options = {});

}  // namespace lap::eval
