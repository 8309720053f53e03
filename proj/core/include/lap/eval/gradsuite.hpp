#pragma once

#include <string>
#include <vector>

namespace lap::eval {

/// One finite-difference check: the worst relative error over its trials.
struct GradCheckRow {
  std::string suite;
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool pass() const { return max_rel_error < tolerance; }
};

/// Suites: "primitives", "renderer", "losses", "networks", or "all".
/// Unknown names are a ContractError. Inputs are drawn from fixed seeds and
/// kept away from kinks, ties and cell boundaries.
std::vector<GradCheckRow> run_gradient_suite(const std::string& suite);

std::vector<std::string> gradient_suites();

}  // namespace lap::eval
