#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "lap/tensor/tape.hpp"

namespace lap {

/// Scalar-valued function of tape inputs. Must be deterministic.
using ScalarFn = std::function<Var(Tape&, std::span<const Var>)>;

struct FiniteDiffOptions {
  double step = 1e-4;
  /// Probe at most this many entries per input (0 = all). Entries are
  /// picked by a fixed stride so repeated runs probe the same set.
  std::size_t max_entries = 0;
  /// Smallest denominator of the relative error.
  double floor = 1e-8;
};

struct FiniteDiffResult {
  /// Max relative error per input.
  std::vector<double> max_rel_error;
  double worst() const;
};

/// Compares backward() against central differences. Relative error uses
/// denominator max(|analytic|, |numeric|, floor).
FiniteDiffResult finite_diff_check(const ScalarFn& f, std::span<const Tensor> inputs,
                                   const FiniteDiffOptions& options = {});

}  // namespace lap
