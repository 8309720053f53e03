#include "lap/tensor/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "lap/errors.hpp"

namespace lap {
namespace {

double evaluate(const ScalarFn& f, std::span<const Tensor> inputs) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const Tensor& t : inputs) vars.push_back(tape.constant(t));
  const Var y = f(tape, vars);
  if (y.numel() != 1) throw ContractError("finite_diff_check: function is not scalar-valued");
  return y.value()[0];
}

}  // namespace

double FiniteDiffResult::worst() const {
  double w = 0.0;
  for (double e : max_rel_error) w = std::max(w, e);
  return w;
}

FiniteDiffResult finite_diff_check(const ScalarFn& f, std::span<const Tensor> inputs,
                                   const FiniteDiffOptions& options) {
  const double h = options.step;
  if (!(h >= 1e-6 && h <= 1e-3)) throw ContractError("finite_diff_check: step must lie in [1e-6, 1e-3]");

  Tape tape;
  std::vector<Var> vars;
  for (const Tensor& t : inputs) vars.push_back(tape.leaf(t));
  const Var y = f(tape, vars);
  if (y.numel() != 1) throw ContractError("finite_diff_check: function is not scalar-valued");
  const Gradients grads = tape.backward(y);

  const double probe = evaluate(f, inputs);
  if (probe != y.value()[0]) {
    throw VerificationError("finite_diff_check: function gave different values on repeated evaluation");
  }

  FiniteDiffResult result;
  std::vector<Tensor> work(inputs.begin(), inputs.end());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const std::size_t n = inputs[i].numel();
    const Tensor analytic = grads.has(vars[i]) ? grads.at(vars[i]) : Tensor(inputs[i].shape(), 0.0);
    std::size_t stride = 1;
    if (options.max_entries > 0 && n > options.max_entries) stride = n / options.max_entries;
    double worst = 0.0;
    for (std::size_t j = 0; j < n; j += stride) {
      const double x0 = inputs[i][j];
      work[i][j] = x0 + h;
      const double fp = evaluate(f, work);
      work[i][j] = x0 - h;
      const double fm = evaluate(f, work);
      work[i][j] = x0;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[j];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
    result.max_rel_error.push_back(worst);
  }
  return result;
}

}  // namespace lap
