#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cvfc/autodiff.hpp"

namespace cvfc {

struct GradCheckOptions {
  double step = 1e-5;       // central-difference half step
  double tolerance = 1e-4;  // pass iff max relative error <= tolerance
  /// Elements probed per input; larger inputs are sampled without replacement.
  std::size_t max_probes_per_input = 128;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  std::string op;
  double max_rel_err = 0.0;
  std::size_t probes = 0;
  bool passed = false;
  std::string failure;  // set when the check could not run (non-finite values, ...)
};

/// |a - b| / max(|a|, |b|, 1e-8)
double relative_error(double analytic, double numeric);

/// Receives leaf Vars for the inputs (same order) and returns the output.
using GradCheckFn = std::function<Var(Graph&, std::span<const Var>)>;

/// Compares the analytic gradient of `fn` against central differences with
/// respect to every input flagged in `wrt` (all inputs when empty). Inputs
/// must be f64. A non-scalar output is contracted with a seeded random
/// weight tensor so that every output element contributes.
GradCheckReport grad_check(std::string op, std::vector<Tensor> inputs, const GradCheckFn& fn,
                           const GradCheckOptions& opts = {}, std::vector<bool> wrt = {});

/// Same comparison for a scalar function of model parameters, probing
/// `samples` (parameter, element) pairs drawn with `opts.seed`.
GradCheckReport grad_check_parameters(std::string name, std::span<Parameter* const> params,
                                      const std::function<Var(Graph&)>& fn, std::size_t samples,
                                      const GradCheckOptions& opts = {});

}  // namespace cvfc
