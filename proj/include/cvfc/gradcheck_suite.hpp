#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cvfc/gradcheck.hpp"

namespace cvfc {

/// Names of every differentiable primitive, in suite order.
const std::vector<std::string>& primitive_op_names();

/// One report per primitive (variants such as transposes or strides folded
/// into one line), then the attention composite and the full three-branch
/// objective on reduced-width backbones, all in f64.
std::vector<GradCheckReport> run_gradcheck_suite(std::uint64_t seed = 0, const GradCheckOptions& base = {});

}  // namespace cvfc
