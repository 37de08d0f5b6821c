#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flowforge/gradcheck.hpp"

namespace flowforge {

/// A finite-difference check for one differentiable operation, with inputs
/// drawn from a seed. Flow inputs stay at least 0.1 away from the integer
/// lattice so central differences never straddle a bilinear kink.
struct GradCheckCase {
  std::string op;
  GradFunction fn;
  std::vector<GradInput> inputs;
  GradCheckOptions options;
};

std::vector<std::string> gradcheck_ops();

/// Throws std::invalid_argument for names not in gradcheck_ops().
GradCheckCase gradcheck_case(const std::string& op, std::uint64_t seed);

}  // namespace flowforge
