#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "flowforge/autodiff.hpp"

namespace flowforge {

struct GradCheckOptions {
  double step = 1e-5;
  /// Elements whose analytic and numeric gradients are both below this
  /// magnitude are excluded from the relative error.
  double magnitude_floor = 1e-8;
  /// 0 checks every element; otherwise a seeded subset of this size per input.
  std::size_t max_elements_per_input = 0;
  std::uint64_t seed = 0;
};

struct InputGradReport {
  std::string name;
  double max_rel_error = 0;   // elementwise |a-n| / max(|a|,|n|)
  double norm_rel_error = 0;  // ||a-n|| / ||n|| over checked elements
  std::size_t checked = 0;
};

struct GradCheckReport {
  std::vector<InputGradReport> inputs;

  double max_rel_error() const;
  bool passed(double tolerance) const { return max_rel_error() < tolerance; }
};

struct GradInput {
  std::string name;
  Tensor<double> value;
};

/// Builds the function under test on a tape from leaf variables (one per input).
using GradFunction = std::function<Var<double>(std::span<const Var<double>>)>;

/// Compares reverse-mode gradients of sum(f(inputs) * R), R a fixed random
/// projection, against central finite differences.
GradCheckReport check_gradients(const GradFunction& f, const std::vector<GradInput>& inputs,
                                const GradCheckOptions& options = {});

}  // namespace flowforge
