#pragma once

#include <vector>

#include "flowforge/autodiff.hpp"
#include "flowforge/random.hpp"
#include "flowforge/tensor.hpp"

namespace testutil {

using flowforge::Rng;
using flowforge::Shape;
using flowforge::Tensor;

inline Tensor<double> rand_t(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  return flowforge::uniform_tensor<double>(s, rng, lo, hi);
}

inline std::vector<double> to_vec(const Tensor<double>& t) { return {t.data().begin(), t.data().end()}; }

/// Flow field whose every component sits at least `margin` away from the
/// integer lattice (keeps finite differences off bilinear kinks).
inline Tensor<double> off_lattice_flow(Shape s, Rng& rng, double range, double margin = 0.1) {
  std::uniform_int_distribution<int> whole(-static_cast<int>(range), static_cast<int>(range) - 1);
  std::uniform_real_distribution<double> frac(margin, 1.0 - margin);
  Tensor<double> t(s);
  for (auto& v : t.data()) v = whole(rng) + frac(rng);
  return t;
}

}  // namespace testutil
