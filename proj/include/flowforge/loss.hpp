#pragma once

#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "flowforge/autodiff.hpp"
#include "flowforge/tensor.hpp"

namespace flowforge {

struct LossConfig {
  std::vector<double> weights{0.005, 0.01, 0.02, 0.08, 0.32};  // one per supervised level
  std::vector<int> levels{2, 3, 4, 5, 6};
  bool robust = false;
  double q = 0.4;
  double eps = 0.01;
  /// Network-scale flow is full-resolution pixels divided by this factor.
  double flow_scale = 20.0;

  void validate() const;
};

class MetricError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Ground truth at pyramid level l: valid-weighted block average over
/// 2^l x 2^l cells with displacement divided by 2^l. A coarse pixel is
/// valid when at least half of its cell is valid.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> downscale_flow(const Tensor<T>& flow, const Tensor<T>& valid, int level);

/// Mean over valid pixels of the per-pixel error of unit * (pred - gt):
/// Euclidean norm, or (|du| + |dv| + eps)^q when robust. Zero when no
/// pixel is valid.
template <typename T>
Var<T> flow_error_loss(const Var<T>& pred, const Tensor<T>& gt, const Tensor<T>& valid, double unit, bool robust,
                       double q, double eps);

/// Weighted sum over levels of flow_error_loss against downscaled ground
/// truth, compared in network scale (per-level pixels * 2^l / flow_scale).
template <typename T>
Var<T> multiscale_epe(std::span<const Var<T>> preds, const Tensor<T>& gt, const Tensor<T>& valid,
                      const LossConfig& cfg);

/// Average end-point error over valid pixels.
template <typename T>
double aepe(const Tensor<T>& pred, const Tensor<T>& gt, const Tensor<T>& valid);

/// Percentage of valid pixels whose end-point error exceeds both 3 px and
/// 5% of the ground-truth magnitude.
template <typename T>
double fl_all(const Tensor<T>& pred, const Tensor<T>& gt, const Tensor<T>& valid);

}  // namespace flowforge
