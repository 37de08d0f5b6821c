#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "flowforge/data.hpp"
#include "flowforge/loss.hpp"
#include "flowforge/model.hpp"

namespace flowforge {

enum class Precision { f32, f64 };

struct OptimConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
  /// Learning rate is multiplied by `lr_gamma` at each milestone, given as a
  /// fraction of the total iteration count.
  std::vector<double> lr_milestones{0.6, 0.8};
  double lr_gamma = 0.5;
  int iterations = 2000;
  int batch_size = 4;
  int checkpoint_every = 500;  // 0 writes only the final checkpoint
};

struct DataConfig {
  SceneConfig scene;
  std::string augment = "none";  // none | chairs | sintel | kitti
  int crop_h = 64, crop_w = 64;  // used when augmenting
  std::uint64_t eval_seed = 0x5eed'e7a1;
  int eval_samples = 64;
};

struct RunConfig {
  ModelConfig model = ModelConfig::desk();
  LossConfig loss;
  OptimConfig optim;
  DataConfig data;
  std::uint64_t seed = 1;
  Precision precision = Precision::f32;
  std::string stage1_checkpoint;  // required when model.stages == 2
  std::string out_dir;            // empty: no files written

  void validate() const;
  std::string to_json() const;
  /// Missing keys keep their defaults; unknown keys are rejected.
  static RunConfig from_json(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Piecewise-constant step decay.
double learning_rate_at(const OptimConfig& optim, int step);

/// Adam over the non-frozen parameters of a store.
template <typename T>
class Adam {
 public:
  explicit Adam(const OptimConfig& config) : config_(config) {}
  /// Applies one update to every bound, gradient-carrying parameter.
  void step(ParamStore<T>& store, const ParamBinding<T>& bound, const Tape<T>& tape, double lr);
  int steps() const { return t_; }

 private:
  OptimConfig config_;
  int t_ = 0;
  std::unordered_map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments_;
};

/// Training sample `index` of the stream for `seed` (augmented when the data
/// config asks for it).
SyntheticSample training_sample(const DataConfig& data, std::uint64_t seed, std::uint64_t index);
/// Fixed held-out set shared by every run with the same data config.
SyntheticSample eval_sample(const DataConfig& data, int index);

struct StepMetrics {
  int step = 0;
  double loss = 0, aepe = 0, fl_all = 0;
};

std::string format_metrics(const StepMetrics& m);

template <typename T>
struct TrainResult {
  MaskFlownet<T> model;
  std::vector<StepMetrics> history;
};

/// Trains per `config`; writes one metrics line per step to `log` and
/// checkpoints into config.out_dir. Stage-2 runs load and freeze stage 1
/// from config.stage1_checkpoint.
template <typename T>
TrainResult<T> train(const RunConfig& config, std::ostream* log = nullptr);

struct EvalReport {
  int samples = 0;
  double aepe = 0, fl_all = 0;
  double zero_aepe = 0, zero_fl_all = 0;  // zero-flow predictor
  double mean_gt_magnitude = 0;
  double theta_occluded = 0, theta_visible = 0;  // mean mask over ground-truth occluded / visible pixels
  double theta_occluded_in_frame = 0;            // occluded pixels whose target stays inside the frame

  double mask_gap() const { return theta_visible - theta_occluded; }
  std::string to_json() const;
};

/// Evaluates the final-stage outputs on the held-out set.
template <typename T>
EvalReport evaluate(const MaskFlownet<T>& model, const DataConfig& data, int batch_size = 4);

/// Runs a model on an image pair of any size by replicate-padding to a
/// multiple of 64 and cropping the outputs back. Returns (flow, mask).
template <typename T>
std::pair<Tensor<float>, Tensor<float>> infer(const MaskFlownet<T>& model, const Tensor<float>& image1,
                                              const Tensor<float>& image2);

/// Copies a store into f32 for checkpointing.
template <typename T>
ParamStore<float> to_float_store(const ParamStore<T>& store);

/// Builds a model from a checkpoint; the header must describe `expected`
/// when given.
template <typename T>
MaskFlownet<T> load_model(const std::string& path, const std::optional<ModelConfig>& expected = std::nullopt);

}  // namespace flowforge
