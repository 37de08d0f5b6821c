#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "flowforge/autodiff.hpp"
#include "flowforge/params.hpp"
#include "flowforge/tensor.hpp"

namespace flowforge {

/// Matching module used at levels 5..2. Decoders are identical across
/// variants; only the construction of the second cost-volume operand changes.
enum class Matching {
  fmm,        // warp
  ofmm,       // warp, then mask and trade-off
  asym_ofmm,  // flow-displaced deformable conv, then mask and trade-off
  asym_conv,  // warp, then plain conv, then mask and trade-off
};

std::string_view to_string(Matching m);
Matching parse_matching(std::string_view name);

inline constexpr int kFinestLevel = 2;
inline constexpr int kCoarsestLevel = 6;
inline constexpr int kNumDecoderLevels = kCoarsestLevel - kFinestLevel + 1;

struct ModelConfig {
  std::array<int, 6> pyramid_channels{16, 32, 64, 96, 128, 196};  // levels 1..6
  std::array<int, 5> decoder_widths{128, 128, 96, 64, 32};
  std::array<int, 6> context_widths{128, 128, 128, 96, 64, 32};
  std::array<int, 6> context_dilations{1, 2, 4, 8, 16, 1};
  int mu_deconv_channels = 16;
  int convs_per_level = 3;
  int max_disp_stage1 = 4;
  int max_disp_stage2 = 2;
  Matching matching = Matching::asym_ofmm;
  bool tradeoff = true;
  int stages = 1;
  double flow_scale = 20.0;
  int image_channels = 3;

  /// Reduced widths for single-core training runs.
  static ModelConfig desk();

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <typename T>
struct LevelOutputs {
  Var<T> cost;          // concatenated cost volumes fed to the decoder
  Var<T> flow;          // per-level pixels
  Var<T> theta_logits;  // pre-sigmoid occlusion mask (invalid at level 2)
  Var<T> theta;         // mask applied in this level's matching, upsampled from level l+1
  Var<T> mu_next;       // trade-off features for level l-1 (invalid at level 2)
  Var<T> features;      // last dense layer output
};

template <typename T>
struct StageOutputs {
  std::array<LevelOutputs<T>, kNumDecoderLevels> levels;  // index l - 2
  Var<T> flow_full;
  Var<T> mask_full;  // level-2 theta upsampled to input resolution

  LevelOutputs<T>& level(int l) { return levels[l - kFinestLevel]; }
  const LevelOutputs<T>& level(int l) const { return levels[l - kFinestLevel]; }
};

template <typename T>
struct ForwardResult {
  StageOutputs<T> stage1;
  std::optional<StageOutputs<T>> stage2;
  std::array<Var<T>, 2> occlusion_inputs;  // 4-channel occlusion-aware pyramid inputs (stage 2)

  const StageOutputs<T>& final_stage() const { return stage2 ? *stage2 : stage1; }
};

/// Parameter handles bound onto one tape. Frozen parameters become
/// constants; everything else is a gradient leaf.
template <typename T>
class ParamBinding {
 public:
  /// With `trainable` false every parameter is bound as a constant.
  ParamBinding(Tape<T>& tape, const ParamStore<T>& store, bool trainable = true)
      : tape_(&tape), store_(&store), trainable_(trainable) {}

  Var<T> operator()(const std::string& name);
  const std::vector<std::pair<std::string, Var<T>>>& bound() const { return order_; }

 private:
  Tape<T>* tape_;
  const ParamStore<T>* store_;
  bool trainable_;
  std::unordered_map<std::string, Var<T>> vars_;
  std::vector<std::pair<std::string, Var<T>>> order_;
};

/// Two-stage coarse-to-fine flow network. Stage-1 parameters are prefixed
/// "s1.", stage-2 parameters "s2.".
template <typename T>
class MaskFlownet {
 public:
  MaskFlownet(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  /// Builds the full forward graph. Input spatial extents must be
  /// multiples of 64 and match between the two images.
  ForwardResult<T> forward(ParamBinding<T>& bind, const Var<T>& image1, const Var<T>& image2) const;

  std::vector<Var<T>> build_pyramid(ParamBinding<T>& bind, const std::string& prefix, const Var<T>& image) const;

  /// Occlusion-aware pyramid input: [image, mask - 0.5].
  static Var<T> occlusion_input(const Var<T>& image, const Var<T>& mask);

  /// Decoder for one level of stage 1 given the matching result.
  LevelOutputs<T> decode_level(ParamBinding<T>& bind, const std::string& prefix, int level, const Var<T>& cost,
                               const Var<T>& feat1, const Var<T>& up_flow, const Var<T>& up_mu) const;

  /// Copies values from a checkpoint into every parameter whose name starts
  /// with `prefix`; throws on unknown, missing or mismatched parameters.
  void load(const Checkpoint& checkpoint, std::string_view prefix = "");

 private:
  void init_stage(const std::string& prefix, bool occlusion_pyramid, std::uint64_t seed);
  void add_conv(const std::string& name, int in, int out, int k, std::uint64_t seed);
  void add_deconv(const std::string& name, int in, int out, std::uint64_t seed);
  int decoder_input_channels(int stage, int level) const;

  StageOutputs<T> forward_stage1(ParamBinding<T>& bind, const std::vector<Var<T>>& p1,
                                 const std::vector<Var<T>>& p2) const;
  StageOutputs<T> forward_stage2(ParamBinding<T>& bind, const StageOutputs<T>& s1, const std::vector<Var<T>>& p1,
                                 const std::vector<Var<T>>& p2, const std::vector<Var<T>>& q1,
                                 const std::vector<Var<T>>& q2) const;
  Var<T> match(ParamBinding<T>& bind, const std::string& prefix, int level, const Var<T>& f2, const Var<T>& flow,
               const Var<T>& theta, const Var<T>& mu) const;
  Var<T> context(ParamBinding<T>& bind, const std::string& prefix, const Var<T>& stack, const Var<T>& flow) const;
  void finish(StageOutputs<T>& out) const;

  ModelConfig config_;
  ParamStore<T> params_;
};

extern template class ParamBinding<float>;
extern template class ParamBinding<double>;
extern template class MaskFlownet<float>;
extern template class MaskFlownet<double>;

}  // namespace flowforge
