#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "flowforge/random.hpp"
#include "flowforge/tensor.hpp"

namespace flowforge {

/// Image pair with forward ground truth. Tensors are (1, C, H, W).
struct SyntheticSample {
  Tensor<float> image1, image2;  // C = 3, values in [0, 1]
  Tensor<float> flow;            // C = 2, I1 -> I2 in pixels
  Tensor<float> occlusion;       // C = 1, 1 = occluded in I2
  Tensor<float> valid;           // C = 1, 1 = ground truth available
};

/// Procedural colour field: constant cells of `cell` pixels with random
/// colours, plus a linear ramp. Defined on the whole plane.
struct Texture {
  std::uint64_t seed = 0;
  int cell = 6;
  std::array<float, 2> ramp{0.0f, 0.0f};  // intensity change per pixel along x, y

  std::array<float, 3> color(double u, double v) const;
};

enum class ShapeKind { rectangle, ellipse };

/// Rigid foreground layer. Placement is given in frame 1; in frame 2 the
/// layer is rotated about its centre and then translated.
struct Layer {
  ShapeKind kind = ShapeKind::rectangle;
  double cx = 0, cy = 0;          // centre (pixels)
  double half_w = 8, half_h = 8;  // half extents
  double dx = 0, dy = 0;          // translation between frames
  double rotation_deg = 0;
  Texture texture;

  bool contains_local(double u, double v) const;
};

/// Layers are ordered back to front on top of a translating background.
struct Scene {
  int height = 64, width = 64;
  Texture background;
  double bg_dx = 0, bg_dy = 0;
  std::vector<Layer> layers;
};

struct SceneConfig {
  int height = 64, width = 64;
  int min_shapes = 1, max_shapes = 3;
  double max_disp = 8.0;          // per-component bound on every motion
  bool move_background = true;
  bool integer_motion = true;
  double max_rotation_deg = 0.0;  // per-shape rotation between frames
  double min_half_size = 6.0, max_half_size = 16.0;
  int min_cell = 10, max_cell = 20;  // texture cell size range in pixels

  void validate() const;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Renders both frames and analytic ground truth. A frame-1 pixel is
/// occluded when its target leaves the frame or lands on a different
/// layer in frame 2; out-of-frame targets are also invalid.
SyntheticSample render_scene(const Scene& scene);

Scene random_scene(std::uint64_t seed, const SceneConfig& config);

SyntheticSample gen_sample(std::uint64_t seed, const SceneConfig& config);

/// Stacks samples along the batch axis.
SyntheticSample stack_samples(const std::vector<SyntheticSample>& samples);

// Augmentation ---------------------------------------------------------------

enum class AugmentProfile { chairs, sintel, kitti };

struct GeometricRanges {
  double flip = 0;            // probability of a horizontal flip
  double squeeze = 1;         // aspect factor drawn from [squeeze, 1/squeeze]
  double translate = 0;       // fraction of the image size
  double rel_translate = 0;   // additional frame-2 translation fraction
  double rotate_deg = 0;
  double rel_rotate_deg = 0;
  double zoom_lo = 1, zoom_hi = 1;
  double rel_zoom = 1;        // frame-2 zoom factor drawn from [rel_zoom, 1/rel_zoom]
};

struct ChromaticRanges {
  double contrast_lo = 0, contrast_hi = 0;
  double brightness = 0;
  double channel_lo = 1, channel_hi = 1;
  double saturation = 0;
  double hue = 0;    // hue rotation, fraction of a half turn
  double noise = 0;  // Gaussian noise sigma drawn from [0, noise]
};

struct AugmentParams {
  GeometricRanges geometric;
  ChromaticRanges chromatic;
  int crop_h = 64, crop_w = 64;

  static AugmentParams profile(AugmentProfile p);
  static AugmentParams identity(int height, int width);
};

AugmentProfile parse_profile(const std::string& name);

/// Crop size presets of the large-scale training stages.
struct CropPreset {
  const char* name;
  int width, height;
};
inline constexpr std::array<CropPreset, 4> kCropPresets{{
    {"chairs", 448, 320},
    {"things", 768, 384},
    {"sintel", 768, 320},
    {"kitti", 896, 320},
}};

/// One concrete draw of the augmentation parameters.
struct AugmentDraw {
  bool flip = false;
  double zoom = 1, squeeze = 1, rotate_deg = 0, tx = 0, ty = 0;  // shared transform (tx, ty in pixels)
  double rel_zoom = 1, rel_rotate_deg = 0, rel_tx = 0, rel_ty = 0;
  double contrast = 0, brightness = 0, saturation = 0, hue = 0, noise_sigma = 0;
  std::array<double, 3> channel{1, 1, 1};
  std::uint64_t noise_seed = 0;
};

/// Draws parameters, raising the zoom to the smallest value for which the
/// crop lies inside both frames. Throws DataError when that floor exceeds
/// the upper zoom bound.
AugmentDraw draw_augment(const AugmentParams& params, int height, int width, Rng& rng);

/// Smallest zoom for which a crop fits inside both transformed frames.
double zoom_floor(const AugmentDraw& draw, int height, int width, int crop_h, int crop_w);

SyntheticSample apply_augment(const SyntheticSample& sample, const AugmentDraw& draw, int crop_h, int crop_w);

SyntheticSample augment(const SyntheticSample& sample, const AugmentParams& params, Rng& rng);

/// Mean |I1(x) - I2(x + flow(x))| over valid, non-occluded pixels with
/// bilinear sampling of I2.
double consistency_error(const SyntheticSample& sample);

}  // namespace flowforge
