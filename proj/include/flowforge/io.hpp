#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "flowforge/tensor.hpp"

namespace flowforge {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr float kFloMagic = 202021.25f;

/// Middlebury .flo: magic, int32 width, int32 height, then interleaved
/// (u, v) float32 rows, all little-endian. `flow` is (1, 2, H, W).
void write_flo(const std::filesystem::path& path, const Tensor<float>& flow);
Tensor<float> read_flo(const std::filesystem::path& path);

/// Middlebury colour wheel: 55 RGB entries.
const std::vector<std::array<std::uint8_t, 3>>& color_wheel();

/// Colour-codes flow (1, 2, H, W) into 8-bit RGB (H * W * 3). Magnitudes
/// are normalised by `max_mag`, or by the 99th percentile when max_mag <= 0.
std::vector<std::uint8_t> flow_to_rgb(const Tensor<float>& flow, double max_mag = 0);

/// Writes 8-bit PNGs. `image` is (1, C, H, W) with C = 1 or 3 and values in
/// [0, 1].
void write_png(const std::filesystem::path& path, const Tensor<float>& image);
void write_png_rgb(const std::filesystem::path& path, const std::vector<std::uint8_t>& rgb, int height, int width);
void write_flow_png(const std::filesystem::path& path, const Tensor<float>& flow, double max_mag = 0);
/// Grayscale mask image, white = visible.
void write_mask_png(const std::filesystem::path& path, const Tensor<float>& mask);

/// Reads an 8-bit PNG as (1, 3, H, W) in [0, 1]; gray and alpha are
/// converted.
Tensor<float> read_png(const std::filesystem::path& path);

}  // namespace flowforge
