#pragma once

#include <initializer_list>
#include <span>
#include <vector>

#include "flowforge/autodiff.hpp"
#include "flowforge/tensor.hpp"

namespace flowforge {

/// Geometry of a (transposed) convolution. Kernel extents come from the
/// weight tensor, laid out (out_ch, in_ch, kh, kw) for both directions.
struct ConvSpec {
  int stride = 1;
  int padding = 1;
  int dilation = 1;
};

/// Output shape of conv2d; throws ShapeError when the geometry is invalid.
Shape conv2d_output_shape(const Shape& x, const Shape& weight, const ConvSpec& spec);

/// Output shape of deconv2d (stride 2, kernel 4, padding 1 only).
Shape deconv2d_output_shape(const Shape& x, const Shape& weight, const ConvSpec& spec);

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, const ConvSpec& spec = {});

/// Transposed convolution that exactly doubles the resolution. An invalid
/// `bias` handle means no bias.
template <typename T>
Var<T> deconv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias,
                const ConvSpec& spec = {2, 1, 1});

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope);

template <typename T>
Var<T> sigmoid(const Var<T>& x);

template <typename T>
Var<T> add(const Var<T>& x, const Var<T>& y);

template <typename T>
Var<T> sub(const Var<T>& x, const Var<T>& y);

/// Elementwise product of equally shaped tensors.
template <typename T>
Var<T> mul(const Var<T>& x, const Var<T>& y);

template <typename T>
Var<T> scale(const Var<T>& x, T s);

template <typename T>
Var<T> add_scalar(const Var<T>& x, T s);

template <typename T>
Var<T> concat_channels(std::span<const Var<T>> xs);

template <typename T>
Var<T> concat_channels(std::initializer_list<Var<T>> xs) {
  std::vector<Var<T>> v(xs);
  return concat_channels<T>(std::span<const Var<T>>(v));
}

template <typename T>
Var<T> slice_channels(const Var<T>& x, int start, int count);

/// Sum of all elements as a 1x1x1x1 tensor.
template <typename T>
Var<T> sum(const Var<T>& x);

/// Bilinear resize by an integer factor with half-pixel centres
/// (align_corners = false); source coordinates are clamped to the border.
template <typename T>
Var<T> upsample_bilinear(const Var<T>& x, int factor);

template <typename T>
Var<T> upsample_bilinear_2x(const Var<T>& x) {
  return upsample_bilinear(x, 2);
}

}  // namespace flowforge
