#pragma once

// Internal dense kernels shared by the convolution-style operators.

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

#include "flowforge/ops.hpp"

namespace flowforge::detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

/// Range [lo, hi) of output columns whose input column ox*stride + offset
/// falls inside [0, width).
inline void valid_range(int offset, int stride, int width, int out_w, int& lo, int& hi) {
  lo = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
  hi = offset >= width ? 0 : (width - 1 - offset) / stride + 1;
  lo = std::min(lo, out_w);
  hi = std::clamp(hi, lo, out_w);
}

/// Unfolds one image (C, H, W) into columns (C*kh*kw, out_h*out_w).
/// Row index is (c*kh + ky)*kw + kx; out-of-frame taps read zero. Rows are
/// `ld` elements apart (default out_h*out_w).
template <typename T>
void im2col(const T* img, int channels, int height, int width, int kh, int kw, const ConvSpec& s,
            int out_h, int out_w, T* cols, std::size_t ld = 0) {
  const std::size_t n_out = ld ? ld : static_cast<std::size_t>(out_h) * out_w;
  for (int c = 0; c < channels; ++c) {
    const T* src = img + static_cast<std::size_t>(c) * height * width;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        T* row = cols + static_cast<std::size_t>((c * kh + ky) * kw + kx) * n_out;
        const int off = kx * s.dilation - s.padding;
        int lo, hi;
        valid_range(off, s.stride, width, out_w, lo, hi);
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * s.stride - s.padding + ky * s.dilation;
          T* dst = row + oy * out_w;
          if (iy < 0 || iy >= height) {
            std::fill(dst, dst + out_w, T(0));
            continue;
          }
          const T* line = src + static_cast<std::size_t>(iy) * width + off;
          std::fill(dst, dst + lo, T(0));
          if (s.stride == 1) {
            std::copy(line + lo, line + hi, dst + lo);
          } else {
            for (int ox = lo; ox < hi; ++ox) dst[ox] = line[ox * s.stride];
          }
          std::fill(dst + hi, dst + out_w, T(0));
        }
      }
    }
  }
}

/// Adjoint of im2col: scatters columns back onto an image, accumulating.
template <typename T>
void col2im(const T* cols, int channels, int height, int width, int kh, int kw, const ConvSpec& s,
            int out_h, int out_w, T* img, std::size_t ld = 0) {
  const std::size_t n_out = ld ? ld : static_cast<std::size_t>(out_h) * out_w;
  for (int c = 0; c < channels; ++c) {
    T* dst_plane = img + static_cast<std::size_t>(c) * height * width;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const T* row = cols + static_cast<std::size_t>((c * kh + ky) * kw + kx) * n_out;
        const int off = kx * s.dilation - s.padding;
        int lo, hi;
        valid_range(off, s.stride, width, out_w, lo, hi);
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * s.stride - s.padding + ky * s.dilation;
          if (iy < 0 || iy >= height) continue;
          T* line = dst_plane + static_cast<std::size_t>(iy) * width + off;
          const T* src = row + oy * out_w;
          if (s.stride == 1) {
            for (int ox = lo; ox < hi; ++ox) line[ox] += src[ox];
          } else {
            for (int ox = lo; ox < hi; ++ox) line[ox * s.stride] += src[ox];
          }
        }
      }
    }
  }
}

/// Bilinear tap with zero padding. The base corner is ceil(p) - 1 so an
/// exact integer coordinate lands on the right edge of the left cell; the
/// sampled value is unchanged, but the coordinate derivative then uses the
/// left cell.
template <typename T>
struct BilinearTap {
  int x0, y0;
  T wx, wy;  // weight of the x0+1 / y0+1 corner

  BilinearTap(T y, T x) {
    const T cy = std::ceil(y);
    const T cx = std::ceil(x);
    y0 = static_cast<int>(cy) - 1;
    x0 = static_cast<int>(cx) - 1;
    wy = y - (cy - T(1));
    wx = x - (cx - T(1));
  }
};

template <typename T>
inline T pixel_or_zero(const T* plane, int height, int width, int y, int x) {
  return (y >= 0 && y < height && x >= 0 && x < width) ? plane[static_cast<std::size_t>(y) * width + x]
                                                       : T(0);
}

template <typename T>
inline T bilinear_sample(const T* plane, int height, int width, const BilinearTap<T>& t) {
  const T v00 = pixel_or_zero(plane, height, width, t.y0, t.x0);
  const T v01 = pixel_or_zero(plane, height, width, t.y0, t.x0 + 1);
  const T v10 = pixel_or_zero(plane, height, width, t.y0 + 1, t.x0);
  const T v11 = pixel_or_zero(plane, height, width, t.y0 + 1, t.x0 + 1);
  return (T(1) - t.wy) * ((T(1) - t.wx) * v00 + t.wx * v01) + t.wy * ((T(1) - t.wx) * v10 + t.wx * v11);
}

/// Adds g distributed over the four corners of `t`.
template <typename T>
inline void bilinear_scatter(T* plane, int height, int width, const BilinearTap<T>& t, T g) {
  auto put = [&](int y, int x, T v) {
    if (y >= 0 && y < height && x >= 0 && x < width) plane[static_cast<std::size_t>(y) * width + x] += v;
  };
  put(t.y0, t.x0, g * (T(1) - t.wy) * (T(1) - t.wx));
  put(t.y0, t.x0 + 1, g * (T(1) - t.wy) * t.wx);
  put(t.y0 + 1, t.x0, g * t.wy * (T(1) - t.wx));
  put(t.y0 + 1, t.x0 + 1, g * t.wy * t.wx);
}

/// Partial derivatives of the bilinear sample w.r.t. (y, x).
template <typename T>
inline void bilinear_coord_grad(const T* plane, int height, int width, const BilinearTap<T>& t, T& dy,
                                T& dx) {
  const T v00 = pixel_or_zero(plane, height, width, t.y0, t.x0);
  const T v01 = pixel_or_zero(plane, height, width, t.y0, t.x0 + 1);
  const T v10 = pixel_or_zero(plane, height, width, t.y0 + 1, t.x0);
  const T v11 = pixel_or_zero(plane, height, width, t.y0 + 1, t.x0 + 1);
  dx = (T(1) - t.wy) * (v01 - v00) + t.wy * (v11 - v10);
  dy = (T(1) - t.wx) * (v10 - v00) + t.wx * (v11 - v01);
}

}  // namespace flowforge::detail
