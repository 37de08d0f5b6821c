#include "flowforge/ops.hpp"

#include <cmath>
#include <string>

#include "kernels.hpp"

namespace flowforge {

using detail::ConstMatMap;
using detail::MatMap;

Shape conv2d_output_shape(const Shape& x, const Shape& w, const ConvSpec& s) {
  if (w.c != x.c)
    throw ShapeError("conv2d: input has " + std::to_string(x.c) + " channels, weight expects " +
                     std::to_string(w.c) + " (weight " + w.str() + ")");
  if (s.stride < 1 || s.dilation < 1 || s.padding < 0) throw ShapeError("conv2d: invalid stride/dilation/padding");
  const int oh_num = x.h + 2 * s.padding - s.dilation * (w.h - 1) - 1;
  const int ow_num = x.w + 2 * s.padding - s.dilation * (w.w - 1) - 1;
  if (oh_num < 0 || ow_num < 0)
    throw ShapeError("conv2d: kernel " + w.str() + " does not fit input " + x.str());
  return Shape{x.n, w.n, oh_num / s.stride + 1, ow_num / s.stride + 1};
}

Shape deconv2d_output_shape(const Shape& x, const Shape& w, const ConvSpec& s) {
  if (s.stride != 2 || s.padding != 1 || s.dilation != 1 || w.h != 4 || w.w != 4)
    throw ShapeError("deconv2d: only stride 2, kernel 4x4, padding 1 (exact 2x upsampling) is supported");
  if (w.c != x.c)
    throw ShapeError("deconv2d: input has " + std::to_string(x.c) + " channels, weight expects " +
                     std::to_string(w.c));
  return Shape{x.n, w.n, 2 * x.h, 2 * x.w};
}

namespace {

template <typename T>
void check_bias(const Var<T>& bias, int out_ch, const char* op) {
  if (!bias.valid()) return;
  if (bias.value().size() != static_cast<std::size_t>(out_ch))
    throw ShapeError(std::string(op) + ": bias has " + std::to_string(bias.value().size()) +
                     " elements, expected " + std::to_string(out_ch));
}

template <typename T>
void add_bias(Tensor<T>& out, const Var<T>& bias) {
  if (!bias.valid()) return;
  const Shape& s = out.shape();
  const T* b = bias.value().ptr();
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      T* p = out.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) p[i] += b[c];
    }
}

template <typename T>
void accumulate_bias_grad(const Tensor<T>& g, Tensor<T>& gb) {
  const Shape& s = g.shape();
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const T* p = g.plane(n, c);
      T acc = 0;
      for (std::size_t i = 0; i < s.plane(); ++i) acc += p[i];
      gb[c] += acc;
    }
}

template <typename T>
std::vector<Var<T>> with_bias(std::vector<Var<T>> v, const Var<T>& bias) {
  if (bias.valid()) v.push_back(bias);
  return v;
}

template <typename T, typename F, typename D>
Var<T> unary(const Var<T>& x, F fwd, D deriv) {
  const Tensor<T>& xv = x.value();
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  Tape<T>* tape = x.tape();
  return tape->record(std::move(out), {x}, [x, deriv](const Tensor<T>& g, std::span<Tensor<T>* const> gi) {
    const Tensor<T>& xv = x.value();
    Tensor<T>& gx = *gi[0];
    for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += g[i] * deriv(xv[i]);
  });
}

}  // namespace

namespace {

template <typename T>
Var<T> conv2d_im2col(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, const ConvSpec& spec, const Shape& os) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();

  // All images share one (kdim, N*npix) column matrix so each direction is
  // a single GEMM.
  const int kdim = ws.c * ws.h * ws.w;
  const std::size_t npix = os.plane();
  const std::size_t ld = npix * xs.n;
  auto cols = std::make_shared<std::vector<T>>(static_cast<std::size_t>(kdim) * ld);
  for (int n = 0; n < xs.n; ++n)
    detail::im2col(x.value().plane(n, 0), xs.c, xs.h, xs.w, ws.h, ws.w, spec, os.h, os.w, cols->data() + n * npix,
                   ld);
  detail::RowMat<T> prod = ConstMatMap<T>(weight.value().ptr(), ws.n, kdim) * ConstMatMap<T>(cols->data(), kdim, ld);
  Tensor<T> out(os);
  for (int n = 0; n < xs.n; ++n)
    MatMap<T>(out.plane(n, 0), os.c, npix) = prod.middleCols(n * npix, npix);
  add_bias(out, bias);
  if (!weight.requires_grad()) cols.reset();

  return x.tape()->record(
      std::move(out), with_bias<T>({x, weight}, bias),
      [x, weight, bias, spec, cols](const Tensor<T>& g, std::span<Tensor<T>* const> gi) {
        const Shape xs = x.shape();
        const Shape ws = weight.shape();
        const Shape os = g.shape();
        const int kdim = ws.c * ws.h * ws.w;
        const std::size_t npix = os.plane();
        const std::size_t ld = npix * xs.n;
        detail::RowMat<T> gmat(os.c, ld);
        for (int n = 0; n < xs.n; ++n)
          gmat.middleCols(n * npix, npix) = ConstMatMap<T>(g.plane(n, 0), os.c, npix);
        if (gi[1]) MatMap<T>(gi[1]->ptr(), ws.n, kdim).noalias() += gmat * ConstMatMap<T>(cols->data(), kdim, ld).transpose();
        if (gi[0]) {
          detail::RowMat<T> gcols = ConstMatMap<T>(weight.value().ptr(), ws.n, kdim).transpose() * gmat;
          for (int n = 0; n < xs.n; ++n)
            detail::col2im(gcols.data() + n * npix, xs.c, xs.h, xs.w, ws.h, ws.w, spec, os.h, os.w,
                           gi[0]->plane(n, 0), ld);
        }
        if (bias.valid() && gi[2]) accumulate_bias_grad(g, *gi[2]);
      });
}

// Stride-1 convolution as one GEMM per kernel tap. The input is copied
// once into a zero-padded (C, N*Hp*Wp) matrix; output column j = n*Hp*Wp +
// y*Wp + x reads input column j + ky*d*Wp + kx*d, so every tap is a plain
// column offset. Columns with x >= out_w or y >= out_h are discarded.
struct ShiftedGeometry {
  int pad, dil, hp, wp, ho, wo, kh, kw;
  std::size_t plane, cols, tail;

  std::size_t offset(int ky, int kx) const {
    return static_cast<std::size_t>(ky) * dil * wp + static_cast<std::size_t>(kx) * dil;
  }
};

ShiftedGeometry shifted_geometry(const Shape& xs, const Shape& ws, const Shape& os, const ConvSpec& spec) {
  ShiftedGeometry g{spec.padding, spec.dilation, xs.h + 2 * spec.padding, xs.w + 2 * spec.padding, os.h, os.w,
                    ws.h, ws.w, 0, 0, 0};
  g.plane = static_cast<std::size_t>(g.hp) * g.wp;
  g.cols = g.plane * xs.n;
  g.tail = g.offset(ws.h - 1, ws.w - 1);
  return g;
}

template <typename T>
Var<T> conv2d_shifted(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, const ConvSpec& spec,
                      const Shape& os) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  const ShiftedGeometry geo = shifted_geometry(xs, ws, os, spec);

  auto xpad = std::make_shared<detail::RowMat<T>>(detail::RowMat<T>::Zero(xs.c, geo.cols + geo.tail));
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c) {
      const T* src = x.value().plane(n, c);
      T* dst = xpad->row(c).data() + n * geo.plane + static_cast<std::size_t>(geo.pad) * geo.wp + geo.pad;
      for (int y = 0; y < xs.h; ++y) std::copy(src + y * xs.w, src + (y + 1) * xs.w, dst + y * geo.wp);
    }

  // taps[t] is the (out, in) weight slice for tap t = ky*kw + kx.
  auto taps = std::make_shared<std::vector<detail::RowMat<T>>>();
  const T* w = weight.value().ptr();
  for (int ky = 0; ky < ws.h; ++ky)
    for (int kx = 0; kx < ws.w; ++kx) {
      detail::RowMat<T> m(ws.n, ws.c);
      for (int o = 0; o < ws.n; ++o)
        for (int c = 0; c < ws.c; ++c) m(o, c) = w[((o * ws.c + c) * ws.h + ky) * ws.w + kx];
      taps->push_back(std::move(m));
    }

  detail::RowMat<T> prod = detail::RowMat<T>::Zero(ws.n, geo.cols);
  for (int ky = 0; ky < ws.h; ++ky)
    for (int kx = 0; kx < ws.w; ++kx)
      prod.noalias() += (*taps)[ky * ws.w + kx] * xpad->middleCols(geo.offset(ky, kx), geo.cols);

  Tensor<T> out(os);
  for (int n = 0; n < xs.n; ++n)
    for (int o = 0; o < os.c; ++o) {
      const T* src = prod.row(o).data() + n * geo.plane;
      T* dst = out.plane(n, o);
      for (int y = 0; y < os.h; ++y) std::copy(src + y * geo.wp, src + y * geo.wp + os.w, dst + y * os.w);
    }
  add_bias(out, bias);
  if (!weight.requires_grad()) xpad.reset();

  return x.tape()->record(
      std::move(out), with_bias<T>({x, weight}, bias),
      [x, weight, bias, geo, xpad, taps](const Tensor<T>& g, std::span<Tensor<T>* const> gi) {
        const Shape xs = x.shape();
        const Shape ws = weight.shape();
        const Shape os = g.shape();
        detail::RowMat<T> gp = detail::RowMat<T>::Zero(ws.n, geo.cols);
        for (int n = 0; n < xs.n; ++n)
          for (int o = 0; o < os.c; ++o) {
            const T* src = g.plane(n, o);
            T* dst = gp.row(o).data() + n * geo.plane;
            for (int y = 0; y < os.h; ++y) std::copy(src + y * os.w, src + (y + 1) * os.w, dst + y * geo.wp);
          }
        if (gi[1]) {
          T* gw = gi[1]->ptr();
          for (int ky = 0; ky < ws.h; ++ky)
            for (int kx = 0; kx < ws.w; ++kx) {
              const detail::RowMat<T> gt = gp * xpad->middleCols(geo.offset(ky, kx), geo.cols).transpose();
              for (int o = 0; o < ws.n; ++o)
                for (int c = 0; c < ws.c; ++c) gw[((o * ws.c + c) * ws.h + ky) * ws.w + kx] += gt(o, c);
            }
        }
        if (gi[0]) {
          detail::RowMat<T> gx = detail::RowMat<T>::Zero(xs.c, geo.cols + geo.tail);
          for (int ky = 0; ky < ws.h; ++ky)
            for (int kx = 0; kx < ws.w; ++kx)
              gx.middleCols(geo.offset(ky, kx), geo.cols).noalias() += (*taps)[ky * ws.w + kx].transpose() * gp;
          for (int n = 0; n < xs.n; ++n)
            for (int c = 0; c < xs.c; ++c) {
              const T* src = gx.row(c).data() + n * geo.plane + static_cast<std::size_t>(geo.pad) * geo.wp + geo.pad;
              T* dst = gi[0]->plane(n, c);
              for (int y = 0; y < xs.h; ++y)
                for (int xx = 0; xx < xs.w; ++xx) dst[y * xs.w + xx] += src[y * geo.wp + xx];
            }
        }
        if (bias.valid() && gi[2]) accumulate_bias_grad(g, *gi[2]);
      });
}

}  // namespace

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, const ConvSpec& spec) {
  const Shape os = conv2d_output_shape(x.shape(), weight.shape(), spec);
  check_bias(bias, weight.shape().n, "conv2d");
  // Padding overhead of the shifted formulation, relative to useful output.
  const double overhead = static_cast<double>(x.shape().h + 2 * spec.padding) * (x.shape().w + 2 * spec.padding) /
                          (static_cast<double>(os.h) * os.w);
  if (spec.stride == 1 && overhead <= 2.5) return conv2d_shifted(x, weight, bias, spec, os);
  return conv2d_im2col(x, weight, bias, spec, os);
}

namespace {

// Deconv weights (O, I, kh, kw) rearranged to a (O*kh*kw, I) matrix whose
// rows follow the im2col row order over the output image.
template <typename T>
std::vector<T> deconv_weight_matrix(const Tensor<T>& w) {
  const Shape s = w.shape();
  const int kk = s.h * s.w;
  std::vector<T> m(static_cast<std::size_t>(s.n) * kk * s.c);
  for (int o = 0; o < s.n; ++o)
    for (int i = 0; i < s.c; ++i)
      for (int k = 0; k < kk; ++k) m[(static_cast<std::size_t>(o) * kk + k) * s.c + i] = w[(static_cast<std::size_t>(o) * s.c + i) * kk + k];
  return m;
}

}  // namespace

template <typename T>
Var<T> deconv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, const ConvSpec& spec) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  const Shape os = deconv2d_output_shape(xs, ws, spec);
  check_bias(bias, ws.n, "deconv2d");

  const int rows = ws.n * ws.h * ws.w;
  const int npix = xs.h * xs.w;
  const std::vector<T> wm = deconv_weight_matrix(weight.value());
  ConstMatMap<T> wmat(wm.data(), rows, ws.c);
  std::vector<T> cols(static_cast<std::size_t>(rows) * npix);
  Tensor<T> out(os);
  for (int n = 0; n < xs.n; ++n) {
    MatMap<T>(cols.data(), rows, npix).noalias() = wmat * ConstMatMap<T>(x.value().plane(n, 0), xs.c, npix);
    detail::col2im(cols.data(), os.c, os.h, os.w, ws.h, ws.w, spec, xs.h, xs.w, out.plane(n, 0));
  }
  add_bias(out, bias);

  return x.tape()->record(
      std::move(out), with_bias<T>({x, weight}, bias),
      [x, weight, bias, spec](const Tensor<T>& g, std::span<Tensor<T>* const> gi) {
        const Shape xs = x.shape();
        const Shape ws = weight.shape();
        const Shape os = g.shape();
        const int rows = ws.n * ws.h * ws.w;
        const int kk = ws.h * ws.w;
        const int npix = xs.h * xs.w;
        const std::vector<T> wm = deconv_weight_matrix(weight.value());
        ConstMatMap<T> wmat(wm.data(), rows, ws.c);
        std::vector<T> cols(static_cast<std::size_t>(rows) * npix);
        detail::RowMat<T> gw = detail::RowMat<T>::Zero(rows, ws.c);
        for (int n = 0; n < xs.n; ++n) {
          detail::im2col(g.plane(n, 0), os.c, os.h, os.w, ws.h, ws.w, spec, xs.h, xs.w, cols.data());
          ConstMatMap<T> cmat(cols.data(), rows, npix);
          if (gi[0]) MatMap<T>(gi[0]->plane(n, 0), xs.c, npix).noalias() += wmat.transpose() * cmat;
          if (gi[1]) gw.noalias() += cmat * ConstMatMap<T>(x.value().plane(n, 0), xs.c, npix).transpose();
        }
        if (gi[1]) {
          Tensor<T>& gwt = *gi[1];
          for (int o = 0; o < ws.n; ++o)
            for (int i = 0; i < ws.c; ++i)
              for (int k = 0; k < kk; ++k) gwt[(static_cast<std::size_t>(o) * ws.c + i) * kk + k] += gw(o * kk + k, i);
        }
        if (bias.valid() && gi[2]) accumulate_bias_grad(g, *gi[2]);
      });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
  return unary(
      x, [slope](T v) { return v > T(0) ? v : slope * v; }, [slope](T v) { return v > T(0) ? T(1) : slope; });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  auto f = [](T v) {
    // Split by sign so exp never overflows.
    if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
    const T e = std::exp(v);
    return e / (T(1) + e);
  };
  return unary(x, f, [f](T v) {
    const T s = f(v);
    return s * (T(1) - s);
  });
}

template <typename T>
Var<T> scale(const Var<T>& x, T s) {
  return unary(x, [s](T v) { return v * s; }, [s](T) { return s; });
}

template <typename T>
Var<T> add_scalar(const Var<T>& x, T s) {
  return unary(x, [s](T v) { return v + s; }, [](T) { return T(1); });
}

template <typename T>
Var<T> add(const Var<T>& x, const Var<T>& y) {
  require_same_shape(x.shape(), y.shape(), "add");
  const Tensor<T>& a = x.value();
  const Tensor<T>& b = y.value();
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return x.tape()->record(std::move(out), {x, y}, [](const Tensor<T>& g, std::span<Tensor<T>* const> gi) {
    if (gi[0]) *gi[0] += g;
    if (gi[1]) *gi[1] += g;
  });
}

template <typename T>
Var<T> sub(const Var<T>& x, const Var<T>& y) {
  require_same_shape(x.shape(), y.shape(), "sub");
  const Tensor<T>& a = x.value();
  const Tensor<T>& b = y.value();
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return x.tape()->record(std::move(out), {x, y}, [](const Tensor<T>& g, std::span<Tensor<T>* const> gi) {
    if (gi[0]) *gi[0] += g;
    if (gi[1])
      for (std::size_t i = 0; i < g.size(); ++i) (*gi[1])[i] -= g[i];
  });
}

template <typename T>
Var<T> mul(const Var<T>& x, const Var<T>& y) {
  require_same_shape(x.shape(), y.shape(), "mul");
  const Tensor<T>& a = x.value();
  const Tensor<T>& b = y.value();
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return x.tape()->record(std::move(out), {x, y}, [x, y](const Tensor<T>& g, std::span<Tensor<T>* const> gi) {
    const Tensor<T>& a = x.value();
    const Tensor<T>& b = y.value();
    if (gi[0])
      for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * b[i];
    if (gi[1])
      for (std::size_t i = 0; i < g.size(); ++i) (*gi[1])[i] += g[i] * a[i];
  });
}

template <typename T>
Var<T> concat_channels(std::span<const Var<T>> xs) {
  if (xs.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape first = xs[0].shape();
  int channels = 0;
  for (const auto& v : xs) {
    if (!v.shape().same_spatial(first))
      throw ShapeError("concat_channels: " + v.shape().str() + " disagrees with " + first.str() +
                       " in batch or spatial extent");
    channels += v.shape().c;
  }
  const Shape os{first.n, channels, first.h, first.w};
  Tensor<T> out(os);
  const std::size_t plane = os.plane();
  for (int n = 0; n < os.n; ++n) {
    int c0 = 0;
    for (const auto& v : xs) {
      const int c = v.shape().c;
      std::copy_n(v.value().plane(n, 0), c * plane, out.plane(n, c0));
      c0 += c;
    }
  }
  std::vector<Var<T>> inputs(xs.begin(), xs.end());
  return xs[0].tape()->record(std::move(out), inputs, [inputs](const Tensor<T>& g, std::span<Tensor<T>* const> gi) {
    const Shape os = g.shape();
    const std::size_t plane = os.plane();
    for (int n = 0; n < os.n; ++n) {
      int c0 = 0;
      for (std::size_t k = 0; k < inputs.size(); ++k) {
        const int c = inputs[k].shape().c;
        if (gi[k]) {
          const T* src = g.plane(n, c0);
          T* dst = gi[k]->plane(n, 0);
          for (std::size_t i = 0; i < c * plane; ++i) dst[i] += src[i];
        }
        c0 += c;
      }
    }
  });
}

template <typename T>
Var<T> slice_channels(const Var<T>& x, int start, int count) {
  const Shape xs = x.shape();
  if (start < 0 || count < 0 || start + count > xs.c)
    throw ShapeError("slice_channels: [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") out of range for " + xs.str());
  const Shape os{xs.n, count, xs.h, xs.w};
  Tensor<T> out(os);
  for (int n = 0; n < xs.n; ++n) std::copy_n(x.value().plane(n, start), count * os.plane(), out.plane(n, 0));
  return x.tape()->record(std::move(out), {x}, [start](const Tensor<T>& g, std::span<Tensor<T>* const> gi) {
    const Shape os = g.shape();
    for (int n = 0; n < os.n; ++n) {
      const T* src = g.plane(n, 0);
      T* dst = gi[0]->plane(n, start);
      for (std::size_t i = 0; i < os.c * os.plane(); ++i) dst[i] += src[i];
    }
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  T acc = 0;
  for (T v : x.value().data()) acc += v;
  return x.tape()->record(Tensor<T>::scalar(acc), {x}, [](const Tensor<T>& g, std::span<Tensor<T>* const> gi) {
    const T gv = g[0];
    for (T& v : gi[0]->data()) v += gv;
  });
}

namespace {

struct ResizeTap {
  int i0, i1;
  double w1;  // weight of i1
};

std::vector<ResizeTap> resize_taps(int in, int factor) {
  std::vector<ResizeTap> taps(static_cast<std::size_t>(in) * factor);
  for (int o = 0; o < in * factor; ++o) {
    double src = (o + 0.5) / factor - 0.5;
    if (src < 0) src = 0;
    int i0 = static_cast<int>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const int i1 = std::min(i0 + 1, in - 1);
    taps[o] = ResizeTap{i0, i1, src - i0};
  }
  return taps;
}

}  // namespace

template <typename T>
Var<T> upsample_bilinear(const Var<T>& x, int factor) {
  const Shape xs = x.shape();
  if (factor < 1) throw ShapeError("upsample_bilinear: factor must be >= 1");
  if (xs.h < 1 || xs.w < 1) throw ShapeError("upsample_bilinear: empty spatial extent " + xs.str());
  const Shape os{xs.n, xs.c, xs.h * factor, xs.w * factor};
  const auto ty = resize_taps(xs.h, factor);
  const auto tx = resize_taps(xs.w, factor);
  Tensor<T> out(os);
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c) {
      const T* src = x.value().plane(n, c);
      T* dst = out.plane(n, c);
      for (int oy = 0; oy < os.h; ++oy) {
        const T wy = static_cast<T>(ty[oy].w1);
        const T* r0 = src + ty[oy].i0 * xs.w;
        const T* r1 = src + ty[oy].i1 * xs.w;
        for (int ox = 0; ox < os.w; ++ox) {
          const T wx = static_cast<T>(tx[ox].w1);
          const T top = (T(1) - wx) * r0[tx[ox].i0] + wx * r0[tx[ox].i1];
          const T bot = (T(1) - wx) * r1[tx[ox].i0] + wx * r1[tx[ox].i1];
          dst[oy * os.w + ox] = (T(1) - wy) * top + wy * bot;
        }
      }
    }
  return x.tape()->record(std::move(out), {x}, [ty, tx](const Tensor<T>& g, std::span<Tensor<T>* const> gi) {
    const Shape os = g.shape();
    Tensor<T>& gx = *gi[0];
    const int in_w = gx.shape().w;
    for (int n = 0; n < os.n; ++n)
      for (int c = 0; c < os.c; ++c) {
        const T* src = g.plane(n, c);
        T* dst = gx.plane(n, c);
        for (int oy = 0; oy < os.h; ++oy) {
          const T wy = static_cast<T>(ty[oy].w1);
          T* r0 = dst + ty[oy].i0 * in_w;
          T* r1 = dst + ty[oy].i1 * in_w;
          for (int ox = 0; ox < os.w; ++ox) {
            const T wx = static_cast<T>(tx[ox].w1);
            const T v = src[oy * os.w + ox];
            r0[tx[ox].i0] += (T(1) - wy) * (T(1) - wx) * v;
            r0[tx[ox].i1] += (T(1) - wy) * wx * v;
            r1[tx[ox].i0] += wy * (T(1) - wx) * v;
            r1[tx[ox].i1] += wy * wx * v;
          }
        }
      }
  });
}

#define FLOWFORGE_INSTANTIATE_OPS(T)                                                         \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, const ConvSpec&);     \
  template Var<T> deconv2d(const Var<T>&, const Var<T>&, const Var<T>&, const ConvSpec&);   \
  template Var<T> leaky_relu(const Var<T>&, T);                                              \
  template Var<T> sigmoid(const Var<T>&);                                                    \
  template Var<T> add(const Var<T>&, const Var<T>&);                                         \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                         \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                         \
  template Var<T> scale(const Var<T>&, T);                                                   \
  template Var<T> add_scalar(const Var<T>&, T);                                              \
  template Var<T> concat_channels(std::span<const Var<T>>);                                  \
  template Var<T> slice_channels(const Var<T>&, int, int);                                   \
  template Var<T> sum(const Var<T>&);                                                        \
  template Var<T> upsample_bilinear(const Var<T>&, int);

FLOWFORGE_INSTANTIATE_OPS(float)
FLOWFORGE_INSTANTIATE_OPS(double)

}  // namespace flowforge
