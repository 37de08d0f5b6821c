#include "flowforge/flow_ops.hpp"

#include <string>
#include <vector>

#include "kernels.hpp"

namespace flowforge {

using detail::BilinearTap;
using detail::ConstMatMap;
using detail::MatMap;

namespace {

void check_flow(const Shape& f, const Shape& flow, const char* op) {
  if (flow.c != 2 || !flow.same_spatial(f))
    throw ShapeError(std::string(op) + ": flow " + flow.str() + " must be (B,2,H,W) matching features " + f.str());
}

}  // namespace

template <typename T>
Var<T> warp(const Var<T>& features, const Var<T>& flow) {
  const Shape fs = features.shape();
  check_flow(fs, flow.shape(), "warp");
  Tensor<T> out(fs);
  const Tensor<T>& fv = features.value();
  const Tensor<T>& uv = flow.value();
  for (int n = 0; n < fs.n; ++n) {
    const T* u = uv.plane(n, 0);
    const T* v = uv.plane(n, 1);
    for (int y = 0; y < fs.h; ++y)
      for (int x = 0; x < fs.w; ++x) {
        const std::size_t p = static_cast<std::size_t>(y) * fs.w + x;
        const BilinearTap<T> tap(T(y) + v[p], T(x) + u[p]);
        for (int c = 0; c < fs.c; ++c) out.plane(n, c)[p] = detail::bilinear_sample(fv.plane(n, c), fs.h, fs.w, tap);
      }
  }
  return features.tape()->record(
      std::move(out), {features, flow}, [features, flow](const Tensor<T>& g, std::span<Tensor<T>* const> gi) {
        const Shape fs = features.shape();
        const Tensor<T>& fv = features.value();
        const Tensor<T>& uv = flow.value();
        for (int n = 0; n < fs.n; ++n) {
          const T* u = uv.plane(n, 0);
          const T* v = uv.plane(n, 1);
          for (int y = 0; y < fs.h; ++y)
            for (int x = 0; x < fs.w; ++x) {
              const std::size_t p = static_cast<std::size_t>(y) * fs.w + x;
              const BilinearTap<T> tap(T(y) + v[p], T(x) + u[p]);
              T gu = 0, gv = 0;
              for (int c = 0; c < fs.c; ++c) {
                const T go = g.plane(n, c)[p];
                if (gi[0]) detail::bilinear_scatter(gi[0]->plane(n, c), fs.h, fs.w, tap, go);
                if (gi[1]) {
                  T dy, dx;
                  detail::bilinear_coord_grad(fv.plane(n, c), fs.h, fs.w, tap, dy, dx);
                  gu += go * dx;
                  gv += go * dy;
                }
              }
              if (gi[1]) {
                gi[1]->plane(n, 0)[p] += gu;
                gi[1]->plane(n, 1)[p] += gv;
              }
            }
        }
      });
}

template <typename T>
Var<T> correlate(const Var<T>& f1, const Var<T>& f2, int max_disp) {
  if (max_disp < 0) throw ShapeError("correlate: max displacement must be non-negative");
  require_same_shape(f1.shape(), f2.shape(), "correlate");
  const Shape fs = f1.shape();
  if (fs.c < 1) throw ShapeError("correlate: features need at least one channel");
  const int side = 2 * max_disp + 1;
  const Shape os{fs.n, side * side, fs.h, fs.w};
  const T inv_c = T(1) / T(fs.c);
  Tensor<T> out(os);

  // Visits every in-frame (y, x, y+dy, x+dx) quadruple for channel plane pairs.
  auto for_each_pair = [fs, max_disp, side](auto&& body) {
    for (int dy = -max_disp; dy <= max_disp; ++dy)
      for (int dx = -max_disp; dx <= max_disp; ++dx) {
        const int k = (dy + max_disp) * side + (dx + max_disp);
        const int y_lo = std::max(0, -dy), y_hi = std::min(fs.h, fs.h - dy);
        const int x_lo = std::max(0, -dx), x_hi = std::min(fs.w, fs.w - dx);
        body(k, dy, dx, y_lo, y_hi, x_lo, x_hi);
      }
  };

  for (int n = 0; n < fs.n; ++n)
    for_each_pair([&](int k, int dy, int dx, int y_lo, int y_hi, int x_lo, int x_hi) {
      T* dst = out.plane(n, k);
      for (int c = 0; c < fs.c; ++c) {
        const T* a = f1.value().plane(n, c);
        const T* b = f2.value().plane(n, c);
        for (int y = y_lo; y < y_hi; ++y) {
          const T* ar = a + y * fs.w;
          const T* br = b + (y + dy) * fs.w + dx;
          T* dr = dst + y * fs.w;
          for (int x = x_lo; x < x_hi; ++x) dr[x] += ar[x] * br[x];
        }
      }
      for (std::size_t i = 0; i < os.plane(); ++i) dst[i] *= inv_c;
    });

  return f1.tape()->record(
      std::move(out), {f1, f2}, [f1, f2, for_each_pair, inv_c](const Tensor<T>& g, std::span<Tensor<T>* const> gi) {
        const Shape fs = f1.shape();
        for (int n = 0; n < fs.n; ++n)
          for_each_pair([&](int k, int dy, int dx, int y_lo, int y_hi, int x_lo, int x_hi) {
            const T* gk = g.plane(n, k);
            for (int c = 0; c < fs.c; ++c) {
              const T* a = f1.value().plane(n, c);
              const T* b = f2.value().plane(n, c);
              T* ga = gi[0] ? gi[0]->plane(n, c) : nullptr;
              T* gb = gi[1] ? gi[1]->plane(n, c) : nullptr;
              for (int y = y_lo; y < y_hi; ++y) {
                const int off_a = y * fs.w;
                const int off_b = (y + dy) * fs.w + dx;
                for (int x = x_lo; x < x_hi; ++x) {
                  const T gv = gk[off_a + x] * inv_c;
                  if (ga) ga[off_a + x] += gv * b[off_b + x];
                  if (gb) gb[off_b + x] += gv * a[off_a + x];
                }
              }
            }
          });
      });
}

namespace {

// Bilinear taps for every (ky, kx, pixel) of one batch item.
template <typename T>
std::vector<BilinearTap<T>> deform_taps(const Tensor<T>& flow, int n, int k, int h, int w) {
  const int pad = k / 2;
  const T* u = flow.plane(n, 0);
  const T* v = flow.plane(n, 1);
  std::vector<BilinearTap<T>> taps;
  taps.reserve(static_cast<std::size_t>(k) * k * h * w);
  for (int ky = 0; ky < k; ++ky)
    for (int kx = 0; kx < k; ++kx)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const std::size_t p = static_cast<std::size_t>(y) * w + x;
          taps.emplace_back(T(y + ky - pad) + v[p], T(x + kx - pad) + u[p]);
        }
  return taps;
}

template <typename T>
void deform_im2col(const Tensor<T>& f, int n, const std::vector<BilinearTap<T>>& taps, int kk, T* cols) {
  const Shape fs = f.shape();
  const std::size_t npix = fs.plane();
  for (int c = 0; c < fs.c; ++c) {
    const T* plane = f.plane(n, c);
    for (int t = 0; t < kk; ++t) {
      T* row = cols + (static_cast<std::size_t>(c) * kk + t) * npix;
      const BilinearTap<T>* tp = taps.data() + t * npix;
      for (std::size_t p = 0; p < npix; ++p) row[p] = detail::bilinear_sample(plane, fs.h, fs.w, tp[p]);
    }
  }
}

}  // namespace

template <typename T>
Var<T> deform_conv(const Var<T>& features, const Var<T>& flow, const Var<T>& weight, const Var<T>& bias) {
  const Shape fs = features.shape();
  const Shape ws = weight.shape();
  check_flow(fs, flow.shape(), "deform_conv");
  if (ws.h != ws.w || ws.h % 2 == 0)
    throw ShapeError("deform_conv: kernel must be square with odd size, got " + ws.str());
  if (ws.c != fs.c)
    throw ShapeError("deform_conv: input has " + std::to_string(fs.c) + " channels, weight expects " +
                     std::to_string(ws.c));
  if (bias.valid() && bias.value().size() != static_cast<std::size_t>(ws.n))
    throw ShapeError("deform_conv: bias size mismatch");

  const int k = ws.h;
  const int kk = k * k;
  const int kdim = fs.c * kk;
  const int npix = fs.h * fs.w;
  const Shape os{fs.n, ws.n, fs.h, fs.w};
  Tensor<T> out(os);
  std::vector<T> cols(static_cast<std::size_t>(kdim) * npix);
  ConstMatMap<T> wmat(weight.value().ptr(), ws.n, kdim);
  for (int n = 0; n < fs.n; ++n) {
    const auto taps = deform_taps(flow.value(), n, k, fs.h, fs.w);
    deform_im2col(features.value(), n, taps, kk, cols.data());
    MatMap<T>(out.plane(n, 0), ws.n, npix).noalias() = wmat * ConstMatMap<T>(cols.data(), kdim, npix);
  }
  if (bias.valid()) {
    const T* b = bias.value().ptr();
    for (int n = 0; n < os.n; ++n)
      for (int o = 0; o < os.c; ++o) {
        T* p = out.plane(n, o);
        for (int i = 0; i < npix; ++i) p[i] += b[o];
      }
  }

  std::vector<Var<T>> inputs{features, flow, weight};
  if (bias.valid()) inputs.push_back(bias);
  return features.tape()->record(
      std::move(out), inputs, [features, flow, weight, bias](const Tensor<T>& g, std::span<Tensor<T>* const> gi) {
        const Shape fs = features.shape();
        const Shape ws = weight.shape();
        const int k = ws.h;
        const int kk = k * k;
        const int kdim = fs.c * kk;
        const int npix = fs.h * fs.w;
        ConstMatMap<T> wmat(weight.value().ptr(), ws.n, kdim);
        std::vector<T> cols(static_cast<std::size_t>(kdim) * npix);
        std::vector<T> gcols(static_cast<std::size_t>(kdim) * npix);
        for (int n = 0; n < fs.n; ++n) {
          const auto taps = deform_taps(flow.value(), n, k, fs.h, fs.w);
          ConstMatMap<T> gmat(g.plane(n, 0), ws.n, npix);
          if (gi[2]) {
            deform_im2col(features.value(), n, taps, kk, cols.data());
            MatMap<T>(gi[2]->ptr(), ws.n, kdim).noalias() += gmat * ConstMatMap<T>(cols.data(), kdim, npix).transpose();
          }
          if (!gi[0] && !gi[1]) continue;
          MatMap<T>(gcols.data(), kdim, npix).noalias() = wmat.transpose() * gmat;
          T* gu = gi[1] ? gi[1]->plane(n, 0) : nullptr;
          T* gv = gi[1] ? gi[1]->plane(n, 1) : nullptr;
          for (int c = 0; c < fs.c; ++c) {
            const T* plane = features.value().plane(n, c);
            T* gplane = gi[0] ? gi[0]->plane(n, c) : nullptr;
            for (int t = 0; t < kk; ++t) {
              const T* grow = gcols.data() + (static_cast<std::size_t>(c) * kk + t) * npix;
              const BilinearTap<T>* tp = taps.data() + static_cast<std::size_t>(t) * npix;
              for (int p = 0; p < npix; ++p) {
                if (gplane) detail::bilinear_scatter(gplane, fs.h, fs.w, tp[p], grow[p]);
                if (gu) {
                  T dy, dx;
                  detail::bilinear_coord_grad(plane, fs.h, fs.w, tp[p], dy, dx);
                  gu[p] += grow[p] * dx;
                  gv[p] += grow[p] * dy;
                }
              }
            }
          }
        }
        if (bias.valid() && gi[3]) {
          Tensor<T>& gb = *gi[3];
          for (int n = 0; n < g.shape().n; ++n)
            for (int o = 0; o < g.shape().c; ++o) {
              const T* p = g.plane(n, o);
              T acc = 0;
              for (int i = 0; i < npix; ++i) acc += p[i];
              gb[o] += acc;
            }
        }
      });
}

namespace {

void check_mask(const Shape& warped, const Shape& theta, const char* op) {
  if (theta.c != 1 || !theta.same_spatial(warped))
    throw ShapeError(std::string(op) + ": mask " + theta.str() + " must be (B,1,H,W) matching " + warped.str());
}

}  // namespace

template <typename T>
Var<T> mask_tradeoff(const Var<T>& warped, const Var<T>& theta, const Var<T>& mu) {
  const Shape ws = warped.shape();
  check_mask(ws, theta.shape(), "mask_tradeoff");
  require_same_shape(ws, mu.shape(), "mask_tradeoff (trade-off features)");
  Tensor<T> out(ws);
  for (int n = 0; n < ws.n; ++n) {
    const T* th = theta.value().plane(n, 0);
    for (int c = 0; c < ws.c; ++c) {
      const T* a = warped.value().plane(n, c);
      const T* m = mu.value().plane(n, c);
      T* o = out.plane(n, c);
      for (std::size_t i = 0; i < ws.plane(); ++i) o[i] = a[i] * th[i] + m[i];
    }
  }
  return warped.tape()->record(
      std::move(out), {warped, theta, mu}, [warped, theta](const Tensor<T>& g, std::span<Tensor<T>* const> gi) {
        const Shape ws = warped.shape();
        for (int n = 0; n < ws.n; ++n) {
          const T* th = theta.value().plane(n, 0);
          T* gth = gi[1] ? gi[1]->plane(n, 0) : nullptr;
          for (int c = 0; c < ws.c; ++c) {
            const T* a = warped.value().plane(n, c);
            const T* gc = g.plane(n, c);
            T* ga = gi[0] ? gi[0]->plane(n, c) : nullptr;
            T* gm = gi[2] ? gi[2]->plane(n, c) : nullptr;
            for (std::size_t i = 0; i < ws.plane(); ++i) {
              if (ga) ga[i] += gc[i] * th[i];
              if (gth) gth[i] += gc[i] * a[i];
              if (gm) gm[i] += gc[i];
            }
          }
        }
      });
}

template <typename T>
Var<T> apply_mask(const Var<T>& warped, const Var<T>& theta) {
  const Shape ws = warped.shape();
  check_mask(ws, theta.shape(), "apply_mask");
  Tensor<T> out(ws);
  for (int n = 0; n < ws.n; ++n) {
    const T* th = theta.value().plane(n, 0);
    for (int c = 0; c < ws.c; ++c) {
      const T* a = warped.value().plane(n, c);
      T* o = out.plane(n, c);
      for (std::size_t i = 0; i < ws.plane(); ++i) o[i] = a[i] * th[i];
    }
  }
  return warped.tape()->record(
      std::move(out), {warped, theta}, [warped, theta](const Tensor<T>& g, std::span<Tensor<T>* const> gi) {
        const Shape ws = warped.shape();
        for (int n = 0; n < ws.n; ++n) {
          const T* th = theta.value().plane(n, 0);
          T* gth = gi[1] ? gi[1]->plane(n, 0) : nullptr;
          for (int c = 0; c < ws.c; ++c) {
            const T* a = warped.value().plane(n, c);
            const T* gc = g.plane(n, c);
            T* ga = gi[0] ? gi[0]->plane(n, c) : nullptr;
            for (std::size_t i = 0; i < ws.plane(); ++i) {
              if (ga) ga[i] += gc[i] * th[i];
              if (gth) gth[i] += gc[i] * a[i];
            }
          }
        }
      });
}

#define FLOWFORGE_INSTANTIATE_FLOW_OPS(T)                                                      \
  template Var<T> warp(const Var<T>&, const Var<T>&);                                          \
  template Var<T> correlate(const Var<T>&, const Var<T>&, int);                                \
  template Var<T> deform_conv(const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&);     \
  template Var<T> mask_tradeoff(const Var<T>&, const Var<T>&, const Var<T>&);                  \
  template Var<T> apply_mask(const Var<T>&, const Var<T>&);

FLOWFORGE_INSTANTIATE_FLOW_OPS(float)
FLOWFORGE_INSTANTIATE_FLOW_OPS(double)

}  // namespace flowforge
