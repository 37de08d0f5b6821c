#pragma once

#include "flowforge/autodiff.hpp"
#include "flowforge/ops.hpp"
#include "flowforge/tensor.hpp"

namespace flowforge {

/// Backward warp: out(b,c,y,x) = f sampled bilinearly at (y + v, x + u)
/// where flow channel 0 is u (horizontal) and channel 1 is v (vertical),
/// both in pixels of f. Samples outside the frame read zero.
template <typename T>
Var<T> warp(const Var<T>& features, const Var<T>& flow);

/// Local correlation over a (2d+1)^2 window. Channel k = (dy+d)*(2d+1) +
/// (dx+d) holds mean_c f1(c,y,x) * f2(c,y+dy,x+dx); out-of-frame f2 reads
/// zero. No activation is applied here.
template <typename T>
Var<T> correlate(const Var<T>& f1, const Var<T>& f2, int max_disp);

/// Flow-displaced convolution. Every tap of the kernel centred at (y, x)
/// is shifted by that centre pixel's flow and sampled bilinearly from the
/// unwarped input, then weighted:
///
///   out(b,o,y,x) = bias(o) + sum_{c,ky,kx} w(o,c,ky,kx) *
///                  f(c, y + ky - pad + v(y,x), x + kx - pad + u(y,x))
///
/// Kernels must be square and odd with stride 1 and pad = k/2.
template <typename T>
Var<T> deform_conv(const Var<T>& features, const Var<T>& flow, const Var<T>& weight, const Var<T>& bias);

/// warped * theta + mu, with the single-channel theta broadcast over channels.
template <typename T>
Var<T> mask_tradeoff(const Var<T>& warped, const Var<T>& theta, const Var<T>& mu);

/// warped * theta with channel broadcast (mask without trade-off term).
template <typename T>
Var<T> apply_mask(const Var<T>& warped, const Var<T>& theta);

}  // namespace flowforge
