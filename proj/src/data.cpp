#include "flowforge/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

namespace flowforge {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

double unit_hash(std::uint64_t h) { return static_cast<double>(h >> 11) * 0x1.0p-53; }

struct Rigid {
  double cx, cy, dx, dy, c, s;  // rotation (c, s) about (cx, cy), then translation

  std::array<double, 2> forward(double x, double y) const {
    const double u = x - cx, v = y - cy;
    return {cx + dx + c * u - s * v, cy + dy + s * u + c * v};
  }
  // Frame-2 position -> layer-local coordinates.
  std::array<double, 2> local2(double x, double y) const {
    const double u = x - cx - dx, v = y - cy - dy;
    return {c * u + s * v, -s * u + c * v};
  }
};

Rigid rigid(const Layer& l) {
  return {l.cx, l.cy, l.dx, l.dy, std::cos(l.rotation_deg * kDegToRad), std::sin(l.rotation_deg * kDegToRad)};
}

// Index of the top layer covering frame-2 position (x, y), or -1 for background.
int top_layer_frame2(const std::vector<Layer>& layers, const std::vector<Rigid>& motions, double x, double y) {
  for (int k = static_cast<int>(layers.size()) - 1; k >= 0; --k) {
    const auto [u, v] = motions[k].local2(x, y);
    if (layers[k].contains_local(u, v)) return k;
  }
  return -1;
}

int top_layer_frame1(const std::vector<Layer>& layers, double x, double y) {
  for (int k = static_cast<int>(layers.size()) - 1; k >= 0; --k)
    if (layers[k].contains_local(x - layers[k].cx, y - layers[k].cy)) return k;
  return -1;
}

// Bilinear sample of plane `p` (h x w) at (x, y); zero outside the frame.
float sample(const float* p, int h, int w, double x, double y) {
  const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
  const double fx = x - x0, fy = y - y0;
  double acc = 0;
  for (int j = 0; j < 2; ++j)
    for (int i = 0; i < 2; ++i) {
      const int xi = x0 + i, yj = y0 + j;
      const double wgt = (i ? fx : 1 - fx) * (j ? fy : 1 - fy);
      if (wgt == 0 || xi < 0 || yj < 0 || xi >= w || yj >= h) continue;
      acc += wgt * p[yj * w + xi];
    }
  return static_cast<float>(acc);
}

}  // namespace

std::array<float, 3> Texture::color(double u, double v) const {
  const auto i = static_cast<std::int64_t>(std::floor(u / cell));
  const auto j = static_cast<std::int64_t>(std::floor(v / cell));
  const std::uint64_t h = derive_seed(derive_seed(seed, static_cast<std::uint64_t>(i)), static_cast<std::uint64_t>(j));
  std::array<float, 3> rgb;
  const double ramp_v = ramp[0] * u + ramp[1] * v;
  for (int c = 0; c < 3; ++c) {
    const double base = 0.1 + 0.8 * unit_hash(derive_seed(h, c));
    rgb[c] = static_cast<float>(std::clamp(base + ramp_v, 0.0, 1.0));
  }
  return rgb;
}

bool Layer::contains_local(double u, double v) const {
  if (kind == ShapeKind::rectangle) return std::abs(u) < half_w && std::abs(v) < half_h;
  const double a = u / half_w, b = v / half_h;
  return a * a + b * b <= 1.0;
}

void SceneConfig::validate() const {
  std::ostringstream err;
  if (height <= 0 || width <= 0) err << "image size must be positive; ";
  if (!(max_disp >= 0) || max_disp >= std::min(height, width) / 4.0)
    err << "max_disp " << max_disp << " must be in [0, min(H, W)/4 = " << std::min(height, width) / 4.0 << "); ";
  if (min_shapes < 0 || max_shapes < min_shapes) err << "shape count range is empty; ";
  if (!(min_half_size > 0) || max_half_size < min_half_size) err << "shape size range is empty; ";
  if (min_cell < 1 || max_cell < min_cell) err << "texture cell range is empty; ";
  if (max_rotation_deg < 0) err << "max_rotation_deg must be non-negative; ";
  if (!err.str().empty()) throw DataError("scene config: " + err.str());
}

SyntheticSample render_scene(const Scene& scene) {
  const int h = scene.height, w = scene.width;
  SyntheticSample s{Tensor<float>(Shape{1, 3, h, w}), Tensor<float>(Shape{1, 3, h, w}),
                    Tensor<float>(Shape{1, 2, h, w}), Tensor<float>(Shape{1, 1, h, w}),
                    Tensor<float>(Shape{1, 1, h, w})};
  std::vector<Rigid> motions;
  for (const auto& l : scene.layers) motions.push_back(rigid(l));

  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int k = top_layer_frame1(scene.layers, x, y);
      std::array<float, 3> rgb;
      double tx, ty;
      if (k < 0) {
        rgb = scene.background.color(x, y);
        tx = x + scene.bg_dx;
        ty = y + scene.bg_dy;
      } else {
        const Layer& l = scene.layers[k];
        rgb = l.texture.color(x - l.cx, y - l.cy);
        const auto t = motions[k].forward(x, y);
        tx = t[0];
        ty = t[1];
      }
      for (int c = 0; c < 3; ++c) s.image1(0, c, y, x) = rgb[c];
      s.flow(0, 0, y, x) = static_cast<float>(tx - x);
      s.flow(0, 1, y, x) = static_cast<float>(ty - y);
      const bool out_of_frame = tx < 0 || ty < 0 || tx > w - 1 || ty > h - 1;
      const bool covered = !out_of_frame && top_layer_frame2(scene.layers, motions, tx, ty) != k;
      s.occlusion(0, 0, y, x) = (out_of_frame || covered) ? 1.0f : 0.0f;
      s.valid(0, 0, y, x) = out_of_frame ? 0.0f : 1.0f;

      const int k2 = top_layer_frame2(scene.layers, motions, x, y);
      if (k2 < 0) {
        rgb = scene.background.color(x - scene.bg_dx, y - scene.bg_dy);
      } else {
        const auto [u, v] = motions[k2].local2(x, y);
        rgb = scene.layers[k2].texture.color(u, v);
      }
      for (int c = 0; c < 3; ++c) s.image2(0, c, y, x) = rgb[c];
    }
  return s;
}

Scene random_scene(std::uint64_t seed, const SceneConfig& cfg) {
  cfg.validate();
  Rng rng(seed);
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  auto motion = [&] {
    if (cfg.integer_motion) {
      const int m = static_cast<int>(std::floor(cfg.max_disp));
      return static_cast<double>(std::uniform_int_distribution<int>(-m, m)(rng));
    }
    return uni(-cfg.max_disp, cfg.max_disp);
  };
  auto texture = [&] {
    Texture t;
    t.seed = rng();
    t.cell = std::uniform_int_distribution<int>(cfg.min_cell, cfg.max_cell)(rng);
    t.ramp = {static_cast<float>(uni(-0.004, 0.004)), static_cast<float>(uni(-0.004, 0.004))};
    return t;
  };

  Scene scene;
  scene.height = cfg.height;
  scene.width = cfg.width;
  scene.background = texture();
  if (cfg.move_background) {
    scene.bg_dx = motion();
    scene.bg_dy = motion();
  }
  const int n = std::uniform_int_distribution<int>(cfg.min_shapes, cfg.max_shapes)(rng);
  for (int i = 0; i < n; ++i) {
    Layer l;
    l.kind = std::bernoulli_distribution(0.5)(rng) ? ShapeKind::rectangle : ShapeKind::ellipse;
    l.half_w = std::floor(uni(cfg.min_half_size, cfg.max_half_size)) + 0.5;
    l.half_h = std::floor(uni(cfg.min_half_size, cfg.max_half_size)) + 0.5;
    l.cx = std::uniform_int_distribution<int>(0, cfg.width - 1)(rng);
    l.cy = std::uniform_int_distribution<int>(0, cfg.height - 1)(rng);
    l.dx = motion();
    l.dy = motion();
    if (cfg.max_rotation_deg > 0) l.rotation_deg = uni(-cfg.max_rotation_deg, cfg.max_rotation_deg);
    l.texture = texture();
    scene.layers.push_back(l);
  }
  return scene;
}

SyntheticSample gen_sample(std::uint64_t seed, const SceneConfig& config) {
  return render_scene(random_scene(seed, config));
}

SyntheticSample stack_samples(const std::vector<SyntheticSample>& samples) {
  if (samples.empty()) throw DataError("stack_samples: no samples");
  auto stack = [&](auto member) {
    const Shape s0 = (samples[0].*member).shape();
    Tensor<float> out(Shape{static_cast<int>(samples.size()), s0.c, s0.h, s0.w});
    std::size_t off = 0;
    for (const auto& smp : samples) {
      const Tensor<float>& t = smp.*member;
      if (t.shape() != s0) throw ShapeError("stack_samples: mismatched sample shapes " + t.shape().str());
      std::copy(t.data().begin(), t.data().end(), out.data().begin() + off);
      off += t.size();
    }
    return out;
  };
  return {stack(&SyntheticSample::image1), stack(&SyntheticSample::image2), stack(&SyntheticSample::flow),
          stack(&SyntheticSample::occlusion), stack(&SyntheticSample::valid)};
}

double consistency_error(const SyntheticSample& s) {
  const Shape sh = s.image1.shape();
  double sum = 0;
  std::size_t n = 0;
  for (int b = 0; b < sh.n; ++b)
    for (int y = 0; y < sh.h; ++y)
      for (int x = 0; x < sh.w; ++x) {
        if (s.valid(b, 0, y, x) < 0.5f || s.occlusion(b, 0, y, x) > 0.5f) continue;
        const double tx = x + s.flow(b, 0, y, x), ty = y + s.flow(b, 1, y, x);
        for (int c = 0; c < 3; ++c)
          sum += std::abs(s.image1(b, c, y, x) - sample(s.image2.plane(b, c), sh.h, sh.w, tx, ty));
        n += 3;
      }
  return n ? sum / static_cast<double>(n) : 0.0;
}

// Augmentation -----------------------------------------------------------------

AugmentParams AugmentParams::profile(AugmentProfile p) {
  AugmentParams a;
  auto& g = a.geometric;
  auto& c = a.chromatic;
  switch (p) {
    case AugmentProfile::chairs:
    case AugmentProfile::sintel:
      g = {0.5, 0.9, 0.1, 0.025, 17.0, 4.25, 0.9, p == AugmentProfile::chairs ? 2.0 : 1.5, 0.96};
      c = {-0.4, 0.8, 0.1, 0.8, 1.4, 0.5, 0.5, p == AugmentProfile::chairs ? 0.04 : 0.0};
      break;
    case AugmentProfile::kitti:
      g = {0.5, 0.95, 0.05, 0.0125, 5.0, 1.25, 0.95, 1.25, 0.98};
      c = {-0.2, 0.4, 0.05, 0.9, 1.2, 0.25, 0.1, 0.02};
      break;
  }
  return a;
}

AugmentParams AugmentParams::identity(int height, int width) {
  AugmentParams a;
  a.crop_h = height;
  a.crop_w = width;
  return a;
}

AugmentProfile parse_profile(const std::string& name) {
  if (name == "chairs") return AugmentProfile::chairs;
  if (name == "sintel") return AugmentProfile::sintel;
  if (name == "kitti") return AugmentProfile::kitti;
  throw DataError("unknown augmentation profile '" + name + "' (expected chairs, sintel or kitti)");
}

namespace {

// Maps output pixels of one frame to source pixels:
// src = ic + t + R(theta) * diag(1/sx, 1/sy) * flip(p - oc).
struct FrameTransform {
  double icx, icy, ocx, ocy, tx, ty, c, s, sx, sy;
  bool flip;

  std::array<double, 2> to_source(double x, double y) const {
    double u = x - ocx, v = y - ocy;
    if (flip) u = -u;
    u /= sx;
    v /= sy;
    return {icx + tx + c * u - s * v, icy + ty + s * u + c * v};
  }
  std::array<double, 2> to_output(double x, double y) const {
    const double a = x - icx - tx, b = y - icy - ty;
    double u = (c * a + s * b) * sx, v = (-s * a + c * b) * sy;
    if (flip) u = -u;
    return {ocx + u, ocy + v};
  }
};

FrameTransform frame_transform(const AugmentDraw& d, int frame, int h, int w, int ch, int cw) {
  const double zoom = frame == 1 ? d.zoom : d.zoom * d.rel_zoom;
  const double rot = (frame == 1 ? d.rotate_deg : d.rotate_deg + d.rel_rotate_deg) * kDegToRad;
  const double tx = frame == 1 ? d.tx : d.tx + d.rel_tx;
  const double ty = frame == 1 ? d.ty : d.ty + d.rel_ty;
  const double sq = std::sqrt(d.squeeze);
  return {(w - 1) / 2.0, (h - 1) / 2.0, (cw - 1) / 2.0, (ch - 1) / 2.0, tx, ty, std::cos(rot), std::sin(rot),
          zoom * sq, zoom / sq, d.flip};
}

// Half extents of the source footprint of the crop at zoom 1 for `frame`.
std::array<double, 2> footprint(const AugmentDraw& d, int frame, int ch, int cw) {
  const double rel = frame == 1 ? 1.0 : d.rel_zoom;
  const double rot = (frame == 1 ? d.rotate_deg : d.rotate_deg + d.rel_rotate_deg) * kDegToRad;
  const double sq = std::sqrt(d.squeeze);
  const double hx = (cw - 1) / 2.0 / (rel * sq), hy = (ch - 1) / 2.0 / (rel / sq);
  const double c = std::abs(std::cos(rot)), s = std::abs(std::sin(rot));
  return {c * hx + s * hy, s * hx + c * hy};
}

double slack(double half_image, double extent) { return std::max(0.0, half_image - extent); }

}  // namespace

double zoom_floor(const AugmentDraw& draw, int height, int width, int crop_h, int crop_w) {
  double z = 0;
  for (int frame : {1, 2}) {
    const auto e = footprint(draw, frame, crop_h, crop_w);
    if (width > 1) z = std::max(z, e[0] / ((width - 1) / 2.0));
    if (height > 1) z = std::max(z, e[1] / ((height - 1) / 2.0));
  }
  return z;
}

AugmentDraw draw_augment(const AugmentParams& p, int height, int width, Rng& rng) {
  const auto& g = p.geometric;
  const auto& c = p.chromatic;
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  auto sym = [&](double r) { return uni(-r, r); };
  auto recip = [&](double f) { return uni(std::min(f, 1 / f), std::max(f, 1 / f)); };

  AugmentDraw d;
  d.flip = std::bernoulli_distribution(g.flip)(rng);
  d.squeeze = recip(g.squeeze);
  d.tx = sym(g.translate) * width;
  d.ty = sym(g.translate) * height;
  d.rel_tx = sym(g.rel_translate) * width;
  d.rel_ty = sym(g.rel_translate) * height;
  d.rotate_deg = sym(g.rotate_deg);
  d.rel_rotate_deg = sym(g.rel_rotate_deg);
  d.zoom = uni(g.zoom_lo, g.zoom_hi);
  d.rel_zoom = recip(g.rel_zoom);
  d.contrast = uni(c.contrast_lo, c.contrast_hi);
  d.brightness = sym(c.brightness);
  for (auto& ch : d.channel) ch = uni(c.channel_lo, c.channel_hi);
  d.saturation = sym(c.saturation);
  d.hue = sym(c.hue);
  d.noise_sigma = uni(0.0, c.noise);
  d.noise_seed = rng();

  const double floor = zoom_floor(d, height, width, p.crop_h, p.crop_w);
  if (floor > g.zoom_hi * (1 + 1e-12)) {
    std::ostringstream msg;
    msg << "augment: zoom floor " << floor << " exceeds maximum zoom " << g.zoom_hi << " for a " << p.crop_w << "x"
        << p.crop_h << " crop of a " << width << "x" << height << " image";
    throw DataError(msg.str());
  }
  d.zoom = std::max(d.zoom, floor);

  // Keep the crop inside both frames.
  const auto e1 = footprint(d, 1, p.crop_h, p.crop_w);
  const auto e2 = footprint(d, 2, p.crop_h, p.crop_w);
  const double sx1 = slack((width - 1) / 2.0, e1[0] / d.zoom), sy1 = slack((height - 1) / 2.0, e1[1] / d.zoom);
  const double sx2 = slack((width - 1) / 2.0, e2[0] / d.zoom), sy2 = slack((height - 1) / 2.0, e2[1] / d.zoom);
  d.tx = std::clamp(d.tx, -std::min(sx1, sx2), std::min(sx1, sx2));
  d.ty = std::clamp(d.ty, -std::min(sy1, sy2), std::min(sy1, sy2));
  d.rel_tx = std::clamp(d.tx + d.rel_tx, -sx2, sx2) - d.tx;
  d.rel_ty = std::clamp(d.ty + d.rel_ty, -sy2, sy2) - d.ty;
  return d;
}

namespace {

void chromatic(Tensor<float>& img, const AugmentDraw& d, std::uint64_t noise_stream) {
  const Shape s = img.shape();
  const std::size_t hw = s.plane();
  float* r = img.plane(0, 0);
  float* g = img.plane(0, 1);
  float* b = img.plane(0, 2);
  if (d.contrast != 0)
    for (auto& v : img.data()) v = static_cast<float>(0.5 + (v - 0.5) * (1 + d.contrast));
  if (d.brightness != 0)
    for (auto& v : img.data()) v = static_cast<float>(v + d.brightness);
  for (int c = 0; c < 3; ++c)
    if (d.channel[c] != 1) {
      float* p = img.plane(0, c);
      for (std::size_t i = 0; i < hw; ++i) p[i] = static_cast<float>(p[i] * d.channel[c]);
    }
  if (d.saturation != 0 || d.hue != 0) {
    // Operate in YIQ: saturation scales the chroma plane, hue rotates it.
    const double k = 1 + d.saturation;
    const double ca = std::cos(d.hue * std::numbers::pi), sa = std::sin(d.hue * std::numbers::pi);
    for (std::size_t i = 0; i < hw; ++i) {
      const double y = 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i];
      const double ii = 0.596 * r[i] - 0.274 * g[i] - 0.322 * b[i];
      const double q = 0.211 * r[i] - 0.523 * g[i] + 0.312 * b[i];
      const double i2 = k * (ca * ii - sa * q), q2 = k * (sa * ii + ca * q);
      r[i] = static_cast<float>(y + 0.956 * i2 + 0.621 * q2);
      g[i] = static_cast<float>(y - 0.272 * i2 - 0.647 * q2);
      b[i] = static_cast<float>(y - 1.106 * i2 + 1.703 * q2);
    }
  }
  if (d.noise_sigma > 0) {
    Rng rng(derive_seed(d.noise_seed, noise_stream));
    std::normal_distribution<double> n(0.0, d.noise_sigma);
    for (auto& v : img.data()) v = static_cast<float>(v + n(rng));
  }
  for (auto& v : img.data()) v = std::clamp(v, 0.0f, 1.0f);
}

}  // namespace

SyntheticSample apply_augment(const SyntheticSample& in, const AugmentDraw& d, int ch, int cw) {
  const Shape s = in.image1.shape();
  if (s.n != 1) throw ShapeError("augment: expects a single sample, got " + s.str());
  const int h = s.h, w = s.w;
  const FrameTransform a1 = frame_transform(d, 1, h, w, ch, cw);
  const FrameTransform a2 = frame_transform(d, 2, h, w, ch, cw);

  SyntheticSample out{Tensor<float>(Shape{1, 3, ch, cw}), Tensor<float>(Shape{1, 3, ch, cw}),
                      Tensor<float>(Shape{1, 2, ch, cw}), Tensor<float>(Shape{1, 1, ch, cw}),
                      Tensor<float>(Shape{1, 1, ch, cw})};
  const float* fu = in.flow.plane(0, 0);
  const float* fv = in.flow.plane(0, 1);
  const float* vm = in.valid.plane(0, 0);
  for (int y = 0; y < ch; ++y)
    for (int x = 0; x < cw; ++x) {
      const auto p1 = a1.to_source(x, y);
      const auto p2 = a2.to_source(x, y);
      for (int c = 0; c < 3; ++c) {
        out.image1(0, c, y, x) = sample(in.image1.plane(0, c), h, w, p1[0], p1[1]);
        out.image2(0, c, y, x) = sample(in.image2.plane(0, c), h, w, p2[0], p2[1]);
      }
      // Valid-weighted bilinear interpolation of the flow.
      const int x0 = static_cast<int>(std::floor(p1[0])), y0 = static_cast<int>(std::floor(p1[1]));
      const double ax = p1[0] - x0, ay = p1[1] - y0;
      double su = 0, sv = 0, sw = 0;
      for (int j = 0; j < 2; ++j)
        for (int i = 0; i < 2; ++i) {
          const int xi = x0 + i, yj = y0 + j;
          const double wgt = (i ? ax : 1 - ax) * (j ? ay : 1 - ay);
          if (wgt == 0 || xi < 0 || yj < 0 || xi >= w || yj >= h) continue;
          const double m = wgt * vm[yj * w + xi];
          su += m * fu[yj * w + xi];
          sv += m * fv[yj * w + xi];
          sw += m;
        }
      const bool has_flow = sw >= 0.5;
      if (sw == 0) {
        su = sample(fu, h, w, p1[0], p1[1]);
        sv = sample(fv, h, w, p1[0], p1[1]);
        sw = 1;
      }
      const auto q = a2.to_output(p1[0] + su / sw, p1[1] + sv / sw);
      const double u = q[0] - x, v = q[1] - y;
      const double tx = x + u, ty = y + v;
      const bool out_of_frame = tx < 0 || ty < 0 || tx > cw - 1 || ty > ch - 1;
      out.flow(0, 0, y, x) = static_cast<float>(u);
      out.flow(0, 1, y, x) = static_cast<float>(v);
      out.valid(0, 0, y, x) = has_flow && !out_of_frame ? 1.0f : 0.0f;
      const bool occluded = sample(in.occlusion.plane(0, 0), h, w, p1[0], p1[1]) > 0.5f;
      out.occlusion(0, 0, y, x) = occluded || out_of_frame ? 1.0f : 0.0f;
    }
  chromatic(out.image1, d, 1);
  chromatic(out.image2, d, 2);
  return out;
}

SyntheticSample augment(const SyntheticSample& sample, const AugmentParams& params, Rng& rng) {
  const Shape s = sample.image1.shape();
  const AugmentDraw d = draw_augment(params, s.h, s.w, rng);
  return apply_augment(sample, d, params.crop_h, params.crop_w);
}

}  // namespace flowforge
