#include "flowforge/loss.hpp"

#include <cmath>
#include <string>

#include "flowforge/ops.hpp"

namespace flowforge {

void LossConfig::validate() const {
  if (weights.size() != levels.size())
    throw std::invalid_argument("loss: " + std::to_string(weights.size()) + " weights for " +
                                std::to_string(levels.size()) + " levels");
  for (double w : weights)
    if (w < 0) throw std::invalid_argument("loss: level weights must be non-negative");
  if (!(q > 0 && q <= 1)) throw std::invalid_argument("loss: robust exponent must lie in (0, 1]");
  if (!(eps > 0)) throw std::invalid_argument("loss: robust epsilon must be positive");
  if (!(flow_scale > 0)) throw std::invalid_argument("loss: flow scale must be positive");
}

namespace {

template <typename T>
void check_flow_triplet(const char* who, const Shape& pred, const Shape& gt, const Shape& valid) {
  if (pred.c != 2 || pred != gt || valid.c != 1 || !valid.same_spatial(gt))
    throw ShapeError(std::string(who) + ": expected flow (B,2,H,W) pairs with a (B,1,H,W) mask, got pred " +
                     pred.str() + ", gt " + gt.str() + ", valid " + valid.str());
}

template <typename T>
std::size_t count_valid(const char* who, const Tensor<T>& valid) {
  std::size_t n = 0;
  for (T v : valid.data()) n += v > T(0.5);
  if (n == 0) throw MetricError(std::string(who) + ": no valid pixels");
  return n;
}

}  // namespace

template <typename T>
std::pair<Tensor<T>, Tensor<T>> downscale_flow(const Tensor<T>& flow, const Tensor<T>& valid, int level) {
  const Shape s = flow.shape();
  check_flow_triplet<T>("downscale_flow", s, s, valid.shape());
  const int k = 1 << level;
  if (s.h % k != 0 || s.w % k != 0)
    throw ShapeError("downscale_flow: " + s.str() + " not divisible by 2^" + std::to_string(level));
  const int h = s.h / k, w = s.w / k;
  Tensor<T> out(Shape{s.n, 2, h, w});
  Tensor<T> vout(Shape{s.n, 1, h, w});
  for (int b = 0; b < s.n; ++b)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double su = 0, sv = 0, sw = 0;
        for (int yy = y * k; yy < (y + 1) * k; ++yy)
          for (int xx = x * k; xx < (x + 1) * k; ++xx) {
            const double m = valid(b, 0, yy, xx);
            su += m * flow(b, 0, yy, xx);
            sv += m * flow(b, 1, yy, xx);
            sw += m;
          }
        if (sw > 0) {
          out(b, 0, y, x) = static_cast<T>(su / sw / k);
          out(b, 1, y, x) = static_cast<T>(sv / sw / k);
        }
        vout(b, 0, y, x) = sw >= 0.5 * k * k ? T(1) : T(0);
      }
  return {std::move(out), std::move(vout)};
}

template <typename T>
Var<T> flow_error_loss(const Var<T>& pred, const Tensor<T>& gt, const Tensor<T>& valid, double unit, bool robust,
                       double q, double eps) {
  const Shape s = pred.shape();
  check_flow_triplet<T>("flow_error_loss", s, gt.shape(), valid.shape());
  const std::size_t hw = s.plane();
  const Tensor<T>& p = pred.value();
  // Per-pixel derivative of the error w.r.t. (du, dv) in network scale.
  std::vector<double> du_grad(s.n * hw), dv_grad(s.n * hw);
  double total = 0;
  std::size_t count = 0;
  for (int b = 0; b < s.n; ++b) {
    const T* pu = p.plane(b, 0);
    const T* pv = p.plane(b, 1);
    const T* gu = gt.plane(b, 0);
    const T* gv = gt.plane(b, 1);
    const T* m = valid.plane(b, 0);
    for (std::size_t i = 0; i < hw; ++i) {
      if (m[i] <= T(0.5)) continue;
      const double du = unit * (static_cast<double>(pu[i]) - gu[i]);
      const double dv = unit * (static_cast<double>(pv[i]) - gv[i]);
      double e, gu_, gv_;
      if (robust) {
        const double l1 = std::abs(du) + std::abs(dv) + eps;
        e = std::pow(l1, q);
        const double d = q * std::pow(l1, q - 1);
        gu_ = d * ((du > 0) - (du < 0));
        gv_ = d * ((dv > 0) - (dv < 0));
      } else {
        e = std::sqrt(du * du + dv * dv);
        gu_ = e > 0 ? du / e : 0.0;
        gv_ = e > 0 ? dv / e : 0.0;
      }
      total += e;
      du_grad[b * hw + i] = gu_;
      dv_grad[b * hw + i] = gv_;
      ++count;
    }
  }
  const double inv = count ? 1.0 / static_cast<double>(count) : 0.0;
  Tape<T>& tape = *pred.tape();
  return tape.record(
      Tensor<T>::scalar(static_cast<T>(total * inv)), {pred},
      [du_grad = std::move(du_grad), dv_grad = std::move(dv_grad), s, hw, coef = unit * inv](
          const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
        if (!gin[0]) return;
        const double go = static_cast<double>(g.item()) * coef;
        for (int b = 0; b < s.n; ++b) {
          T* gu = gin[0]->plane(b, 0);
          T* gv = gin[0]->plane(b, 1);
          for (std::size_t i = 0; i < hw; ++i) {
            gu[i] += static_cast<T>(go * du_grad[b * hw + i]);
            gv[i] += static_cast<T>(go * dv_grad[b * hw + i]);
          }
        }
      });
}

template <typename T>
Var<T> multiscale_epe(std::span<const Var<T>> preds, const Tensor<T>& gt, const Tensor<T>& valid,
                      const LossConfig& cfg) {
  cfg.validate();
  if (preds.size() != cfg.levels.size())
    throw std::invalid_argument("multiscale_epe: " + std::to_string(preds.size()) + " predictions for " +
                                std::to_string(cfg.levels.size()) + " configured levels");
  Var<T> total;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const int l = cfg.levels[i];
    auto [gt_l, valid_l] = downscale_flow(gt, valid, l);
    const double unit = std::ldexp(1.0, l) / cfg.flow_scale;
    Var<T> e = flow_error_loss(preds[i], gt_l, valid_l, unit, cfg.robust, cfg.q, cfg.eps);
    e = scale(e, static_cast<T>(cfg.weights[i]));
    total = total.valid() ? add(total, e) : e;
  }
  return total;
}

template <typename T>
double aepe(const Tensor<T>& pred, const Tensor<T>& gt, const Tensor<T>& valid) {
  check_flow_triplet<T>("aepe", pred.shape(), gt.shape(), valid.shape());
  const std::size_t n = count_valid("aepe", valid);
  const Shape s = pred.shape();
  const std::size_t hw = s.plane();
  double sum = 0;
  for (int b = 0; b < s.n; ++b)
    for (std::size_t i = 0; i < hw; ++i) {
      if (valid.plane(b, 0)[i] <= T(0.5)) continue;
      const double du = static_cast<double>(pred.plane(b, 0)[i]) - gt.plane(b, 0)[i];
      const double dv = static_cast<double>(pred.plane(b, 1)[i]) - gt.plane(b, 1)[i];
      sum += std::sqrt(du * du + dv * dv);
    }
  return sum / static_cast<double>(n);
}

template <typename T>
double fl_all(const Tensor<T>& pred, const Tensor<T>& gt, const Tensor<T>& valid) {
  check_flow_triplet<T>("fl_all", pred.shape(), gt.shape(), valid.shape());
  const std::size_t n = count_valid("fl_all", valid);
  const Shape s = pred.shape();
  const std::size_t hw = s.plane();
  std::size_t outliers = 0;
  for (int b = 0; b < s.n; ++b)
    for (std::size_t i = 0; i < hw; ++i) {
      if (valid.plane(b, 0)[i] <= T(0.5)) continue;
      const double gu = gt.plane(b, 0)[i], gv = gt.plane(b, 1)[i];
      const double du = pred.plane(b, 0)[i] - gu, dv = pred.plane(b, 1)[i] - gv;
      const double epe = std::sqrt(du * du + dv * dv);
      outliers += epe > 3.0 && epe > 0.05 * std::sqrt(gu * gu + gv * gv);
    }
  return 100.0 * static_cast<double>(outliers) / static_cast<double>(n);
}

#define FLOWFORGE_INSTANTIATE_LOSS(T)                                                                          \
  template std::pair<Tensor<T>, Tensor<T>> downscale_flow(const Tensor<T>&, const Tensor<T>&, int);           \
  template Var<T> flow_error_loss(const Var<T>&, const Tensor<T>&, const Tensor<T>&, double, bool, double,     \
                                  double);                                                                     \
  template Var<T> multiscale_epe(std::span<const Var<T>>, const Tensor<T>&, const Tensor<T>&,                 \
                                 const LossConfig&);                                                           \
  template double aepe(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                                 \
  template double fl_all(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);

FLOWFORGE_INSTANTIATE_LOSS(float)
FLOWFORGE_INSTANTIATE_LOSS(double)

}  // namespace flowforge
