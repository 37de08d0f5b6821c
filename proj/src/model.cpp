#include "flowforge/model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include <json.hpp>

#include "flowforge/flow_ops.hpp"
#include "flowforge/ops.hpp"
#include "flowforge/random.hpp"

namespace flowforge {

namespace {

constexpr double kSlope = 0.1;

std::string lname(const std::string& prefix, int level) { return prefix + ".l" + std::to_string(level); }

int cost_channels(int d) { return (2 * d + 1) * (2 * d + 1); }

}  // namespace

std::string_view to_string(Matching m) {
  switch (m) {
    case Matching::fmm: return "fmm";
    case Matching::ofmm: return "ofmm";
    case Matching::asym_ofmm: return "asym-ofmm";
    case Matching::asym_conv: return "asym-conv";
  }
  return "?";
}

Matching parse_matching(std::string_view name) {
  for (Matching m : {Matching::fmm, Matching::ofmm, Matching::asym_ofmm, Matching::asym_conv})
    if (to_string(m) == name) return m;
  throw std::invalid_argument("unknown matching module '" + std::string(name) +
                              "' (expected fmm, ofmm, asym-ofmm or asym-conv)");
}

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.pyramid_channels = {16, 32, 32, 32, 32, 32};
  c.decoder_widths = {32, 32, 24, 16, 8};
  c.context_widths = {32, 32, 32, 24, 16, 8};
  c.mu_deconv_channels = 8;
  c.convs_per_level = 2;
  return c;
}

std::string ModelConfig::to_json() const {
  nlohmann::json j;
  j["pyramid_channels"] = pyramid_channels;
  j["decoder_widths"] = decoder_widths;
  j["context_widths"] = context_widths;
  j["context_dilations"] = context_dilations;
  j["mu_deconv_channels"] = mu_deconv_channels;
  j["convs_per_level"] = convs_per_level;
  j["max_disp_stage1"] = max_disp_stage1;
  j["max_disp_stage2"] = max_disp_stage2;
  j["matching"] = std::string(to_string(matching));
  j["tradeoff"] = tradeoff;
  j["stages"] = stages;
  j["flow_scale"] = flow_scale;
  j["image_channels"] = image_channels;
  j["levels"] = {kFinestLevel, kCoarsestLevel};
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  ModelConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("pyramid_channels", c.pyramid_channels);
  get("decoder_widths", c.decoder_widths);
  get("context_widths", c.context_widths);
  get("context_dilations", c.context_dilations);
  get("mu_deconv_channels", c.mu_deconv_channels);
  get("convs_per_level", c.convs_per_level);
  get("max_disp_stage1", c.max_disp_stage1);
  get("max_disp_stage2", c.max_disp_stage2);
  if (j.contains("matching")) c.matching = parse_matching(j.at("matching").get<std::string>());
  get("tradeoff", c.tradeoff);
  get("stages", c.stages);
  get("flow_scale", c.flow_scale);
  get("image_channels", c.image_channels);
  if (c.stages != 1 && c.stages != 2) throw std::invalid_argument("stages must be 1 or 2");
  if (c.convs_per_level < 1) throw std::invalid_argument("convs_per_level must be >= 1");
  return c;
}

template <typename T>
Var<T> ParamBinding<T>::operator()(const std::string& name) {
  if (auto it = vars_.find(name); it != vars_.end()) return it->second;
  const auto& e = store_->entry(name);
  Var<T> v = tape_->leaf(std::shared_ptr<const Tensor<T>>(e.value), trainable_ && !e.frozen);
  vars_.emplace(name, v);
  order_.emplace_back(name, v);
  return v;
}

template <typename T>
MaskFlownet<T>::MaskFlownet(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  init_stage("s1", false, derive_seed(seed, 1));
  if (config_.stages == 2) init_stage("s2", true, derive_seed(seed, 2));
}

template <typename T>
void MaskFlownet<T>::add_conv(const std::string& name, int in, int out, int k, std::uint64_t seed) {
  // Kaiming-uniform, fan-in, gain for leaky ReLU with slope 0.1.
  const double fan_in = static_cast<double>(in) * k * k;
  const double bound = std::sqrt(2.0 / (1.0 + kSlope * kSlope)) * std::sqrt(3.0 / fan_in);
  Rng rng(seed);
  params_.add(name + ".w", uniform_tensor<T>(Shape{out, in, k, k}, rng, -bound, bound));
  params_.add(name + ".b", Tensor<T>::zeros(Shape{1, out, 1, 1}));
}

template <typename T>
void MaskFlownet<T>::add_deconv(const std::string& name, int in, int out, std::uint64_t seed) {
  add_conv(name, in, out, 4, seed);
}

template <typename T>
int MaskFlownet<T>::decoder_input_channels(int stage, int level) const {
  const int c = config_.pyramid_channels[level - 1];
  if (stage == 1) {
    const int cost = cost_channels(config_.max_disp_stage1);
    return level == kCoarsestLevel ? cost + c : cost + c + 2 + c;
  }
  const int cost = 2 * cost_channels(config_.max_disp_stage2);
  return cost + c + 2 + 2 + (level == kCoarsestLevel ? 0 : c);
}

template <typename T>
void MaskFlownet<T>::init_stage(const std::string& prefix, bool occlusion_pyramid, std::uint64_t seed) {
  std::uint64_t stream = 0;
  auto next = [&] { return derive_seed(seed, stream++); };
  const auto& pc = config_.pyramid_channels;

  auto zero_fill = [&](const std::string& name) {
    auto& w = *params_.entry(name + ".w").value;
    std::fill(w.data().begin(), w.data().end(), T(0));
  };
  // Centre tap passes each channel through unchanged.
  auto identity_fill = [&](const std::string& name) {
    auto& w = *params_.entry(name + ".w").value;
    std::fill(w.data().begin(), w.data().end(), T(0));
    const Shape s = w.shape();
    for (int i = 0; i < std::min(s.n, s.c); ++i) w(i, i, s.h / 2, s.w / 2) = T(1);
  };
  auto add_pyramid = [&](const std::string& name, int in_channels) {
    int in = in_channels;
    for (int l = 1; l <= kCoarsestLevel; ++l) {
      for (int i = 0; i < config_.convs_per_level; ++i) {
        add_conv(lname(name, l) + ".c" + std::to_string(i), in, pc[l - 1], 3, next());
        in = pc[l - 1];
      }
    }
  };
  if (!occlusion_pyramid) add_pyramid(prefix + ".pyr", config_.image_channels);
  else add_pyramid(prefix + ".occpyr", config_.image_channels + 1);

  const int stage = occlusion_pyramid ? 2 : 1;
  const bool needs_match_conv = config_.matching == Matching::asym_ofmm || config_.matching == Matching::asym_conv;
  for (int l = kCoarsestLevel; l >= kFinestLevel; --l) {
    const std::string dec = lname(prefix + ".dec", l);
    const int c = pc[l - 1];
    const bool has_match = stage == 2 || l < kCoarsestLevel;
    if (needs_match_conv && has_match) {
      const std::string m = lname(prefix + ".match", l);
      add_conv(m, c, c, 3, next());
      identity_fill(m);
    }
    int in = decoder_input_channels(stage, l);
    for (int i = 0; i < 5; ++i) {
      add_conv(dec + ".d" + std::to_string(i), in, config_.decoder_widths[i], 3, next());
      in += config_.decoder_widths[i];
    }
    add_conv(dec + ".head", in, l == kFinestLevel ? 2 : 3, 3, next());  // flow, then occlusion logit above level 2
    zero_fill(dec + ".head");
    if (l > kFinestLevel) {
      add_deconv(dec + ".mu_up", config_.decoder_widths[4], config_.mu_deconv_channels, next());
      add_conv(dec + ".mu", config_.mu_deconv_channels, pc[l - 2], 3, next());
      zero_fill(dec + ".mu");
    }
    if (l == kFinestLevel) {
      int cin = in + 2;
      for (int i = 0; i < 6; ++i) {
        add_conv(prefix + ".ctx.c" + std::to_string(i), cin, config_.context_widths[i], 3, next());
        cin = config_.context_widths[i];
      }
      add_conv(prefix + ".ctx.flow", cin, 2, 3, next());
      zero_fill(prefix + ".ctx.flow");
    }
  }
}

template <typename T>
std::vector<Var<T>> MaskFlownet<T>::build_pyramid(ParamBinding<T>& bind, const std::string& prefix,
                                                  const Var<T>& image) const {
  const Shape s = image.shape();
  if (s.h % 64 != 0 || s.w % 64 != 0 || s.h == 0 || s.w == 0)
    throw ShapeError("build_pyramid: spatial size must be a positive multiple of 64, got " + s.str());
  std::vector<Var<T>> levels;
  Var<T> x = image;
  for (int l = 1; l <= kCoarsestLevel; ++l) {
    for (int i = 0; i < config_.convs_per_level; ++i) {
      const std::string n = lname(prefix, l) + ".c" + std::to_string(i);
      const ConvSpec spec{i == 0 ? 2 : 1, 1, 1};
      x = leaky_relu(conv2d(x, bind(n + ".w"), bind(n + ".b"), spec), T(kSlope));
    }
    levels.push_back(x);
  }
  return levels;
}

template <typename T>
Var<T> MaskFlownet<T>::occlusion_input(const Var<T>& image, const Var<T>& mask) {
  if (mask.shape().c != 1 || !mask.shape().same_spatial(image.shape()))
    throw ShapeError("occlusion_input: mask " + mask.shape().str() + " does not match image " +
                     image.shape().str());
  return concat_channels<T>({image, add_scalar(mask, T(-0.5))});
}

template <typename T>
LevelOutputs<T> MaskFlownet<T>::decode_level(ParamBinding<T>& bind, const std::string& prefix, int level,
                                             const Var<T>& cost, const Var<T>& feat1, const Var<T>& up_flow,
                                             const Var<T>& up_mu) const {
  std::vector<Var<T>> parts{cost, feat1};
  if (up_flow.valid()) parts.push_back(up_flow);
  if (up_mu.valid()) parts.push_back(up_mu);
  for (const auto& p : parts)
    if (!p.shape().same_spatial(cost.shape()))
      throw ShapeError("decode_level: input " + p.shape().str() + " does not match level resolution " +
                       cost.shape().str());

  const std::string dec = lname(prefix, level);
  auto conv = [&](const std::string& n, const Var<T>& x, int dilation = 1) {
    return conv2d(x, bind(n + ".w"), bind(n + ".b"), ConvSpec{1, dilation, dilation});
  };

  LevelOutputs<T> out;
  out.cost = cost;
  Var<T> x = concat_channels<T>(std::span<const Var<T>>(parts));
  for (int i = 0; i < 5; ++i) {
    out.features = leaky_relu(conv(dec + ".d" + std::to_string(i), x), T(kSlope));
    x = concat_channels<T>({x, out.features});
  }
  const T unit = static_cast<T>(config_.flow_scale / std::ldexp(1.0, level));
  Var<T> head = conv(dec + ".head", x);
  Var<T> delta = scale(slice_channels(head, 0, 2), unit);
  out.flow = up_flow.valid() ? add(up_flow, delta) : delta;
  if (level > kFinestLevel) {
    out.theta_logits = slice_channels(head, 2, 1);
    Var<T> up = leaky_relu(deconv2d(out.features, bind(dec + ".mu_up.w"), bind(dec + ".mu_up.b")), T(kSlope));
    out.mu_next = leaky_relu(conv(dec + ".mu", up), T(kSlope));
  }
  if (level == kFinestLevel) out.flow = context(bind, prefix.substr(0, prefix.find('.')), x, out.flow);
  return out;
}

template <typename T>
Var<T> MaskFlownet<T>::context(ParamBinding<T>& bind, const std::string& prefix, const Var<T>& stack,
                               const Var<T>& flow) const {
  Var<T> x = concat_channels<T>({stack, flow});
  for (int i = 0; i < 6; ++i) {
    const std::string n = prefix + ".ctx.c" + std::to_string(i);
    const int d = config_.context_dilations[i];
    x = leaky_relu(conv2d(x, bind(n + ".w"), bind(n + ".b"), ConvSpec{1, d, d}), T(kSlope));
  }
  const T unit = static_cast<T>(config_.flow_scale / std::ldexp(1.0, kFinestLevel));
  Var<T> delta = conv2d(x, bind(prefix + ".ctx.flow.w"), bind(prefix + ".ctx.flow.b"));
  return add(flow, scale(delta, unit));
}

template <typename T>
Var<T> MaskFlownet<T>::match(ParamBinding<T>& bind, const std::string& prefix, int level, const Var<T>& f2,
                             const Var<T>& flow, const Var<T>& theta, const Var<T>& mu) const {
  const std::string n = lname(prefix + ".match", level);
  Var<T> w;
  switch (config_.matching) {
    case Matching::fmm:
      return warp(f2, flow);
    case Matching::ofmm:
      w = warp(f2, flow);
      break;
    case Matching::asym_ofmm:
      w = leaky_relu(deform_conv(f2, flow, bind(n + ".w"), bind(n + ".b")), T(kSlope));
      break;
    case Matching::asym_conv:
      w = leaky_relu(conv2d(warp(f2, flow), bind(n + ".w"), bind(n + ".b")), T(kSlope));
      break;
  }
  if (!theta.valid()) return w;
  return config_.tradeoff ? mask_tradeoff(w, theta, mu) : apply_mask(w, theta);
}

template <typename T>
void MaskFlownet<T>::finish(StageOutputs<T>& out) const {
  const auto& l2 = out.level(kFinestLevel);
  out.flow_full = scale(upsample_bilinear(l2.flow, 4), T(4));
  out.mask_full = upsample_bilinear(l2.theta, 4);
}

template <typename T>
StageOutputs<T> MaskFlownet<T>::forward_stage1(ParamBinding<T>& bind, const std::vector<Var<T>>& p1,
                                               const std::vector<Var<T>>& p2) const {
  StageOutputs<T> out;
  const int d = config_.max_disp_stage1;
  for (int l = kCoarsestLevel; l >= kFinestLevel; --l) {
    const Var<T>& f1 = p1[l - 1];
    const Var<T>& f2 = p2[l - 1];
    if (l == kCoarsestLevel) {
      Var<T> cost = leaky_relu(correlate(f1, f2, d), T(kSlope));
      out.level(l) = decode_level(bind, "s1.dec", l, cost, f1, Var<T>(), Var<T>());
      continue;
    }
    const auto& prev = out.level(l + 1);
    Var<T> up_flow = scale(upsample_bilinear_2x(prev.flow), T(2));
    Var<T> up_theta = upsample_bilinear_2x(sigmoid(prev.theta_logits));
    Var<T> m = match(bind, "s1", l, f2, up_flow, up_theta, prev.mu_next);
    Var<T> cost = leaky_relu(correlate(f1, m, d), T(kSlope));
    out.level(l) = decode_level(bind, "s1.dec", l, cost, f1, up_flow, prev.mu_next);
    out.level(l).theta = up_theta;
  }
  finish(out);
  return out;
}

template <typename T>
StageOutputs<T> MaskFlownet<T>::forward_stage2(ParamBinding<T>& bind, const StageOutputs<T>& s1,
                                               const std::vector<Var<T>>& p1, const std::vector<Var<T>>& p2,
                                               const std::vector<Var<T>>& q1,
                                               const std::vector<Var<T>>& q2) const {
  StageOutputs<T> out;
  const int d = config_.max_disp_stage2;
  for (int l = kCoarsestLevel; l >= kFinestLevel; --l) {
    const Var<T>& phi1 = s1.level(l).flow;
    Var<T> flow_in = phi1, up_theta, up_mu;
    if (l < kCoarsestLevel) {
      const auto& prev = out.level(l + 1);
      Var<T> residual = sub(prev.flow, s1.level(l + 1).flow);
      flow_in = add(phi1, scale(upsample_bilinear_2x(residual), T(2)));
      up_theta = upsample_bilinear_2x(sigmoid(prev.theta_logits));
      up_mu = prev.mu_next;
    }
    Var<T> m = match(bind, "s2", l, p2[l - 1], flow_in, up_theta, up_mu);
    Var<T> cost_a = leaky_relu(correlate(p1[l - 1], m, d), T(kSlope));
    Var<T> cost_b = leaky_relu(correlate(q1[l - 1], q2[l - 1], d), T(kSlope));
    out.level(l) = decode_level(bind, "s2.dec", l, concat_channels<T>({cost_a, cost_b}),
                                concat_channels<T>({p1[l - 1], phi1}), flow_in, up_mu);
    out.level(l).theta = up_theta;
  }
  finish(out);
  return out;
}

namespace {

// Per-sample standardization shared by both frames: each channel is centred
// on its mean over the pair, then the pair is divided by its overall
// standard deviation.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> standardize(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape s = a.shape();
  Tensor<T> oa(s), ob(s);
  const std::size_t plane = s.plane();
  for (int n = 0; n < s.n; ++n) {
    std::vector<double> mean(s.c);
    double sq = 0;
    for (int c = 0; c < s.c; ++c) {
      const T* pa = &a(n, c, 0, 0);
      const T* pb = &b(n, c, 0, 0);
      double sum = 0;
      for (std::size_t i = 0; i < plane; ++i) sum += static_cast<double>(pa[i]) + static_cast<double>(pb[i]);
      mean[c] = sum / (2.0 * static_cast<double>(plane));
      for (std::size_t i = 0; i < plane; ++i)
        sq += (pa[i] - mean[c]) * (pa[i] - mean[c]) + (pb[i] - mean[c]) * (pb[i] - mean[c]);
    }
    const double inv = 1.0 / std::sqrt(sq / (2.0 * static_cast<double>(plane) * s.c) + 1e-4);
    for (int c = 0; c < s.c; ++c) {
      const T* pa = &a(n, c, 0, 0);
      const T* pb = &b(n, c, 0, 0);
      T* qa = &oa(n, c, 0, 0);
      T* qb = &ob(n, c, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) {
        qa[i] = static_cast<T>((pa[i] - mean[c]) * inv);
        qb[i] = static_cast<T>((pb[i] - mean[c]) * inv);
      }
    }
  }
  return {oa, ob};
}

}  // namespace

template <typename T>
ForwardResult<T> MaskFlownet<T>::forward(ParamBinding<T>& bind, const Var<T>& image1, const Var<T>& image2) const {
  if (image1.shape() != image2.shape())
    throw ShapeError("forward: image shapes differ: " + image1.shape().str() + " vs " + image2.shape().str());
  if (image1.shape().c != config_.image_channels)
    throw ShapeError("forward: expected " + std::to_string(config_.image_channels) + " image channels, got " +
                     image1.shape().str());
  ForwardResult<T> r;
  const auto [n1, n2] = standardize(image1.value(), image2.value());
  const auto p1 = build_pyramid(bind, "s1.pyr", image1.tape()->constant(n1));
  const auto p2 = build_pyramid(bind, "s1.pyr", image1.tape()->constant(n2));
  r.stage1 = forward_stage1(bind, p1, p2);
  if (config_.stages == 2) {
    Tape<T>& tape = *image1.tape();
    const Shape ms{image1.shape().n, 1, image1.shape().h, image1.shape().w};
    Var<T> warped = warp(image2, r.stage1.flow_full);
    r.occlusion_inputs[0] = occlusion_input(image1, tape.constant(Tensor<T>(ms, T(0.5))));
    r.occlusion_inputs[1] = occlusion_input(warped, r.stage1.mask_full);
    const auto q1 = build_pyramid(bind, "s2.occpyr", r.occlusion_inputs[0]);
    const auto q2 = build_pyramid(bind, "s2.occpyr", r.occlusion_inputs[1]);
    r.stage2 = forward_stage2(bind, r.stage1, p1, p2, q1, q2);
  }
  return r;
}

template <typename T>
void MaskFlownet<T>::load(const Checkpoint& checkpoint, std::string_view prefix) {
  std::size_t matched = 0, expected = 0;
  for (const auto& e : params_.entries()) expected += e.name.starts_with(prefix);
  for (const auto& nt : checkpoint.params) {
    if (!nt.name.starts_with(prefix)) continue;
    if (!params_.contains(nt.name)) throw CheckpointError("checkpoint parameter not in model: " + nt.name);
    auto& e = params_.entry(nt.name);
    if (e.value->shape() != nt.value.shape())
      throw CheckpointError("checkpoint parameter " + nt.name + " has shape " + nt.value.shape().str() +
                            ", model expects " + e.value->shape().str());
    *e.value = tensor_cast<T>(nt.value);
    ++matched;
  }
  if (matched != expected)
    throw CheckpointError("checkpoint provides " + std::to_string(matched) + " of " + std::to_string(expected) +
                          " model parameters");
}

template class ParamBinding<float>;
template class ParamBinding<double>;
template class MaskFlownet<float>;
template class MaskFlownet<double>;

}  // namespace flowforge
