#include "flowforge/op_registry.hpp"

#include <functional>
#include <map>
#include <memory>
#include <stdexcept>

#include "flowforge/flow_ops.hpp"
#include "flowforge/loss.hpp"
#include "flowforge/model.hpp"
#include "flowforge/ops.hpp"
#include "flowforge/random.hpp"

namespace flowforge {
namespace {

using Inputs = std::span<const Var<double>>;

Tensor<double> uniform(const Shape& s, Rng& rng, double lo = -1, double hi = 1) {
  return uniform_tensor<double>(s, rng, lo, hi);
}

Tensor<double> off_lattice(const Shape& s, Rng& rng, int range) {
  std::uniform_int_distribution<int> whole(-range, range - 1);
  std::uniform_real_distribution<double> frac(0.1, 0.9);
  Tensor<double> t(s);
  for (auto& v : t.data()) v = whole(rng) + frac(rng);
  return t;
}

// Values at least 0.1 away from zero, for ops with a kink there.
Tensor<double> off_zero(const Shape& s, Rng& rng) {
  std::uniform_real_distribution<double> mag(0.1, 1.0);
  std::bernoulli_distribution sign(0.5);
  Tensor<double> t(s);
  for (auto& v : t.data()) v = sign(rng) ? mag(rng) : -mag(rng);
  return t;
}

ModelConfig decoder_config() {
  ModelConfig c;
  c.pyramid_channels = {4, 4, 6, 6, 8, 8};
  c.decoder_widths = {6, 6, 4, 4, 4};
  c.context_widths = {4, 4, 4, 4, 4, 4};
  c.mu_deconv_channels = 4;
  c.convs_per_level = 1;
  c.max_disp_stage1 = 1;
  return c;
}

using Builder = std::function<GradCheckCase(Rng&)>;

const std::map<std::string, Builder>& registry() {
  static const std::map<std::string, Builder> ops = [] {
    std::map<std::string, Builder> m;
    m["conv2d"] = [](Rng& r) {
      return GradCheckCase{"conv2d", [](Inputs in) { return conv2d(in[0], in[1], in[2], {1, 1, 1}); },
                           {{"x", uniform({2, 3, 6, 6}, r)}, {"w", uniform({4, 3, 3, 3}, r)}, {"b", uniform({1, 4, 1, 1}, r)}},
                           {}};
    };
    m["conv2d_strided"] = [](Rng& r) {
      return GradCheckCase{"conv2d_strided", [](Inputs in) { return conv2d(in[0], in[1], in[2], {2, 2, 2}); },
                           {{"x", uniform({2, 3, 8, 8}, r)}, {"w", uniform({2, 3, 3, 3}, r)}, {"b", uniform({1, 2, 1, 1}, r)}},
                           {}};
    };
    m["deconv2d"] = [](Rng& r) {
      return GradCheckCase{"deconv2d", [](Inputs in) { return deconv2d(in[0], in[1], in[2]); },
                           {{"x", uniform({2, 3, 4, 4}, r)}, {"w", uniform({2, 3, 4, 4}, r)}, {"b", uniform({1, 2, 1, 1}, r)}},
                           {}};
    };
    m["leaky_relu"] = [](Rng& r) {
      return GradCheckCase{"leaky_relu", [](Inputs in) { return leaky_relu(in[0], 0.1); },
                           {{"x", off_zero({2, 3, 5, 5}, r)}}, {}};
    };
    m["sigmoid"] = [](Rng& r) {
      return GradCheckCase{"sigmoid", [](Inputs in) { return sigmoid(in[0]); }, {{"x", uniform({2, 3, 5, 5}, r, -3, 3)}},
                           {}};
    };
    m["add"] = [](Rng& r) {
      return GradCheckCase{"add", [](Inputs in) { return add(in[0], in[1]); },
                           {{"a", uniform({2, 3, 4, 4}, r)}, {"b", uniform({2, 3, 4, 4}, r)}}, {}};
    };
    m["sub"] = [](Rng& r) {
      return GradCheckCase{"sub", [](Inputs in) { return sub(in[0], in[1]); },
                           {{"a", uniform({2, 3, 4, 4}, r)}, {"b", uniform({2, 3, 4, 4}, r)}}, {}};
    };
    m["mul"] = [](Rng& r) {
      return GradCheckCase{"mul", [](Inputs in) { return mul(in[0], in[1]); },
                           {{"a", uniform({2, 3, 4, 4}, r)}, {"b", uniform({2, 3, 4, 4}, r)}}, {}};
    };
    m["scale"] = [](Rng& r) {
      return GradCheckCase{"scale", [](Inputs in) { return add_scalar(scale(in[0], -2.5), 0.75); },
                           {{"x", uniform({2, 3, 4, 4}, r)}}, {}};
    };
    m["concat"] = [](Rng& r) {
      return GradCheckCase{"concat", [](Inputs in) { return slice_channels(concat_channels({in[0], in[1]}), 1, 3); },
                           {{"a", uniform({2, 3, 4, 4}, r)}, {"b", uniform({2, 2, 4, 4}, r)}}, {}};
    };
    m["upsample"] = [](Rng& r) {
      return GradCheckCase{"upsample", [](Inputs in) { return upsample_bilinear(in[0], 4); },
                           {{"x", uniform({2, 3, 4, 4}, r)}}, {}};
    };
    m["warp"] = [](Rng& r) {
      return GradCheckCase{"warp", [](Inputs in) { return warp(in[0], in[1]); },
                           {{"features", uniform({2, 3, 6, 6}, r)}, {"flow", off_lattice({2, 2, 6, 6}, r, 2)}}, {}};
    };
    m["correlate"] = [](Rng& r) {
      return GradCheckCase{"correlate", [](Inputs in) { return correlate(in[0], in[1], 2); },
                           {{"f1", uniform({2, 3, 6, 6}, r)}, {"f2", uniform({2, 3, 6, 6}, r)}}, {}};
    };
    m["deform_conv"] = [](Rng& r) {
      return GradCheckCase{"deform_conv", [](Inputs in) { return deform_conv(in[0], in[1], in[2], in[3]); },
                           {{"features", uniform({2, 3, 5, 5}, r)},
                            {"flow", off_lattice({2, 2, 5, 5}, r, 2)},
                            {"w", uniform({2, 3, 3, 3}, r)},
                            {"b", uniform({1, 2, 1, 1}, r)}},
                           {}};
    };
    m["mask_tradeoff"] = [](Rng& r) {
      return GradCheckCase{"mask_tradeoff", [](Inputs in) { return mask_tradeoff(in[0], in[1], in[2]); },
                           {{"warped", uniform({2, 3, 4, 4}, r)},
                            {"theta", uniform({2, 1, 4, 4}, r, 0, 1)},
                            {"mu", uniform({2, 3, 4, 4}, r)}},
                           {}};
    };
    m["apply_mask"] = [](Rng& r) {
      return GradCheckCase{"apply_mask", [](Inputs in) { return apply_mask(in[0], in[1]); },
                           {{"warped", uniform({2, 3, 4, 4}, r)}, {"theta", uniform({2, 1, 4, 4}, r, 0, 1)}}, {}};
    };
    m["multiscale_epe"] = [](Rng& r) {
      auto gt = std::make_shared<Tensor<double>>(uniform({2, 2, 32, 32}, r, -4, 4));
      auto valid = std::make_shared<Tensor<double>>(Tensor<double>({2, 1, 32, 32}, 1.0));
      LossConfig cfg;
      cfg.levels = {2, 3};
      cfg.weights = {0.005, 0.01};
      return GradCheckCase{"multiscale_epe",
                           [gt, valid, cfg](Inputs in) {
                             const std::vector<Var<double>> preds{in[0], in[1]};
                             return multiscale_epe<double>(preds, *gt, *valid, cfg);
                           },
                           {{"pred_l2", uniform({2, 2, 8, 8}, r)}, {"pred_l3", uniform({2, 2, 4, 4}, r)}},
                           {}};
    };
    // Composed decoder passes: cost, features, upsampled flow and μ feed the
    // dense stack, flow/θ heads and the μ path (level 3) or the context
    // network (level 2).
    for (int level : {3, 2}) {
      const std::string name = level == 3 ? "decoder" : "decoder_context";
      m[name] = [level, name](Rng& r) {
        auto net = std::make_shared<MaskFlownet<double>>(decoder_config(), 11);
        for (auto& e : net->params().entries())
          if (e.name.find(".head.") != std::string::npos || e.name.find(".ctx.flow.") != std::string::npos)
            *e.value = uniform(e.value->shape(), r, -0.1, 0.1);
        const int ch = decoder_config().pyramid_channels[level - 1];
        const int hw = 64 >> level;
        const int next_ch = decoder_config().pyramid_channels[level - 2];
        auto proj = std::make_shared<Tensor<double>>(uniform({1, next_ch, 2 * hw, 2 * hw}, r));
        return GradCheckCase{
            name,
            [net, level, proj](Inputs in) {
              ParamBinding<double> bind(*in[0].tape(), net->params(), false);
              const auto o = net->decode_level(bind, "s1.dec", level, in[0], in[1], in[2], in[3]);
              if (level == kFinestLevel) return o.flow;
              const Var<double> mu = sum(mul(o.mu_next, in[0].tape()->constant(*proj)));
              return add(sum(concat_channels({o.flow, o.theta_logits})), mu);
            },
            {{"cost", uniform({1, 9, hw, hw}, r)},
             {"feat1", uniform({1, ch, hw, hw}, r)},
             {"up_flow", uniform({1, 2, hw, hw}, r)},
             {"up_mu", uniform({1, ch, hw, hw}, r)}},
            {.step = 1e-5, .max_elements_per_input = 48}};
      };
    }
    return m;
  }();
  return ops;
}

}  // namespace

std::vector<std::string> gradcheck_ops() {
  std::vector<std::string> names;
  for (const auto& [name, _] : registry()) names.push_back(name);
  return names;
}

GradCheckCase gradcheck_case(const std::string& op, std::uint64_t seed) {
  const auto it = registry().find(op);
  if (it == registry().end()) throw std::invalid_argument("unknown gradcheck op '" + op + "'");
  Rng rng(derive_seed(seed, 0x6c4d));
  GradCheckCase c = it->second(rng);
  c.options.seed = seed;
  return c;
}

}  // namespace flowforge
