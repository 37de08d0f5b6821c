#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>

#include "flowforge/io.hpp"
#include "flowforge/loss.hpp"
#include "flowforge/op_registry.hpp"
#include "flowforge/ops.hpp"
#include "flowforge/train.hpp"

using namespace flowforge;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_model() {
  ModelConfig c;
  c.pyramid_channels = {4, 4, 6, 6, 8, 8};
  c.decoder_widths = {6, 6, 4, 4, 4};
  c.context_widths = {4, 4, 4, 4, 4, 4};
  c.mu_deconv_channels = 4;
  c.convs_per_level = 1;
  return c;
}

RunConfig tiny_run(const fs::path& out, int iterations = 3) {
  RunConfig c;
  c.model = tiny_model();
  c.optim.iterations = iterations;
  c.optim.batch_size = 2;
  c.optim.checkpoint_every = 0;
  c.data.eval_samples = 4;
  c.out_dir = out.string();
  return c;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("flowforge_test_train_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(Config, JsonRoundTrip) {
  RunConfig c;
  c.seed = 42;
  c.precision = Precision::f64;
  c.model.matching = Matching::fmm;
  c.model.tradeoff = false;
  c.optim.learning_rate = 3e-4;
  c.optim.lr_milestones = {0.5};
  c.data.scene.max_disp = 4;
  c.data.scene.min_cell = 12;
  c.data.augment = "chairs";
  c.out_dir = "somewhere";
  const RunConfig r = RunConfig::from_json(c.to_json());
  EXPECT_EQ(r.to_json(), c.to_json());
  EXPECT_EQ(r.model, c.model);
}

TEST(Config, PartialDocumentKeepsDefaults) {
  const RunConfig r = RunConfig::from_json(R"({"optim": {"iterations": 7}})");
  RunConfig d;
  d.optim.iterations = 7;
  EXPECT_EQ(r.to_json(), d.to_json());
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(RunConfig::from_json(R"({"optimizer": {}})"), ConfigError);
  EXPECT_THROW(RunConfig::from_json(R"({"optim": {"lr": 1}})"), ConfigError);
  EXPECT_THROW(RunConfig::from_json(R"({"data": {"scene": {"cells": 3}}})"), ConfigError);
  EXPECT_THROW(RunConfig::from_json(R"({"model": {"matching": "bogus"}})"), ConfigError);
  EXPECT_THROW(RunConfig::from_json(R"({"precision": "f16"})"), ConfigError);
  EXPECT_THROW(RunConfig::from_json(R"({"optim": {"iterations": "many"}})"), ConfigError);
  EXPECT_THROW(RunConfig::from_json(R"({"data": {"scene": {"height": 80}}})"), ConfigError);
  EXPECT_THROW(RunConfig::from_json("{"), ConfigError);
}

TEST(Schedule, StepDecay) {
  OptimConfig o;
  o.iterations = 100;
  EXPECT_DOUBLE_EQ(learning_rate_at(o, 0), 1e-3);
  EXPECT_DOUBLE_EQ(learning_rate_at(o, 59), 1e-3);
  EXPECT_DOUBLE_EQ(learning_rate_at(o, 60), 5e-4);
  EXPECT_DOUBLE_EQ(learning_rate_at(o, 80), 2.5e-4);
  EXPECT_DOUBLE_EQ(learning_rate_at(o, 99), 2.5e-4);
}

TEST(Adam, MatchesHandComputedUpdates) {
  OptimConfig o;
  Adam<double> adam(o);
  ParamStore<double> store;
  store.add("p", Tensor<double>({1, 1, 1, 2}, std::vector<double>{1.0, -2.0}));
  double m[2] = {0, 0}, v[2] = {0, 0}, p[2] = {1.0, -2.0};
  for (int t = 1; t <= 3; ++t) {
    Tape<double> tape;
    ParamBinding<double> bind(tape, store);
    // loss = sum(p^2) / 2 + sum(p), so grad = p + 1
    const auto x = bind("p");
    tape.backward(add(scale(sum(mul(x, x)), 0.5), sum(x)));
    adam.step(store, bind, tape, 0.1);
    for (int i = 0; i < 2; ++i) {
      const double g = p[i] + 1;
      m[i] = 0.9 * m[i] + 0.1 * g;
      v[i] = 0.999 * v[i] + 0.001 * g * g;
      const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
      p[i] -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
      EXPECT_NEAR(store.at("p").data()[i], p[i], 1e-15) << "t=" << t << " i=" << i;
    }
  }
  EXPECT_EQ(adam.steps(), 3);
}

TEST(Adam, SkipsFrozenParameters) {
  Adam<double> adam(OptimConfig{});
  ParamStore<double> store;
  store.add("a", Tensor<double>({1, 1, 1, 1}, 1.0));
  store.add("b", Tensor<double>({1, 1, 1, 1}, 1.0));
  store.set_frozen("a", true);
  Tape<double> tape;
  ParamBinding<double> bind(tape, store);
  tape.backward(add(sum(bind("a")), sum(bind("b"))));
  adam.step(store, bind, tape, 0.1);
  EXPECT_EQ(store.at("a").data()[0], 1.0);
  EXPECT_NE(store.at("b").data()[0], 1.0);
}

TEST(Train, SmokeRunLossMovingAverageDecreases) {
  RunConfig c;
  c.optim.iterations = 200;
  c.optim.checkpoint_every = 0;
  const auto r = train<float>(c);
  ASSERT_EQ(r.history.size(), 200u);
  auto window_mean = [&](int end) {
    double s = 0;
    for (int i = end - 100; i < end; ++i) s += r.history[i].loss;
    return s / 100;
  };
  double prev = window_mean(100);
  for (int end = 120; end <= 200; end += 20) {
    const double cur = window_mean(end);
    EXPECT_LT(cur, prev) << "100-step moving average rose at step " << end;
    prev = cur;
  }
}

TEST(Train, WritesCheckpointsAndMetricsEveryStep) {
  const fs::path dir = scratch("periodic");
  RunConfig c = tiny_run(dir, 4);
  c.optim.checkpoint_every = 2;
  std::ostringstream log;
  train<float>(c, &log);
  EXPECT_TRUE(fs::exists(dir / "checkpoint_2.ffw"));
  EXPECT_TRUE(fs::exists(dir / "checkpoint_4.ffw"));
  EXPECT_TRUE(fs::exists(dir / "final.ffw"));
  EXPECT_EQ(RunConfig::load(dir / "config.json").to_json(), c.to_json());
  const std::string text = log.str();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 4);
  EXPECT_NE(text.find("step=4 loss="), std::string::npos);
  EXPECT_EQ(slurp(dir / "checkpoint_4.ffw"), slurp(dir / "final.ffw"));
}

TEST(Train, SameSeedGivesIdenticalCheckpointBytes) {
  const fs::path a = scratch("det_a"), b = scratch("det_b"), c = scratch("det_c");
  train<float>(tiny_run(a));
  train<float>(tiny_run(b));
  RunConfig other = tiny_run(c);
  other.seed = 2;
  train<float>(other);
  EXPECT_EQ(slurp(a / "final.ffw"), slurp(b / "final.ffw"));
  EXPECT_NE(slurp(a / "final.ffw"), slurp(c / "final.ffw"));
}

TEST(Train, StageTwoLeavesStageOneBytesUnchanged) {
  const fs::path s1 = scratch("stage1"), s2 = scratch("stage2");
  train<float>(tiny_run(s1));
  RunConfig c = tiny_run(s2);
  c.model.stages = 2;
  c.stage1_checkpoint = (s1 / "final.ffw").string();
  train<float>(c);
  const Checkpoint before = load_checkpoint(s1 / "final.ffw");
  const Checkpoint after = load_checkpoint(s2 / "final.ffw");
  int compared = 0, stage2_changed = 0;
  const MaskFlownet<float> fresh(c.model, c.seed);
  for (const auto& p : after.params) {
    if (p.name.rfind("s1.", 0) == 0) {
      const auto it = std::find_if(before.params.begin(), before.params.end(),
                                   [&](const NamedTensor& q) { return q.name == p.name; });
      ASSERT_NE(it, before.params.end()) << p.name;
      ASSERT_EQ(p.value.size(), it->value.size());
      EXPECT_EQ(std::memcmp(p.value.data().data(), it->value.data().data(), p.value.size() * sizeof(float)), 0)
          << p.name;
      ++compared;
    } else {
      const auto& init = fresh.params().at(p.name);
      stage2_changed += !std::equal(init.data().begin(), init.data().end(), p.value.data().begin());
    }
  }
  EXPECT_EQ(compared, static_cast<int>(before.params.size()));
  EXPECT_GT(stage2_changed, 0);
}

TEST(Train, StageTwoWithoutStageOneCheckpointIsAnError) {
  RunConfig c = tiny_run(scratch("missing"));
  c.model.stages = 2;
  EXPECT_THROW(train<float>(c), ConfigError);
  c.stage1_checkpoint = "/nonexistent/final.ffw";
  EXPECT_THROW(train<float>(c), ConfigError);
}

TEST(Train, StageTwoRejectsMismatchedStageOneArchitecture) {
  const fs::path s1 = scratch("stage1_mismatch");
  train<float>(tiny_run(s1));
  RunConfig c = tiny_run(scratch("stage2_mismatch"));
  c.model = ModelConfig::desk();
  c.model.stages = 2;
  c.stage1_checkpoint = (s1 / "final.ffw").string();
  EXPECT_THROW(train<float>(c), ConfigError);
}

TEST(Eval, RepeatableAndZeroBaselineIsMeanMagnitude) {
  const fs::path dir = scratch("eval");
  const RunConfig c = tiny_run(dir);
  train<float>(c);
  const auto m = load_model<float>((dir / "final.ffw").string(), c.model);
  const EvalReport a = evaluate(m, c.data), b = evaluate(m, c.data);
  EXPECT_EQ(a.to_json(), b.to_json());

  // Independent accumulation of |gt| over valid pixels of the held-out set.
  double mag = 0, count = 0;
  for (int i = 0; i < c.data.eval_samples; ++i) {
    const SyntheticSample s = eval_sample(c.data, i);
    for (int y = 0; y < s.flow.shape().h; ++y)
      for (int x = 0; x < s.flow.shape().w; ++x)
        if (s.valid(0, 0, y, x) > 0.5f) {
          mag += std::hypot(double(s.flow(0, 0, y, x)), double(s.flow(0, 1, y, x)));
          count += 1;
        }
  }
  EXPECT_NEAR(a.zero_aepe, mag / count, 1e-9);
  EXPECT_NEAR(a.mean_gt_magnitude, mag / count, 1e-9);
  EXPECT_GT(a.zero_aepe, 1.0);
  EXPECT_GT(a.theta_visible, 0.0);
  EXPECT_LT(a.theta_visible, 1.0);
}

TEST(Eval, GroundTruthAsPredictionScoresZero) {
  DataConfig d;
  for (int i = 0; i < 4; ++i) {
    const SyntheticSample s = eval_sample(d, i);
    EXPECT_EQ(aepe(s.flow, s.flow, s.valid), 0.0);
    EXPECT_EQ(fl_all(s.flow, s.flow, s.valid), 0.0);
  }
}

TEST(Eval, ArchitectureMismatchIsRejected) {
  const fs::path dir = scratch("mismatch");
  train<float>(tiny_run(dir));
  EXPECT_THROW(load_model<float>((dir / "final.ffw").string(), ModelConfig::desk()), CheckpointError);
  EXPECT_NO_THROW(load_model<float>((dir / "final.ffw").string()));
}

TEST(Infer, NonMultipleOf64SizesRoundTrip) {
  const fs::path dir = scratch("infer");
  train<float>(tiny_run(dir));
  const auto m = load_model<float>((dir / "final.ffw").string());
  Rng rng(5);
  const Tensor<float> i1 = uniform_tensor<float>({1, 3, 80, 100}, rng, 0, 1);
  const Tensor<float> i2 = uniform_tensor<float>({1, 3, 80, 100}, rng, 0, 1);
  const auto [flow, mask] = infer(m, i1, i2);
  EXPECT_EQ(flow.shape(), (Shape{1, 2, 80, 100}));
  EXPECT_EQ(mask.shape(), (Shape{1, 1, 80, 100}));
  write_flo(dir / "flow.flo", flow);
  const Tensor<float> back = read_flo(dir / "flow.flo");
  ASSERT_EQ(back.shape(), flow.shape());
  EXPECT_EQ(std::memcmp(back.data().data(), flow.data().data(), flow.size() * sizeof(float)), 0);
  EXPECT_THROW(infer(m, i1, uniform_tensor<float>({1, 3, 80, 96}, rng, 0, 1)), ShapeError);
}

TEST(Infer, CheckpointReloadReproducesOutputsBitwise) {
  const fs::path dir = scratch("reload");
  const RunConfig c = tiny_run(dir);
  const auto trained = train<float>(c);
  const auto loaded = load_model<float>((dir / "final.ffw").string());
  const SyntheticSample s = eval_sample(c.data, 0);
  const auto [f1, m1] = infer(trained.model, s.image1, s.image2);
  const auto [f2, m2] = infer(loaded, s.image1, s.image2);
  EXPECT_EQ(std::memcmp(f1.data().data(), f2.data().data(), f1.size() * sizeof(float)), 0);
  EXPECT_EQ(std::memcmp(m1.data().data(), m2.data().data(), m1.size() * sizeof(float)), 0);
}

TEST(GradCheckRegistry, EveryRegisteredOpPasses) {
  const auto ops = gradcheck_ops();
  for (const char* required : {"warp", "correlate", "deform_conv", "mask_tradeoff", "conv2d", "deconv2d", "decoder"})
    EXPECT_NE(std::find(ops.begin(), ops.end(), required), ops.end()) << required;
  for (const auto& op : ops) {
    const GradCheckCase c = gradcheck_case(op, 3);
    const GradCheckReport r = check_gradients(c.fn, c.inputs, c.options);
    EXPECT_TRUE(r.passed(1e-3)) << op << " max rel err " << r.max_rel_error();
  }
}

TEST(GradCheckRegistry, UnknownOpThrowsAndCasesAreSeeded) {
  EXPECT_THROW(gradcheck_case("bogus", 1), std::invalid_argument);
  const auto a = gradcheck_case("warp", 7), b = gradcheck_case("warp", 7), c = gradcheck_case("warp", 8);
  EXPECT_EQ(a.inputs[0].value.data()[0], b.inputs[0].value.data()[0]);
  EXPECT_NE(a.inputs[0].value.data()[0], c.inputs[0].value.data()[0]);
}
