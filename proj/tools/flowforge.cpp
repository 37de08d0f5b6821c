// flowforge: generate data, train, evaluate, run inference and check
// gradients from the command line.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "flowforge/data.hpp"
#include "flowforge/io.hpp"
#include "flowforge/op_registry.hpp"
#include "flowforge/train.hpp"

namespace fs = std::filesystem;
using namespace flowforge;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string checkpoint;
  std::string out;
  std::string precision;
};

RunConfig load_config(const Options& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : RunConfig::load(o.config);
  if (o.seed) c.seed = *o.seed;
  if (!o.precision.empty()) c.precision = o.precision == "f64" ? Precision::f64 : Precision::f32;
  return c;
}

int cmd_init_config(const Options& o) {
  const std::string text = RunConfig{}.to_json();
  if (o.out.empty()) {
    std::cout << text << "\n";
  } else {
    std::ofstream(o.out) << text << "\n";
    std::cout << "wrote " << o.out << "\n";
  }
  return 0;
}

int cmd_train(const Options& o) {
  RunConfig c = load_config(o);
  if (!o.out.empty()) c.out_dir = o.out;
  if (!o.checkpoint.empty()) c.stage1_checkpoint = o.checkpoint;
  if (c.out_dir.empty()) throw ConfigError("train: an output directory is required (--out or out_dir)");
  fs::create_directories(c.out_dir);
  std::ofstream log(fs::path(c.out_dir) / "metrics.log");
  struct Tee : std::streambuf {
    std::streambuf *a, *b;
    Tee(std::streambuf* a, std::streambuf* b) : a(a), b(b) {}
    int overflow(int ch) override {
      if (ch == EOF) return !EOF;
      return a->sputc(static_cast<char>(ch)) == EOF || b->sputc(static_cast<char>(ch)) == EOF ? EOF : ch;
    }
    int sync() override { return a->pubsync() | b->pubsync(); }
  } tee(std::cout.rdbuf(), log.rdbuf());
  std::ostream out(&tee);

  EvalReport report;
  if (c.precision == Precision::f64) {
    report = evaluate(train<double>(c, &out).model, c.data);
  } else {
    report = evaluate(train<float>(c, &out).model, c.data);
  }
  std::ofstream(fs::path(c.out_dir) / "eval.json") << report.to_json() << "\n";
  std::cout << report.to_json() << "\n";
  return 0;
}

template <typename T>
EvalReport eval_checkpoint(const Options& o, const RunConfig& c) {
  const std::optional<ModelConfig> expected = o.config.empty() ? std::nullopt : std::optional(c.model);
  return evaluate(load_model<T>(o.checkpoint, expected), c.data);
}

int cmd_eval(const Options& o) {
  const RunConfig c = load_config(o);
  const EvalReport r =
      c.precision == Precision::f64 ? eval_checkpoint<double>(o, c) : eval_checkpoint<float>(o, c);
  std::cout << r.to_json() << "\n";
  if (!o.out.empty()) {
    fs::create_directories(o.out);
    std::ofstream(fs::path(o.out) / "eval.json") << r.to_json() << "\n";
  }
  return 0;
}

int cmd_infer(const Options& o, const std::string& image1, const std::string& image2) {
  const RunConfig c = load_config(o);
  const Tensor<float> i1 = read_png(image1), i2 = read_png(image2);
  if (i1.shape() != i2.shape())
    throw ShapeError("infer: image sizes differ: " + i1.shape().str() + " vs " + i2.shape().str());
  const auto [flow, mask] = c.precision == Precision::f64 ? infer(load_model<double>(o.checkpoint), i1, i2)
                                                           : infer(load_model<float>(o.checkpoint), i1, i2);
  const fs::path dir = o.out.empty() ? fs::path(".") : fs::path(o.out);
  fs::create_directories(dir);
  write_flo(dir / "flow.flo", flow);
  write_flow_png(dir / "flow.png", flow);
  write_mask_png(dir / "mask.png", mask);
  std::cout << "wrote " << (dir / "flow.flo").string() << ", flow.png, mask.png (" << flow.shape().w << "x"
            << flow.shape().h << ")\n";
  return 0;
}

int cmd_viz(const Options& o, const std::string& flo, double max_mag) {
  const Tensor<float> flow = read_flo(flo);
  const fs::path png = o.out.empty() ? fs::path(flo).replace_extension(".png") : fs::path(o.out);
  write_flow_png(png, flow, max_mag);
  std::cout << "wrote " << png.string() << "\n";
  return 0;
}

int cmd_gradcheck(const Options& o, const std::string& op) {
  const std::uint64_t seed = o.seed.value_or(1);
  std::vector<std::string> ops;
  if (op == "all") ops = gradcheck_ops();
  else ops.push_back(op);
  bool ok = true;
  for (const auto& name : ops) {
    const GradCheckCase c = gradcheck_case(name, seed);
    const GradCheckReport r = check_gradients(c.fn, c.inputs, c.options);
    const bool pass = r.passed(1e-3);
    ok = ok && pass;
    std::printf("%-16s %s  max_rel_err=%.3e\n", name.c_str(), pass ? "PASS" : "FAIL", r.max_rel_error());
    for (const auto& in : r.inputs)
      std::printf("    %-10s max_rel_err=%.3e  checked=%zu\n", in.name.c_str(), in.max_rel_error, in.checked);
  }
  return ok ? 0 : 1;
}

int cmd_gen_data(const Options& o, int count) {
  const RunConfig c = load_config(o);
  if (o.out.empty()) throw ConfigError("gen-data: --out is required");
  fs::create_directories(o.out);
  for (int i = 0; i < count; ++i) {
    const SyntheticSample s = training_sample(c.data, c.seed, static_cast<std::uint64_t>(i));
    char stem[32];
    std::snprintf(stem, sizeof stem, "%05d_", i);
    const fs::path p = fs::path(o.out) / stem;
    write_png(p.string() + "img1.png", s.image1);
    write_png(p.string() + "img2.png", s.image2);
    write_flo(p.string() + "flow.flo", s.flow);
    write_flow_png(p.string() + "flow.png", s.flow);
    Tensor<float> visible = s.occlusion;
    for (auto& v : visible.data()) v = 1.0f - v;
    write_mask_png(p.string() + "visible.png", visible);
    write_mask_png(p.string() + "valid.png", s.valid);
  }
  std::cout << "wrote " << count << " samples to " << o.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Occlusion-aware coarse-to-fine optical flow toolkit"};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* sub, bool config, bool checkpoint) {
    if (config) sub->add_option("--config", o.config, "Run config (JSON)")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "Random seed");
    if (checkpoint) sub->add_option("--checkpoint", o.checkpoint, "Checkpoint file");
    sub->add_option("--out", o.out, "Output path");
    sub->add_option("--precision", o.precision, "Arithmetic precision")->check(CLI::IsMember({"f32", "f64"}));
  };

  auto* init = app.add_subcommand("init-config", "Write the default run config");
  common(init, false, false);

  auto* train_cmd = app.add_subcommand("train", "Train a model");
  common(train_cmd, true, true);
  train_cmd->footer("--checkpoint names the frozen stage-1 weights for stage-2 training.");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on the held-out set");
  common(eval_cmd, true, true);
  eval_cmd->get_option("--checkpoint")->required();

  std::string image1, image2;
  auto* infer_cmd = app.add_subcommand("infer", "Estimate flow and occlusion mask for an image pair");
  common(infer_cmd, false, true);
  infer_cmd->get_option("--checkpoint")->required();
  infer_cmd->add_option("image1", image1, "First frame (PNG)")->required()->check(CLI::ExistingFile);
  infer_cmd->add_option("image2", image2, "Second frame (PNG)")->required()->check(CLI::ExistingFile);

  std::string flo;
  double max_mag = 0;
  auto* viz = app.add_subcommand("viz", "Colour-code a .flo file");
  common(viz, false, false);
  viz->add_option("flow", flo, ".flo file")->required()->check(CLI::ExistingFile);
  viz->add_option("--max-mag", max_mag, "Normalising magnitude (default: 99th percentile)");

  std::string op;
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient check of a registered op");
  common(grad, false, false);
  std::string op_help = "Op name or 'all':";
  for (const auto& n : gradcheck_ops()) op_help += " " + n;
  grad->add_option("op", op, op_help)->required();

  int count = 16;
  auto* gen = app.add_subcommand("gen-data", "Write synthetic training samples");
  common(gen, true, false);
  gen->add_option("--count", count, "Number of samples")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*init) return cmd_init_config(o);
    if (*train_cmd) return cmd_train(o);
    if (*eval_cmd) return cmd_eval(o);
    if (*infer_cmd) return cmd_infer(o, image1, image2);
    if (*viz) return cmd_viz(o, flo, max_mag);
    if (*grad) return cmd_gradcheck(o, op);
    if (*gen) return cmd_gen_data(o, count);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
