#include "flowforge/train.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "flowforge/ops.hpp"
#include "flowforge/parallel.hpp"

namespace flowforge {

using nlohmann::json;

// Config ----------------------------------------------------------------------

namespace {

json scene_json(const SceneConfig& s) {
  return {{"height", s.height},
          {"width", s.width},
          {"min_shapes", s.min_shapes},
          {"max_shapes", s.max_shapes},
          {"max_disp", s.max_disp},
          {"move_background", s.move_background},
          {"integer_motion", s.integer_motion},
          {"max_rotation_deg", s.max_rotation_deg},
          {"min_half_size", s.min_half_size},
          {"max_half_size", s.max_half_size},
          {"min_cell", s.min_cell},
          {"max_cell", s.max_cell}};
}

json run_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["precision"] = c.precision == Precision::f32 ? "f32" : "f64";
  j["stage1_checkpoint"] = c.stage1_checkpoint;
  j["out_dir"] = c.out_dir;
  j["model"] = json::parse(c.model.to_json());
  j["loss"] = {{"weights", c.loss.weights}, {"levels", c.loss.levels}, {"robust", c.loss.robust},
               {"q", c.loss.q},             {"eps", c.loss.eps},       {"flow_scale", c.loss.flow_scale}};
  const auto& o = c.optim;
  j["optim"] = {{"learning_rate", o.learning_rate}, {"beta1", o.beta1},
                {"beta2", o.beta2},                 {"epsilon", o.epsilon},
                {"lr_milestones", o.lr_milestones}, {"lr_gamma", o.lr_gamma},
                {"iterations", o.iterations},       {"batch_size", o.batch_size},
                {"checkpoint_every", o.checkpoint_every}};
  j["data"] = {{"scene", scene_json(c.data.scene)},
               {"augment", c.data.augment},
               {"crop_h", c.data.crop_h},
               {"crop_w", c.data.crop_w},
               {"eval_seed", c.data.eval_seed},
               {"eval_samples", c.data.eval_samples}};
  return j;
}

// Rejects keys of `given` that the default document does not have.
void check_keys(const json& given, const json& reference, const std::string& where) {
  if (!given.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, value] : given.items()) {
    if (!reference.contains(key)) throw ConfigError(where + ": unknown key '" + key + "'");
    if (reference.at(key).is_object() && key != "model") check_keys(value, reference.at(key), where + "." + key);
  }
}

template <typename V>
void get(const json& j, const char* key, V& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

}  // namespace

std::string RunConfig::to_json() const { return run_json(*this).dump(2); }

RunConfig RunConfig::from_json(const std::string& text) {
  RunConfig c;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  const json ref = run_json(c);
  check_keys(j, ref, "config");
  if (j.contains("model")) check_keys(j.at("model"), ref.at("model"), "config.model");
  try {
    get(j, "seed", c.seed);
    if (j.contains("precision")) {
      const auto p = j.at("precision").get<std::string>();
      if (p != "f32" && p != "f64") throw ConfigError("precision must be f32 or f64, got " + p);
      c.precision = p == "f32" ? Precision::f32 : Precision::f64;
    }
    get(j, "stage1_checkpoint", c.stage1_checkpoint);
    get(j, "out_dir", c.out_dir);
    if (j.contains("model")) {
      json merged = ref.at("model");
      merged.update(j.at("model"));
      c.model = ModelConfig::from_json(merged.dump());
    }
    if (j.contains("loss")) {
      const json& l = j.at("loss");
      get(l, "weights", c.loss.weights);
      get(l, "levels", c.loss.levels);
      get(l, "robust", c.loss.robust);
      get(l, "q", c.loss.q);
      get(l, "eps", c.loss.eps);
      get(l, "flow_scale", c.loss.flow_scale);
    }
    if (j.contains("optim")) {
      const json& o = j.at("optim");
      get(o, "learning_rate", c.optim.learning_rate);
      get(o, "beta1", c.optim.beta1);
      get(o, "beta2", c.optim.beta2);
      get(o, "epsilon", c.optim.epsilon);
      get(o, "lr_milestones", c.optim.lr_milestones);
      get(o, "lr_gamma", c.optim.lr_gamma);
      get(o, "iterations", c.optim.iterations);
      get(o, "batch_size", c.optim.batch_size);
      get(o, "checkpoint_every", c.optim.checkpoint_every);
    }
    if (j.contains("data")) {
      const json& d = j.at("data");
      if (d.contains("scene")) {
        const json& s = d.at("scene");
        auto& sc = c.data.scene;
        get(s, "height", sc.height);
        get(s, "width", sc.width);
        get(s, "min_shapes", sc.min_shapes);
        get(s, "max_shapes", sc.max_shapes);
        get(s, "max_disp", sc.max_disp);
        get(s, "move_background", sc.move_background);
        get(s, "integer_motion", sc.integer_motion);
        get(s, "max_rotation_deg", sc.max_rotation_deg);
        get(s, "min_half_size", sc.min_half_size);
        get(s, "max_half_size", sc.max_half_size);
        get(s, "min_cell", sc.min_cell);
        get(s, "max_cell", sc.max_cell);
      }
      get(d, "augment", c.data.augment);
      get(d, "crop_h", c.data.crop_h);
      get(d, "crop_w", c.data.crop_w);
      get(d, "eval_seed", c.data.eval_seed);
      get(d, "eval_samples", c.data.eval_samples);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config has a value of the wrong type: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

void RunConfig::validate() const {
  try {
    loss.validate();
    data.scene.validate();
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  if (loss.flow_scale != model.flow_scale)
    throw ConfigError("loss.flow_scale must equal model.flow_scale");
  if (model.stages == 2 && loss.levels.size() != static_cast<std::size_t>(kNumDecoderLevels))
    throw ConfigError("loss must supervise levels 2..6");
  for (int l : loss.levels)
    if (l < kFinestLevel || l > kCoarsestLevel) throw ConfigError("loss levels must lie in [2, 6]");
  const int h = data.augment == "none" ? data.scene.height : data.crop_h;
  const int w = data.augment == "none" ? data.scene.width : data.crop_w;
  if (h % 64 || w % 64) throw ConfigError("training images must be a multiple of 64 in each dimension");
  if (data.scene.height % 64 || data.scene.width % 64)
    throw ConfigError("evaluation scenes must be a multiple of 64 in each dimension");
  if (data.augment != "none") {
    try {
      parse_profile(data.augment);
    } catch (const DataError& e) {
      throw ConfigError(e.what());
    }
  }
  if (optim.iterations < 0 || optim.batch_size < 1 || optim.checkpoint_every < 0)
    throw ConfigError("optim: iterations >= 0, batch_size >= 1 and checkpoint_every >= 0 required");
  if (!(optim.learning_rate > 0) || !(optim.lr_gamma > 0)) throw ConfigError("optim: rates must be positive");
  if (data.eval_samples < 1) throw ConfigError("data.eval_samples must be positive");
}

double learning_rate_at(const OptimConfig& optim, int step) {
  double lr = optim.learning_rate;
  for (double m : optim.lr_milestones)
    if (step >= m * optim.iterations) lr *= optim.lr_gamma;
  return lr;
}

// Optimiser -------------------------------------------------------------------

template <typename T>
void Adam<T>::step(ParamStore<T>& store, const ParamBinding<T>& bound, const Tape<T>& tape, double lr) {
  ++t_;
  const double c1 = 1 - std::pow(config_.beta1, t_), c2 = 1 - std::pow(config_.beta2, t_);
  for (const auto& [name, var] : bound.bound()) {
    auto& e = store.entry(name);
    if (e.frozen || !var.requires_grad() || !tape.has_grad(var)) continue;
    const Tensor<T>& g = tape.grad(var);
    auto& [m, v] = moments_[name];
    if (m.empty()) {
      m.assign(g.size(), 0.0);
      v.assign(g.size(), 0.0);
    }
    auto p = e.value->data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double gi = g.data()[i];
      m[i] = config_.beta1 * m[i] + (1 - config_.beta1) * gi;
      v[i] = config_.beta2 * v[i] + (1 - config_.beta2) * gi * gi;
      p[i] = static_cast<T>(p[i] - lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.epsilon));
    }
  }
}

// Data streams ----------------------------------------------------------------

SyntheticSample training_sample(const DataConfig& data, std::uint64_t seed, std::uint64_t index) {
  const std::uint64_t s = derive_seed(derive_seed(seed, 0x7a41), index);
  SyntheticSample sample = gen_sample(s, data.scene);
  if (data.augment == "none") return sample;
  AugmentParams p = AugmentParams::profile(parse_profile(data.augment));
  p.crop_h = data.crop_h;
  p.crop_w = data.crop_w;
  Rng rng(derive_seed(s, 1));
  return augment(sample, p, rng);
}

SyntheticSample eval_sample(const DataConfig& data, int index) {
  return gen_sample(derive_seed(data.eval_seed, static_cast<std::uint64_t>(index)), data.scene);
}

std::string format_metrics(const StepMetrics& m) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "step=%d loss=%.6f aepe=%.6f fl_all=%.4f", m.step, m.loss, m.aepe, m.fl_all);
  return buf;
}

// Checkpoints -----------------------------------------------------------------

template <typename T>
ParamStore<float> to_float_store(const ParamStore<T>& store) {
  ParamStore<float> out;
  for (const auto& e : store.entries()) out.add(e.name, tensor_cast<float>(*e.value));
  return out;
}

template <typename T>
MaskFlownet<T> load_model(const std::string& path, const std::optional<ModelConfig>& expected) {
  const Checkpoint ck = load_checkpoint(path);
  ModelConfig cfg;
  try {
    cfg = ModelConfig::from_json(ck.header);
  } catch (const std::exception& e) {
    throw CheckpointError(path + ": unreadable architecture header: " + e.what());
  }
  if (expected && !(*expected == cfg))
    throw CheckpointError(path + ": architecture mismatch; checkpoint header " + cfg.to_json() +
                          " differs from config " + expected->to_json());
  MaskFlownet<T> model(cfg, 0);
  model.load(ck);
  return model;
}

namespace {

template <typename T>
void write_checkpoint(const MaskFlownet<T>& model, const std::filesystem::path& path) {
  save_checkpoint(path.string(), model.config().to_json(), to_float_store(model.params()));
}

}  // namespace

// Training --------------------------------------------------------------------

template <typename T>
TrainResult<T> train(const RunConfig& config, std::ostream* log) {
  config.validate();
  TrainResult<T> result{MaskFlownet<T>(config.model, config.seed), {}};
  MaskFlownet<T>& model = result.model;

  if (config.model.stages == 2) {
    if (config.stage1_checkpoint.empty())
      throw ConfigError("stage-2 training requires a stage-1 checkpoint (set stage1_checkpoint)");
    if (!std::filesystem::exists(config.stage1_checkpoint))
      throw ConfigError("stage-1 checkpoint '" + config.stage1_checkpoint + "' does not exist");
    const Checkpoint ck = load_checkpoint(config.stage1_checkpoint);
    ModelConfig s1 = ModelConfig::from_json(ck.header);
    s1.stages = 2;
    if (!(s1 == config.model))
      throw ConfigError("stage-1 checkpoint architecture does not match the configured model");
    model.load(ck, "s1.");
    model.params().set_frozen("s1.", true);
  }

  if (!config.out_dir.empty()) {
    std::filesystem::create_directories(config.out_dir);
    std::ofstream(std::filesystem::path(config.out_dir) / "config.json") << config.to_json() << "\n";
  }

  Adam<T> adam(config.optim);
  const int batch = config.optim.batch_size;
  for (int step = 1; step <= config.optim.iterations; ++step) {
    std::vector<SyntheticSample> samples(batch);
    parallel_for(batch, [&](int b) {
      samples[b] = training_sample(config.data, config.seed, static_cast<std::uint64_t>(step - 1) * batch + b);
    });
    const SyntheticSample s = stack_samples(samples);
    const Tensor<T> gt = tensor_cast<T>(s.flow), valid = tensor_cast<T>(s.valid);

    Tape<T> tape;
    ParamBinding<T> bind(tape, model.params());
    const auto r = model.forward(bind, tape.constant(tensor_cast<T>(s.image1)), tape.constant(tensor_cast<T>(s.image2)));
    const auto& out = r.final_stage();
    std::vector<Var<T>> preds;
    for (int l : config.loss.levels) preds.push_back(out.level(l).flow);
    const Var<T> loss = multiscale_epe<T>(preds, gt, valid, config.loss);
    tape.backward(loss);
    adam.step(model.params(), bind, tape, learning_rate_at(config.optim, step - 1));

    StepMetrics m{step, static_cast<double>(loss.value().item()), 0, 0};
    m.aepe = aepe(out.flow_full.value(), gt, valid);
    m.fl_all = fl_all(out.flow_full.value(), gt, valid);
    result.history.push_back(m);
    if (log) *log << format_metrics(m) << std::endl;

    if (!config.out_dir.empty() && config.optim.checkpoint_every > 0 && step % config.optim.checkpoint_every == 0)
      write_checkpoint(model, std::filesystem::path(config.out_dir) / ("checkpoint_" + std::to_string(step) + ".ffw"));
  }
  if (!config.out_dir.empty()) write_checkpoint(model, std::filesystem::path(config.out_dir) / "final.ffw");
  return result;
}

// Evaluation ------------------------------------------------------------------

std::string EvalReport::to_json() const {
  return json{{"samples", samples},
              {"aepe", aepe},
              {"fl_all", fl_all},
              {"zero_flow_aepe", zero_aepe},
              {"zero_flow_fl_all", zero_fl_all},
              {"mean_gt_magnitude", mean_gt_magnitude},
              {"theta_occluded", theta_occluded},
              {"theta_visible", theta_visible},
              {"theta_occluded_in_frame", theta_occluded_in_frame},
              {"mask_gap", mask_gap()}}
      .dump();
}

namespace {

struct EvalSums {
  double epe = 0, outliers = 0, zero_epe = 0, zero_outliers = 0, gt_mag = 0, valid = 0;
  double theta_occ = 0, n_occ = 0, theta_vis = 0, n_vis = 0, theta_occ_in = 0, n_occ_in = 0;
};

}  // namespace

template <typename T>
EvalReport evaluate(const MaskFlownet<T>& model, const DataConfig& data, int batch_size) {
  const int n = data.eval_samples;
  const int batches = (n + batch_size - 1) / batch_size;
  std::vector<EvalSums> sums(batches);
  parallel_for(batches, [&](int bi) {
    std::vector<SyntheticSample> samples;
    for (int i = bi * batch_size; i < std::min(n, (bi + 1) * batch_size); ++i) samples.push_back(eval_sample(data, i));
    const SyntheticSample s = stack_samples(samples);
    Tape<T> tape;
    ParamBinding<T> bind(tape, model.params(), false);
    const auto r = model.forward(bind, tape.constant(tensor_cast<T>(s.image1)), tape.constant(tensor_cast<T>(s.image2)));
    const Tensor<T>& flow = r.final_stage().flow_full.value();
    const Tensor<T>& mask = r.final_stage().mask_full.value();
    EvalSums& e = sums[bi];
    const Shape sh = s.flow.shape();
    for (int b = 0; b < sh.n; ++b)
      for (int y = 0; y < sh.h; ++y)
        for (int x = 0; x < sh.w; ++x) {
          const double theta = mask(b, 0, y, x);
          const bool valid = s.valid(b, 0, y, x) > 0.5f;
          if (s.occlusion(b, 0, y, x) > 0.5f) {
            e.theta_occ += theta;
            e.n_occ += 1;
            if (valid) {
              e.theta_occ_in += theta;
              e.n_occ_in += 1;
            }
          } else {
            e.theta_vis += theta;
            e.n_vis += 1;
          }
          if (!valid) continue;
          const double gu = s.flow(b, 0, y, x), gv = s.flow(b, 1, y, x);
          const double mag = std::hypot(gu, gv);
          const double epe = std::hypot(flow(b, 0, y, x) - gu, flow(b, 1, y, x) - gv);
          e.epe += epe;
          e.outliers += epe > 3.0 && epe > 0.05 * mag;
          e.zero_epe += mag;
          e.zero_outliers += mag > 3.0;
          e.gt_mag += mag;
          e.valid += 1;
        }
  });
  EvalSums t;
  for (const auto& e : sums) {
    t.epe += e.epe;
    t.outliers += e.outliers;
    t.zero_epe += e.zero_epe;
    t.zero_outliers += e.zero_outliers;
    t.gt_mag += e.gt_mag;
    t.valid += e.valid;
    t.theta_occ += e.theta_occ;
    t.n_occ += e.n_occ;
    t.theta_vis += e.theta_vis;
    t.n_vis += e.n_vis;
    t.theta_occ_in += e.theta_occ_in;
    t.n_occ_in += e.n_occ_in;
  }
  if (t.valid == 0) throw MetricError("evaluate: no valid pixels");
  EvalReport r;
  r.samples = n;
  r.aepe = t.epe / t.valid;
  r.fl_all = 100.0 * t.outliers / t.valid;
  r.zero_aepe = t.zero_epe / t.valid;
  r.zero_fl_all = 100.0 * t.zero_outliers / t.valid;
  r.mean_gt_magnitude = t.gt_mag / t.valid;
  r.theta_occluded = t.n_occ ? t.theta_occ / t.n_occ : 0;
  r.theta_visible = t.n_vis ? t.theta_vis / t.n_vis : 0;
  r.theta_occluded_in_frame = t.n_occ_in ? t.theta_occ_in / t.n_occ_in : 0;
  return r;
}

// Inference -------------------------------------------------------------------

namespace {

template <typename T>
Tensor<T> replicate_pad(const Tensor<float>& img, int h, int w) {
  const Shape s = img.shape();
  Tensor<T> out(Shape{s.n, s.c, h, w});
  for (int b = 0; b < s.n; ++b)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out(b, c, y, x) = img(b, c, std::min(y, s.h - 1), std::min(x, s.w - 1));
  return out;
}

template <typename T>
Tensor<float> crop(const Tensor<T>& t, int h, int w) {
  const Shape s = t.shape();
  Tensor<float> out(Shape{s.n, s.c, h, w});
  for (int b = 0; b < s.n; ++b)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out(b, c, y, x) = static_cast<float>(t(b, c, y, x));
  return out;
}

}  // namespace

template <typename T>
std::pair<Tensor<float>, Tensor<float>> infer(const MaskFlownet<T>& model, const Tensor<float>& image1,
                                              const Tensor<float>& image2) {
  const Shape s = image1.shape();
  if (s != image2.shape())
    throw ShapeError("infer: image sizes differ: " + s.str() + " vs " + image2.shape().str());
  const int h = (s.h + 63) / 64 * 64, w = (s.w + 63) / 64 * 64;
  Tape<T> tape;
  ParamBinding<T> bind(tape, model.params(), false);
  const auto r = model.forward(bind, tape.constant(replicate_pad<T>(image1, h, w)),
                               tape.constant(replicate_pad<T>(image2, h, w)));
  return {crop(r.final_stage().flow_full.value(), s.h, s.w), crop(r.final_stage().mask_full.value(), s.h, s.w)};
}

#define FLOWFORGE_INSTANTIATE_TRAIN(T)                                                                         \
  template class Adam<T>;                                                                                      \
  template TrainResult<T> train(const RunConfig&, std::ostream*);                                             \
  template EvalReport evaluate(const MaskFlownet<T>&, const DataConfig&, int);                                \
  template std::pair<Tensor<float>, Tensor<float>> infer(const MaskFlownet<T>&, const Tensor<float>&,          \
                                                         const Tensor<float>&);                                \
  template ParamStore<float> to_float_store(const ParamStore<T>&);                                            \
  template MaskFlownet<T> load_model(const std::string&, const std::optional<ModelConfig>&);

FLOWFORGE_INSTANTIATE_TRAIN(float)
FLOWFORGE_INSTANTIATE_TRAIN(double)

}  // namespace flowforge
