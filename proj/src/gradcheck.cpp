#include "flowforge/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "flowforge/ops.hpp"
#include "flowforge/random.hpp"

namespace flowforge {

double GradCheckReport::max_rel_error() const {
  double m = 0;
  for (const auto& r : inputs) m = std::max(m, r.max_rel_error);
  return m;
}

namespace {

double projected_loss(const GradFunction& f, const std::vector<Tensor<double>>& values, const Tensor<double>* projection,
                      Tensor<double>* out_shape_probe) {
  Tape<double> tape;
  std::vector<Var<double>> leaves;
  leaves.reserve(values.size());
  for (const auto& v : values) leaves.push_back(tape.leaf(v, false));
  const Var<double> out = f(leaves);
  if (out_shape_probe) *out_shape_probe = out.value();
  const Tensor<double>& ov = out.value();
  double acc = 0;
  for (std::size_t i = 0; i < ov.size(); ++i) acc += ov[i] * (*projection)[i];
  return acc;
}

}  // namespace

GradCheckReport check_gradients(const GradFunction& f, const std::vector<GradInput>& inputs,
                                const GradCheckOptions& options) {
  Rng rng(options.seed);
  std::vector<Tensor<double>> values;
  for (const auto& in : inputs) values.push_back(in.value);

  // Analytic pass.
  Tape<double> tape;
  std::vector<Var<double>> leaves;
  for (const auto& v : values) leaves.push_back(tape.leaf(v, true));
  const Var<double> out = f(leaves);
  const Tensor<double> projection = uniform_tensor<double>(out.shape(), rng, -1.0, 1.0);
  const Var<double> loss = sum(mul(out, tape.constant(projection)));
  tape.backward(loss);

  GradCheckReport report;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor<double> analytic = tape.grad(leaves[k]);
    std::vector<std::size_t> order(values[k].size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (options.max_elements_per_input > 0 && order.size() > options.max_elements_per_input) {
      std::shuffle(order.begin(), order.end(), rng);
      order.resize(options.max_elements_per_input);
      std::sort(order.begin(), order.end());
    }

    InputGradReport r;
    r.name = inputs[k].name;
    double diff_sq = 0, ref_sq = 0;
    for (std::size_t idx : order) {
      const double orig = values[k][idx];
      values[k][idx] = orig + options.step;
      const double lp = projected_loss(f, values, &projection, nullptr);
      values[k][idx] = orig - options.step;
      const double lm = projected_loss(f, values, &projection, nullptr);
      values[k][idx] = orig;
      const double numeric = (lp - lm) / (2 * options.step);
      const double a = analytic[idx];
      diff_sq += (a - numeric) * (a - numeric);
      ref_sq += numeric * numeric;
      const double mag = std::max(std::abs(a), std::abs(numeric));
      if (mag > options.magnitude_floor) r.max_rel_error = std::max(r.max_rel_error, std::abs(a - numeric) / mag);
      ++r.checked;
    }
    r.norm_rel_error = ref_sq > 0 ? std::sqrt(diff_sq / ref_sq) : std::sqrt(diff_sq);
    report.inputs.push_back(r);
  }
  return report;
}

}  // namespace flowforge
