#include "revealtoy/train.hpp"

#include <cmath>
#include <sstream>

#include "revealtoy/error.hpp"
#include "revealtoy/scene.hpp"

namespace revealtoy {

void Adam::set_moments(std::map<std::string, Tensor> m, std::map<std::string, Tensor> v) {
  m_ = std::move(m);
  v_ = std::move(v);
}

void Adam::step(ModelParams& params) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (const auto& [name, var] : params.all()) {
    if (var->grad.empty()) continue;
    Tensor& m = m_.try_emplace(name, var->value.shape()).first->second;
    Tensor& v = v_.try_emplace(name, var->value.shape()).first->second;
    const Tensor& g = var->grad;
    double* w = var->value.data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      w[i] -= cfg_.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
    }
  }
}

LossTerms evaluate_losses(const ModelParams& params, const LayeredScene& scene, const LossConfig& loss_cfg, double t,
                          const Tensor& noise) {
  const ModelConfig& cfg = params.config();
  SequenceData seq = build_sequence(scene, cfg.patch, cfg.text_tokens);
  const Tensor data = seq.stacked_latents();
  FlowState state = interpolate(data, noise, t);
  PreparedLayout prep = prepare_layout(cfg, std::move(seq.layout));
  Var v_hat = forward(params, prep, seq.cond, constant(state.z_t), t);
  return flow_losses(prep.layout, v_hat, state, loss_cfg);
}

StepMetrics train_step(ModelParams& params, Adam& opt, const LayeredScene& scene, const LossConfig& loss_cfg,
                       std::mt19937_64& rng) {
  const ModelConfig& cfg = params.config();
  const double t = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  const std::size_t rows = [&] {
    std::size_t n = cfg.canvas / cfg.patch;
    n *= n;
    for (const BoundingBox& b : scene.boxes) n += (b.w / cfg.patch) * (b.h / cfg.patch);
    return n;
  }();
  Tensor noise({rows, cfg.token_dim()});
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& v : noise.values()) v = normal(rng);

  LossTerms terms;
  try {
    terms = evaluate_losses(params, scene, loss_cfg, t, noise);
  } catch (const NumericError& e) {
    std::ostringstream os;
    os << "non-finite loss at optimizer step " << opt.steps() + 1 << " (t=" << t << "): " << e.what();
    throw NumericError(os.str());
  }
  backward(terms.total);
  opt.step(params);
  return {terms.fm->value.item(), terms.alpha->value.item(), terms.orth->value.item(), terms.total->value.item(), t};
}

void train_loop(ModelParams& params, Adam& opt, std::span<const LayeredScene> scenes, const LossConfig& loss_cfg,
                const TrainLoopOptions& opts, const StepCallback& on_step) {
  if (scenes.empty()) throw ValidationError("data", "no training scenes");
  if (opts.first_step == 0) throw ValidationError("first_step", "steps are numbered from 1");
  for (std::size_t step = opts.first_step; step <= opts.last_step; ++step) {
    std::mt19937_64 rng(derive_scene_seed(opts.seed, step));
    const std::size_t index = std::uniform_int_distribution<std::size_t>(0, scenes.size() - 1)(rng);
    const StepMetrics m = train_step(params, opt, scenes[index], loss_cfg, rng);
    if (on_step) on_step(step, index, m);
  }
}

}  // namespace revealtoy
