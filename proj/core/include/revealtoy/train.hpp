#pragma once

#include <cstdint>
#include <map>
#include <functional>
#include <random>
#include <span>
#include <string>

#include "revealtoy/flow.hpp"
#include "revealtoy/image.hpp"
#include "revealtoy/model.hpp"

namespace revealtoy {

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam over a ModelParams store. Moments are keyed by parameter name.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  /// Applies one update from the gradients currently held by `params`.
  void step(ModelParams& params);

  const AdamConfig& config() const noexcept { return cfg_; }
  AdamConfig& config() noexcept { return cfg_; }
  std::uint64_t steps() const noexcept { return t_; }
  void set_steps(std::uint64_t t) noexcept { t_ = t; }
  const std::map<std::string, Tensor>& first_moments() const noexcept { return m_; }
  const std::map<std::string, Tensor>& second_moments() const noexcept { return v_; }
  void set_moments(std::map<std::string, Tensor> m, std::map<std::string, Tensor> v);

 private:
  AdamConfig cfg_;
  std::uint64_t t_ = 0;
  std::map<std::string, Tensor> m_;
  std::map<std::string, Tensor> v_;
};

struct StepMetrics {
  double fm = 0;
  double alpha = 0;
  double orth = 0;
  double total = 0;
  double t = 0;
};

/// One flow-matching step on one scene: t ~ U(0, 1), per-token Gaussian
/// noise, total loss, one Adam update.
StepMetrics train_step(ModelParams& params, Adam& opt, const LayeredScene& scene, const LossConfig& loss_cfg,
                       std::mt19937_64& rng);

/// Loss evaluation at a fixed (t, noise) without updating anything.
LossTerms evaluate_losses(const ModelParams& params, const LayeredScene& scene, const LossConfig& loss_cfg, double t,
                          const Tensor& noise);

/// Global step `step` (1-based) draws its scene, t and noise from a generator
/// seeded by (seed, step), so a resumed run repeats an uninterrupted one.
struct TrainLoopOptions {
  std::size_t first_step = 1;
  std::size_t last_step = 0;  // inclusive
  std::uint64_t seed = 0;
};

using StepCallback = std::function<void(std::size_t step, std::size_t scene, const StepMetrics&)>;

void train_loop(ModelParams& params, Adam& opt, std::span<const LayeredScene> scenes, const LossConfig& loss_cfg,
                const TrainLoopOptions& opts, const StepCallback& on_step = {});

}  // namespace revealtoy
