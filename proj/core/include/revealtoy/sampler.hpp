#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "revealtoy/model.hpp"

namespace revealtoy {

struct SampleOptions {
  std::size_t steps = 20;
  std::uint64_t seed = 0;
  /// All foreground crops start from one common canvas noise field.
  bool shared_noise = false;
};

/// Called once per Euler step before the update, with the current state.
using StepObserver = std::function<void(std::size_t step, double t, const Tensor& z_t, const Tensor& v_hat)>;

struct SampleResult {
  RgbaImage background;               // full canvas, RGBA
  std::vector<RgbaImage> layers;      // FG(i) crop at its box: gray RGB + alpha
  std::vector<BoundingBox> boxes;
  Tensor initial_noise;               // latent tokens at t = 1
  Tensor final_latents;               // latent tokens at t = 0, before clamping
};

/// Initial latent noise: BG from one canvas field, FG crops from independent
/// canvas fields, or from a single shared field when `shared`.
Tensor initial_noise(const TokenLayout& layout, std::uint64_t seed, bool shared);

/// Clamped decode of latent tokens into background + foreground crops.
void decode_latents(const TokenLayout& layout, const Tensor& latents, RgbaImage& background,
                    std::vector<RgbaImage>& layers);

/// Euler integration of the learned velocity from t = 1 to t = 0 on a uniform grid.
SampleResult sample_euler(const ModelParams& params, const RgbaImage& composite, std::span<const BoundingBox> boxes,
                          const SampleOptions& opts, const StepObserver& observer = {});

}  // namespace revealtoy
