#include "revealtoy/sampler.hpp"

#include <algorithm>
#include <random>

#include "revealtoy/error.hpp"

namespace revealtoy {

Tensor initial_noise(const TokenLayout& layout, std::uint64_t seed, bool shared) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t G = layout.grid_cells(), C = layout.token_dim;
  auto field = [&] {
    Tensor f({G, C});
    for (double& v : f.values()) v = normal(rng);
    return f;
  };
  Tensor out({layout.latent_count(), C});
  const Tensor bg = field();
  std::copy(bg.values().begin(), bg.values().end(), out.data());
  const Tensor common = shared ? field() : Tensor();
  std::size_t row = layout.background().size();
  for (std::size_t i = 1; i <= layout.foreground_count(); ++i) {
    const Tensor own = shared ? Tensor() : field();
    const Tensor crop = crop_tokens(shared ? common : own, layout.boxes[i - 1], layout.grid_w, layout.patch);
    std::copy(crop.values().begin(), crop.values().end(), out.data() + row * C);
    row += crop.rows();
  }
  return out;
}

void decode_latents(const TokenLayout& layout, const Tensor& latents, RgbaImage& background,
                    std::vector<RgbaImage>& layers) {
  const std::size_t C = layout.token_dim, base = layout.latent_begin();
  auto segment_tokens = [&](const Segment& seg) {
    Tensor t({seg.size(), C});
    std::copy_n(latents.data() + (seg.begin - base) * C, seg.size() * C, t.data());
    for (double& v : t.values()) v = std::clamp(v, -1.0, 1.0);
    return t;
  };
  background = unpatchify(segment_tokens(layout.background()), layout.height, layout.width, layout.patch);
  layers.clear();
  for (std::size_t i = 1; i <= layout.foreground_count(); ++i) {
    const BoundingBox& b = layout.boxes[i - 1];
    layers.push_back(unpatchify(segment_tokens(layout.foreground(i)), b.h, b.w, layout.patch));
  }
}

SampleResult sample_euler(const ModelParams& params, const RgbaImage& composite, std::span<const BoundingBox> boxes,
                          const SampleOptions& opts, const StepObserver& observer) {
  const ModelConfig& cfg = params.config();
  if (composite.height() != cfg.canvas || composite.width() != cfg.canvas) {
    throw ValidationError("image", "image is " + std::to_string(composite.width()) + "x" +
                                       std::to_string(composite.height()) + " but the model expects " +
                                       std::to_string(cfg.canvas) + "x" + std::to_string(cfg.canvas));
  }
  if (opts.steps == 0) throw ValidationError("steps", "steps must be >= 1");
  NoGradGuard no_grad;
  PreparedLayout prep = prepare_layout(cfg, build_layout(cfg.canvas, cfg.canvas, cfg.patch, cfg.text_tokens, boxes));
  const Tensor cond = patchify(composite, cfg.patch);

  SampleResult result;
  result.boxes.assign(boxes.begin(), boxes.end());
  result.initial_noise = initial_noise(prep.layout, opts.seed, opts.shared_noise);
  Tensor z = result.initial_noise;
  const double n = static_cast<double>(opts.steps);
  for (std::size_t k = 0; k < opts.steps; ++k) {
    const double t = static_cast<double>(opts.steps - k) / n;
    const double t_next = static_cast<double>(opts.steps - k - 1) / n;
    const Tensor v_hat = forward(params, prep, cond, constant(z), t)->value;
    if (observer) observer(k, t, z, v_hat);
    const double dt = t - t_next;
    for (std::size_t i = 0; i < z.size(); ++i) z[i] -= dt * v_hat[i];
  }
  result.final_latents = z;
  decode_latents(prep.layout, z, result.background, result.layers);
  return result;
}

}  // namespace revealtoy
