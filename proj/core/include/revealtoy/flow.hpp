#pragma once

#include <span>
#include <vector>

#include "revealtoy/autodiff.hpp"
#include "revealtoy/codec.hpp"

namespace revealtoy {

struct LossConfig {
  double tau = 0.95;
  double gamma = 1.5;
  double eps_log = 1e-6;
  double eps_cos = 1e-6;
  double lambda_alpha = 1.0;
  double lambda_orth = 1.0;

  void validate() const;
};

/// Convention: noise sits at t = 1, data at t = 0.
struct FlowState {
  Tensor z_data;
  Tensor noise;
  double t = 0.0;
  Tensor z_t;
  Tensor v_t;
};

/// z_t = t * noise + (1 - t) * data;  v_t = noise - data.
FlowState interpolate(const Tensor& z_data, const Tensor& noise, double t);

/// z_hat = z_t - t * v_hat.
Tensor clean_estimate(const Tensor& z_t, const Tensor& v_hat, double t);
Var clean_estimate(const Tensor& z_t, const Var& v_hat, double t);

/// Sum over layers of the per-layer mean squared error.
Var fm_loss(std::span<const Var> predicted, std::span<const Tensor> target);

/// Focal-style alpha loss. `predicted` and `target` hold signed alpha
/// columns ([pixels, 1]) per foreground layer.
Var alpha_loss(std::span<const Var> predicted, std::span<const Tensor> target, const LossConfig& cfg);

/// Mean over rows of cos(a_r, b_r) = a.b / (|a||b| + eps); rows where either
/// norm is below eps contribute 0.
Var mean_cosine(const Var& a, const Var& b, double eps);
double mean_cosine(const Tensor& a, const Tensor& b, double eps);

/// Orthogonality loss: sum_j |cos(bg_hat, fg_hat_j) - cos(bg, fg_j)| over box j.
/// Each entry is an RGB field [pixels, 3] restricted to the box region.
struct OrthPair {
  Var bg_pred;
  Var fg_pred;
  Tensor bg_true;
  Tensor fg_true;
};
Var orth_loss(std::span<const OrthPair> pairs, const LossConfig& cfg);

struct LossTerms {
  Var fm;
  Var alpha;
  Var orth;
  Var total;
};

/// Evaluates every training loss on one scene's latents. `v_hat` is the model
/// output for all latent tokens, `state` the matching flow state.
LossTerms flow_losses(const TokenLayout& layout, const Var& v_hat, const FlowState& state, const LossConfig& cfg);

/// Decoded clean estimate of every latent layer: [0] background canvas,
/// [i] crop of FG(i), each [h*w, 4].
std::vector<Var> decode_layers(const TokenLayout& layout, const Var& latents);

/// Orthogonality loss between decoded latents `z_hat` and ground-truth latents.
double latent_orth_loss(const TokenLayout& layout, const Tensor& z_hat, const Tensor& z_data, const LossConfig& cfg);

/// Pixel indices (row-major over the canvas) inside a box.
std::vector<std::size_t> box_pixels(const BoundingBox& box, std::size_t width);

}  // namespace revealtoy
