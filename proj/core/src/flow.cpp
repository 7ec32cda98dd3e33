#include "revealtoy/flow.hpp"

#include <cmath>

#include "revealtoy/error.hpp"

namespace revealtoy {

void LossConfig::validate() const {
  if (!(tau > 0.0 && tau < 1.0)) throw ValidationError("tau", "tau must lie in (0, 1)");
  if (!(gamma > 0.0)) throw ValidationError("gamma", "gamma must be positive");
  if (lambda_alpha < 0.0 || lambda_orth < 0.0) throw ValidationError("lambda", "loss weights must be >= 0");
}

FlowState interpolate(const Tensor& z_data, const Tensor& noise, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw ValidationError("t", "timestep outside [0, 1]");
  if (z_data.shape() != noise.shape()) throw ShapeError("interpolate: data and noise shapes differ");
  FlowState s{z_data, noise, t, Tensor(z_data.shape()), Tensor(z_data.shape())};
  for (std::size_t i = 0; i < z_data.size(); ++i) {
    s.z_t[i] = t * noise[i] + (1.0 - t) * z_data[i];
    s.v_t[i] = noise[i] - z_data[i];
  }
  return s;
}

Tensor clean_estimate(const Tensor& z_t, const Tensor& v_hat, double t) {
  if (z_t.shape() != v_hat.shape()) throw ShapeError("clean_estimate: shape mismatch");
  Tensor out(z_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = z_t[i] - t * v_hat[i];
  return out;
}

Var clean_estimate(const Tensor& z_t, const Var& v_hat, double t) {
  return ops::sub(constant(z_t), ops::scale(v_hat, t));
}

Var fm_loss(std::span<const Var> predicted, std::span<const Tensor> target) {
  if (predicted.size() != target.size() || predicted.empty()) throw ShapeError("fm_loss: layer count mismatch");
  Var total;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    Var diff = ops::sub(predicted[i], constant(target[i]));
    Var term = ops::mean(ops::mul(diff, diff));
    total = total ? ops::add(total, term) : term;
  }
  return total;
}

Var alpha_loss(std::span<const Var> predicted, std::span<const Tensor> target, const LossConfig& cfg) {
  if (predicted.size() != target.size()) throw ShapeError("alpha_loss: layer count mismatch");
  Var total = constant(Tensor::scalar(0.0));
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    // Map to [0, 1] so that tau * |diff| stays below 1 inside the log.
    Var a_hat = ops::clamp(ops::add_scalar(ops::scale(predicted[i], 0.5), 0.5), 0.0, 1.0);
    Tensor a_gt(target[i].shape());
    for (std::size_t k = 0; k < a_gt.size(); ++k) a_gt[k] = unit_alpha(target[i][k]);
    Var delta = ops::scale(ops::abs(ops::sub(a_hat, constant(a_gt))), cfg.tau);
    Var log_term = ops::log(ops::add_scalar(ops::scale(delta, -1.0), 1.0 + cfg.eps_log));
    Var per_pixel = ops::mul(ops::pow(delta, cfg.gamma), log_term);
    total = ops::add(total, ops::scale(ops::mean(per_pixel), -1.0));
  }
  return total;
}

Var mean_cosine(const Var& a, const Var& b, double eps) {
  if (a->value.shape() != b->value.shape()) throw ShapeError("mean_cosine: shape mismatch");
  Var dot = ops::sum_cols(ops::mul(a, b));
  Var na = ops::row_norm(a);
  Var nb = ops::row_norm(b);
  Tensor keep(na->value.shape());
  for (std::size_t r = 0; r < keep.size(); ++r) keep[r] = (na->value[r] >= eps && nb->value[r] >= eps) ? 1.0 : 0.0;
  Var cos = ops::div(dot, ops::add_scalar(ops::mul(na, nb), eps));
  return ops::mean(ops::mul(cos, constant(std::move(keep))));
}

double mean_cosine(const Tensor& a, const Tensor& b, double eps) {
  NoGradGuard guard;
  return mean_cosine(constant(a), constant(b), eps)->value.item();
}

Var orth_loss(std::span<const OrthPair> pairs, const LossConfig& cfg) {
  Var total = constant(Tensor::scalar(0.0));
  for (const OrthPair& p : pairs) {
    if (p.bg_pred->value.rows() == 0) continue;
    Var sim_pred = mean_cosine(p.bg_pred, p.fg_pred, cfg.eps_cos);
    const double sim_true = mean_cosine(p.bg_true, p.fg_true, cfg.eps_cos);
    total = ops::add(total, ops::abs(ops::add_scalar(sim_pred, -sim_true)));
  }
  return total;
}

std::vector<std::size_t> box_pixels(const BoundingBox& box, std::size_t width) {
  std::vector<std::size_t> idx;
  idx.reserve(static_cast<std::size_t>(box.w * box.h));
  for (int y = box.y; y < box.bottom(); ++y)
    for (int x = box.x; x < box.right(); ++x) idx.push_back(static_cast<std::size_t>(y) * width + x);
  return idx;
}

std::vector<Var> decode_layers(const TokenLayout& layout, const Var& latents) {
  std::vector<Var> out;
  const std::size_t base = layout.latent_begin();
  for (std::size_t i = 0; i <= layout.foreground_count(); ++i) {
    const Segment& seg = layout.latent(i);
    Var tokens = ops::slice_rows(latents, seg.begin - base, seg.end - base);
    if (i == 0) {
      out.push_back(decode_tokens(tokens, layout.height, layout.width, layout.patch));
    } else {
      const BoundingBox& b = layout.boxes[i - 1];
      out.push_back(decode_tokens(tokens, b.h, b.w, layout.patch));
    }
  }
  return out;
}

namespace {

Tensor slice_tensor_rows(const Tensor& t, std::size_t begin, std::size_t end) {
  NoGradGuard guard;
  return ops::slice_rows(constant(t), begin, end)->value;
}

Tensor column(const Tensor& pixels, std::size_t begin, std::size_t end) {
  NoGradGuard guard;
  return ops::slice_cols(constant(pixels), begin, end)->value;
}

std::vector<OrthPair> orth_pairs(const TokenLayout& layout, std::span<const Var> decoded,
                                 std::span<const Var> decoded_true) {
  std::vector<OrthPair> pairs;
  for (std::size_t i = 1; i <= layout.foreground_count(); ++i) {
    const auto pix = box_pixels(layout.boxes[i - 1], layout.width);
    OrthPair p;
    p.bg_pred = ops::slice_cols(ops::gather_rows(decoded[0], pix), 0, 3);
    p.fg_pred = ops::slice_cols(decoded[i], 0, 3);
    {
      NoGradGuard guard;
      p.bg_true = ops::slice_cols(ops::gather_rows(decoded_true[0], pix), 0, 3)->value;
      p.fg_true = column(decoded_true[i]->value, 0, 3);
    }
    pairs.push_back(std::move(p));
  }
  return pairs;
}

}  // namespace

LossTerms flow_losses(const TokenLayout& layout, const Var& v_hat, const FlowState& state, const LossConfig& cfg) {
  const std::size_t base = layout.latent_begin();
  const std::size_t layers = layout.foreground_count() + 1;
  if (v_hat->value.shape() != state.z_t.shape()) throw ShapeError("flow_losses: prediction shape mismatch");

  std::vector<Var> v_layers;
  std::vector<Tensor> v_true;
  for (std::size_t i = 0; i < layers; ++i) {
    const Segment& seg = layout.latent(i);
    v_layers.push_back(ops::slice_rows(v_hat, seg.begin - base, seg.end - base));
    v_true.push_back(slice_tensor_rows(state.v_t, seg.begin - base, seg.end - base));
  }
  LossTerms terms;
  terms.fm = fm_loss(v_layers, v_true);

  Var z_hat = clean_estimate(state.z_t, v_hat, state.t);
  std::vector<Var> decoded = decode_layers(layout, z_hat);
  std::vector<Var> decoded_true;
  {
    NoGradGuard guard;
    decoded_true = decode_layers(layout, constant(state.z_data));
  }

  std::vector<Var> alpha_pred;
  std::vector<Tensor> alpha_true;
  for (std::size_t i = 1; i < layers; ++i) {
    alpha_pred.push_back(ops::slice_cols(decoded[i], 3, 4));
    alpha_true.push_back(column(decoded_true[i]->value, 3, 4));
  }
  const std::vector<OrthPair> pairs = orth_pairs(layout, decoded, decoded_true);
  terms.alpha = alpha_loss(alpha_pred, alpha_true, cfg);
  terms.orth = orth_loss(pairs, cfg);
  terms.total = ops::add(ops::add(terms.fm, ops::scale(terms.alpha, cfg.lambda_alpha)),
                         ops::scale(terms.orth, cfg.lambda_orth));
  return terms;
}

double latent_orth_loss(const TokenLayout& layout, const Tensor& z_hat, const Tensor& z_data, const LossConfig& cfg) {
  NoGradGuard guard;
  const std::vector<Var> decoded = decode_layers(layout, constant(z_hat));
  const std::vector<Var> decoded_true = decode_layers(layout, constant(z_data));
  return orth_loss(orth_pairs(layout, decoded, decoded_true), cfg)->value.item();
}

}  // namespace revealtoy
